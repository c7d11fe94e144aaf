"""Location label -> coordinate resolution.

Lookup order is cache, then the offline gazetteer, then an optional remote
callback. Remote hits are written to the cache; remote misses are remembered
on the cache object for the rest of the process so the callback is asked at
most once per normalized name.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import threading
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

from .errors import DataError, MissingColumn, OutOfRange, RemoteFailure, UnknownLocation

Resolver = Callable[[str], Optional["GeoPoint"]]


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lng: float

    def __post_init__(self):
        lat, lng = float(self.lat), float(self.lng)
        if not (math.isfinite(lat) and math.isfinite(lng)):
            raise OutOfRange(f"non-finite coordinate ({lat}, {lng})")
        if not -90.0 <= lat <= 90.0:
            raise OutOfRange(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lng <= 180.0:
            raise OutOfRange(f"longitude {lng} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lng", lng)


@dataclass(eq=False)
class GeocodeTable:
    entries: dict[str, GeoPoint] = field(default_factory=dict)
    source_label: str = ""
    misses: set[str] = field(default_factory=set, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return normalize_location(name) in self.entries

    def __eq__(self, other) -> bool:
        if not isinstance(other, GeocodeTable):
            return NotImplemented
        return self.entries == other.entries and self.source_label == other.source_label

    def get(self, name: str) -> GeoPoint | None:
        return self.entries.get(normalize_location(name))

    def add(self, name: str, point: GeoPoint) -> GeoPoint:
        """Insert unless present; existing entries are never replaced."""
        with self._lock:
            return self.entries.setdefault(normalize_location(name), point)


_WS = re.compile(r"\s+")


def normalize_location(name: str) -> str:
    return _WS.sub(" ", (name or "").strip().lower())


def load_geocode_table(source, source_label: str = "") -> GeocodeTable:
    if isinstance(source, (bytes, bytearray)):
        text = io.StringIO(bytes(source).decode("utf-8-sig"), newline="")
    elif isinstance(source, io.TextIOBase):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8-sig", newline="")
    reader = csv.DictReader(text)
    fields = [f.strip() for f in (reader.fieldnames or [])]
    absent = [c for c in ("location", "lat", "lng") if c not in fields]
    if absent:
        raise MissingColumn(f"geocode table lacks columns {absent}")
    reader.fieldnames = fields
    entries: dict[str, GeoPoint] = {}
    for rowno, row in enumerate(reader, 1):
        try:
            lat, lng = float(row["lat"]), float(row["lng"])
        except (TypeError, ValueError):
            raise DataError(f"geocode row {rowno}: lat/lng not numeric") from None
        entries[normalize_location(row["location"])] = GeoPoint(lat, lng)
    return GeocodeTable(entries, source_label)


def default_gazetteer() -> GeocodeTable:
    """The shipped offline table of Accra-area and major Ghanaian localities."""
    data = resources.files("ghrent").joinpath("data/gazetteer.csv").read_bytes()
    return load_geocode_table(data, source_label="builtin")


def save_geocode_table(table: GeocodeTable, sink) -> None:
    """Write ``location,lat,lng`` rows sorted by key (deterministic)."""
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["location", "lat", "lng"])
    for key in sorted(table.entries):
        p = table.entries[key]
        writer.writerow([key, repr(p.lat), repr(p.lng)])
    data = out.getvalue()
    if isinstance(sink, io.TextIOBase):
        sink.write(data)
    else:
        sink.write(data.encode("utf-8"))


def resolve_location(
    name: str,
    table: GeocodeTable,
    remote: Resolver | None = None,
    cache: GeocodeTable | None = None,
) -> GeoPoint:
    key = normalize_location(name)
    if not key:
        raise DataError("location name is empty")
    if cache is not None and key in cache.entries:
        return cache.entries[key]
    hit = table.entries.get(key)
    if hit is not None:
        return hit
    if remote is None:
        raise UnknownLocation(f"unknown location {name!r}")
    memo = cache if cache is not None else table
    if key in memo.misses:
        raise UnknownLocation(f"unknown location {name!r} (remote miss)")
    try:
        point = remote(key)
    except Exception as exc:
        raise RemoteFailure(f"remote geocoder failed for {name!r}: {exc}") from exc
    if point is None:
        with memo._lock:
            memo.misses.add(key)
        raise UnknownLocation(f"unknown location {name!r} (remote miss)")
    if cache is not None:
        point = cache.add(key, point)
    return point


def http_resolver(url: str | None = None, key: str | None = None, timeout: float = 10.0) -> Resolver:
    """Remote resolver speaking the Google-geocoding JSON response shape.

    Reads ``GEOCODER_URL`` / ``GEOCODER_KEY`` from the environment when the
    arguments are omitted.
    """
    url = url or os.environ.get("GEOCODER_URL")
    key = key or os.environ.get("GEOCODER_KEY")
    if not url:
        raise DataError("GEOCODER_URL is not set")

    def resolve(name: str) -> GeoPoint | None:
        query = {"address": f"{name}, Ghana"}
        if key:
            query["key"] = key
        with urllib.request.urlopen(f"{url}?{urllib.parse.urlencode(query)}", timeout=timeout) as resp:
            body = json.load(resp)
        results = body.get("results") or []
        if not results:
            return None
        loc = results[0]["geometry"]["location"]
        return GeoPoint(loc["lat"], loc["lng"])

    return resolve
