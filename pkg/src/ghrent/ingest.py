"""Listing CSV ingestion, cleaning and dataset summaries."""

from __future__ import annotations

import csv
import io
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Mapping

from ._stats import Histogram, five_number, histogram
from .errors import AllRowsDropped, DataError, EmptyInput, EmptyTable, MissingColumn, RaggedRow

ROLES = (
    "id",
    "price",
    "location",
    "listing_category",
    "bedrooms",
    "bathrooms",
    "furnishing",
    "condition",
    "house_type",
    "amenities",
)
REQUIRED_SCHEMA_ROLES = ("price", "location")
FURNISHING = ("furnished", "semi_furnished", "unfurnished")

_FURNISH_ALIASES = {
    "furnished": "furnished",
    "fully furnished": "furnished",
    "semi furnished": "semi_furnished",
    "semi-furnished": "semi_furnished",
    "semi_furnished": "semi_furnished",
    "semifurnished": "semi_furnished",
    "unfurnished": "unfurnished",
    "not furnished": "unfurnished",
}


@dataclass(frozen=True)
class ListingRecord:
    id: str
    price: float | None = None
    location: str | None = None
    listing_category: str | None = None
    bedrooms: int | None = None
    bathrooms: int | None = None
    furnishing: str | None = None
    condition: str | None = None
    house_type: str | None = None
    amenities: str = ""
    extra: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.price is not None and not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError(f"price must be positive and finite, got {self.price!r}")
        if self.furnishing is not None and self.furnishing not in FURNISHING:
            raise ValueError(f"unknown furnishing {self.furnishing!r}")

    def get(self, role: str):
        return getattr(self, role)

    def is_missing(self, role: str) -> bool:
        value = getattr(self, role)
        if value is None:
            return True
        return isinstance(value, str) and not value.strip()


@dataclass(frozen=True)
class ListingTable:
    records: tuple[ListingRecord, ...]
    column_names: tuple[str, ...]
    roles: Mapping[str, str] = field(default_factory=dict)  # role -> column name

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def prices(self) -> list[float | None]:
        return [r.price for r in self.records]

    def take(self, indices: Iterable[int]) -> "ListingTable":
        return replace(self, records=tuple(self.records[i] for i in indices))


@dataclass(frozen=True)
class DatasetSummary:
    n_records: int
    price_histogram: Histogram
    location_counts: dict[str, int]
    amenity_counts: dict[str, int]
    price_by_location: dict[str, tuple[float, float, float, float, float]]


def parse_schema(text: str) -> dict[str, str]:
    """Parse ``role = column name`` lines; ``#`` starts a comment."""
    schema: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"schema line {lineno}: expected 'role = column', got {raw!r}")
        role, column = (s.strip() for s in line.split("=", 1))
        if role not in ROLES:
            raise DataError(f"schema line {lineno}: unknown role {role!r}")
        schema[role] = column.strip("\"'")
    return schema


def _as_text(source) -> IO[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig"), newline="")
    if isinstance(source, str):
        return io.StringIO(source, newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline="")


_NUM_JUNK = re.compile(r"[,\s]|GH[S₵¢C]?|₵", re.IGNORECASE)


def _parse_float(text: str) -> float | None:
    cleaned = _NUM_JUNK.sub("", text or "")
    try:
        value = float(cleaned)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _parse_price(text: str) -> float | None:
    value = _parse_float(text)
    return value if value is not None and value > 0 else None


def _parse_count(text: str) -> int | None:
    value = _parse_float(text)
    if value is None or value < 0 or value != int(value):
        return None
    return int(value)


def _parse_furnishing(text: str) -> str | None:
    key = re.sub(r"\s+", " ", (text or "").strip().lower())
    return _FURNISH_ALIASES.get(key)


def _parse_label(text: str) -> str | None:
    text = (text or "").strip()
    return text or None


_PARSERS = {
    "price": _parse_price,
    "bedrooms": _parse_count,
    "bathrooms": _parse_count,
    "furnishing": _parse_furnishing,
    "location": _parse_label,
    "listing_category": _parse_label,
    "condition": _parse_label,
    "house_type": _parse_label,
}


def parse_listings(
    source, schema: Mapping[str, str], required_roles: Iterable[str] = REQUIRED_SCHEMA_ROLES
) -> ListingTable:
    """Read a listing export into a :class:`ListingTable`.

    ``schema`` maps roles (see :data:`ROLES`) to header names. Numbers that
    do not parse become missing; field counts that disagree with the header
    raise :class:`RaggedRow`. ``required_roles`` must be mapped (new listings
    scored by ``predict`` carry no price).
    """
    for role in schema:
        if role not in ROLES:
            raise DataError(f"unknown schema role {role!r}")
    reader = csv.reader(_as_text(source))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInput("CSV source has no header row") from None
    header = [h.strip() for h in header]
    missing = [f"{role}->{col!r}" for role, col in schema.items() if col not in header]
    missing += [f"{role} (unmapped)" for role in required_roles if role not in schema]
    if missing:
        raise MissingColumn("schema columns absent from header: " + ", ".join(missing))

    position = {name: i for i, name in enumerate(header)}
    role_cols = {role: position[col] for role, col in schema.items()}
    mapped = set(role_cols.values())
    extra_cols = [(name, i) for i, name in enumerate(header) if i not in mapped]

    records = []
    for rowno, row in enumerate(reader, 1):
        if not row:
            continue
        if len(row) != len(header):
            raise RaggedRow(f"data row {rowno} has {len(row)} fields, header has {len(header)}")
        kw = {}
        for role, i in role_cols.items():
            if role == "id":
                kw["id"] = row[i]
            elif role == "amenities":
                kw["amenities"] = row[i]
            else:
                kw[role] = _PARSERS[role](row[i])
        kw.setdefault("id", str(rowno - 1))
        kw["extra"] = {name: row[i] for name, i in extra_cols}
        records.append(ListingRecord(**kw))
    return ListingTable(tuple(records), tuple(header), dict(schema))


def _format(role: str, value) -> str:
    if value is None:
        return ""
    if role == "price":
        return repr(float(value))
    return str(value)


def serialize_listings(table: ListingTable) -> str:
    """Write a table back to CSV using its own header and role map."""
    by_column = {col: role for role, col in table.roles.items()}
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.column_names)
    for rec in table.records:
        row = []
        for col in table.column_names:
            role = by_column.get(col)
            row.append(_format(role, rec.get(role)) if role else rec.extra.get(col, ""))
        writer.writerow(row)
    return out.getvalue()


def clean_listings(
    table: ListingTable,
    regroup: Mapping[str, str] | None = None,
    required: Iterable[str] = ("price", "location"),
) -> ListingTable:
    """Drop rows missing any ``required`` role and relabel listing categories.

    Chained regroup maps (a target that is itself a key) are rejected, which
    keeps the operation idempotent.
    """
    regroup = dict(regroup or {})
    required = list(required)
    for role in required:
        if role not in ROLES:
            raise DataError(f"unknown required role {role!r}")
    chained = sorted(t for k, t in regroup.items() if t in regroup and regroup[t] != t)
    if chained:
        raise DataError(f"regroup targets must not be regroup keys: {chained}")

    kept = []
    for rec in table.records:
        if any(rec.is_missing(role) for role in required):
            continue
        if rec.listing_category in regroup:
            rec = replace(rec, listing_category=regroup[rec.listing_category])
        kept.append(rec)
    if table.records and not kept:
        raise AllRowsDropped(f"cleaning removed all {len(table)} rows (required={required})")
    return replace(table, records=tuple(kept))


def amenity_tokens(text: str) -> list[str]:
    """Split on commas, trim, lowercase; empty tokens dropped, duplicates kept once."""
    seen = []
    for tok in (text or "").split(","):
        tok = tok.strip().lower()
        if tok and tok not in seen:
            seen.append(tok)
    return seen


def _sorted_counts(counter: Counter) -> dict[str, int]:
    return dict(sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])))


def summarize_listings(table: ListingTable, bins: int = 30) -> DatasetSummary:
    if not table.records:
        raise EmptyTable("cannot summarize an empty table")
    prices = table.prices()
    if any(p is None for p in prices):
        raise DataError("summarize_listings requires every price to be present; clean first")

    locations = Counter(rec.location or "" for rec in table.records)
    amenities: Counter = Counter()
    by_loc: dict[str, list[float]] = {}
    for rec in table.records:
        amenities.update(amenity_tokens(rec.amenities))
        by_loc.setdefault(rec.location or "", []).append(rec.price)

    location_counts = _sorted_counts(locations)
    return DatasetSummary(
        n_records=len(table),
        price_histogram=histogram(prices, bins),
        location_counts=location_counts,
        amenity_counts=_sorted_counts(amenities),
        price_by_location={loc: five_number(by_loc[loc]) for loc in location_counts},
    )
