"""Versioned JSON envelopes for trained models and fitted encoders.

Envelope layout::

    {"created_at": "...", "format_version": 1, "kind": "forest",
     "payload": {...}, "training_fingerprint": "..."}

Keys are sorted and floats are written in Python's shortest round-trip
form, so saving is a pure function of the model (given ``created_at``) and
loading reproduces every array bit for bit. Order-carrying mappings (category
levels, medians, category statistics) are stored as lists of pairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from datetime import datetime, timezone
from typing import IO, Any

import numpy as np

from .boost import BoostParams, CatEncoding, GbdtModel
from .errors import CorruptPayload, IoFailure, NonFiniteInput, UnknownVersion
from .features import FittedEncoder
from .forest import ForestModel, ForestParams
from .linear import LinearModel
from .svr import SvrModel
from .tree import RegressionTree, TreeParams

FORMAT_VERSION = 1
KINDS = ("linear", "forest", "gbdt", "svr", "encoder")
EXTENSION = ".model.json"

_TREE_INT = ("feature", "left", "right")
_TREE_FLOAT = ("threshold", "value", "gain", "weight")


def model_kind(model) -> str:
    for cls, kind in ((LinearModel, "linear"), (ForestModel, "forest"), (GbdtModel, "gbdt"),
                      (SvrModel, "svr"), (FittedEncoder, "encoder")):
        if isinstance(model, cls):
            return kind
    raise TypeError(f"cannot persist {type(model).__name__}")


def training_fingerprint(config: Any, data: bytes, seed: int) -> str:
    """sha256 over the canonical config document, the data digest and the seed."""
    h = hashlib.sha256()
    h.update(json.dumps(config, sort_keys=True, default=str).encode())
    h.update(hashlib.sha256(data).digest())
    h.update(str(int(seed)).encode())
    return h.hexdigest()


# ------------------------------------------------------------ to payload


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _tree_doc(t: RegressionTree) -> dict:
    doc = {k: [int(v) for v in getattr(t, k)] for k in _TREE_INT}
    doc.update({k: _floats(getattr(t, k)) for k in _TREE_FLOAT})
    doc["n_features"] = int(t.n_features)
    return doc


def _payload(model, kind: str) -> dict:
    if kind == "linear":
        return {"coefficients": _floats(model.coefficients), "intercept": float(model.intercept),
                "fitted_intercept": bool(model.fitted_intercept)}
    if kind == "svr":
        X = np.asarray(model.support_vectors, dtype=float)
        return {
            "support_vectors": [_floats(r) for r in X], "n_features": int(model.n_features),
            "dual_coefs": _floats(model.dual_coefs), "bias": float(model.bias), "kernel": model.kernel,
            "gamma": float(model.gamma), "x_mean": _floats(model.x_mean), "x_scale": _floats(model.x_scale),
            "support_indices": [int(i) for i in model.support_indices],
        }
    if kind == "forest":
        return {"params": asdict(model.params), "trees": [_tree_doc(t) for t in model.trees]}
    if kind == "gbdt":
        return {
            "base_score": float(model.base_score), "params": asdict(model.params),
            "n_features": int(model.n_features), "trees": [_tree_doc(t) for t in model.trees],
            "cat_encoders": [
                {"column": e.column, "prior": float(e.prior), "stats": [[float(k), float(v)] for k, v in e.stats.items()]}
                for e in model.cat_encoders
            ],
        }
    return {
        "category_levels": [[role, list(levels)] for role, levels in model.category_levels.items()],
        "amenity_vocab": list(model.amenity_vocab),
        "outlier_fences": _floats(model.outlier_fences),
        "numeric_medians": [[k, float(v)] for k, v in model.numeric_medians.items()],
        "unknown_location_policy": model.unknown_location_policy,
        "target_transform": model.target_transform,
    }


def dumps_model(model, created_at: str | None = None, fingerprint: str = "") -> bytes:
    kind = model_kind(model)
    if created_at is None:
        created_at = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    doc = {
        "format_version": FORMAT_VERSION, "kind": kind, "created_at": created_at,
        "training_fingerprint": fingerprint, "payload": _payload(model, kind),
    }
    try:
        text = json.dumps(doc, sort_keys=True, allow_nan=False, separators=(",", ":"))
    except ValueError as exc:
        raise NonFiniteInput(f"{kind} model holds non-finite values") from exc
    return (text + "\n").encode()


def save_model(model, sink: IO[bytes], created_at: str | None = None, fingerprint: str = "") -> None:
    data = dumps_model(model, created_at, fingerprint)
    try:
        sink.write(data)
        sink.flush()
    except OSError as exc:
        raise IoFailure(f"could not write model: {exc}") from exc


# ---------------------------------------------------------- from payload


def _arr(v, dtype) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(v, dtype=dtype))


def _tree(doc) -> RegressionTree:
    parts = {k: _arr(doc[k], np.int64) for k in _TREE_INT}
    parts.update({k: _arr(doc[k], float) for k in _TREE_FLOAT})
    n = {a.shape for a in parts.values()}
    if len(n) != 1 or len(next(iter(n))) != 1:
        raise CorruptPayload("tree arrays differ in length")
    return RegressionTree(**parts, n_features=int(doc["n_features"]))


def _forest_params(doc) -> ForestParams:
    doc = dict(doc)
    tree = TreeParams(**doc.pop("tree"))
    return ForestParams(tree=tree, **doc)


def _rebuild(kind: str, p: dict):
    if kind == "linear":
        return LinearModel(_arr(p["coefficients"], float), float(p["intercept"]), bool(p["fitted_intercept"]))
    if kind == "svr":
        d = int(p["n_features"])
        return SvrModel(
            support_vectors=_arr(p["support_vectors"], float).reshape(-1, d), dual_coefs=_arr(p["dual_coefs"], float),
            bias=float(p["bias"]), kernel=p["kernel"], gamma=float(p["gamma"]),
            x_mean=_arr(p["x_mean"], float), x_scale=_arr(p["x_scale"], float),
            support_indices=_arr(p["support_indices"], np.int64),
        )
    if kind == "forest":
        return ForestModel(tuple(_tree(t) for t in p["trees"]), _forest_params(p["params"]))
    if kind == "gbdt":
        encoders = tuple(
            CatEncoding(int(e["column"]), float(e["prior"]), {float(k): float(v) for k, v in e["stats"]})
            for e in p["cat_encoders"]
        )
        return GbdtModel(float(p["base_score"]), tuple(_tree(t) for t in p["trees"]), BoostParams(**p["params"]),
                         int(p["n_features"]), encoders)
    return FittedEncoder(
        category_levels={role: tuple(levels) for role, levels in p["category_levels"]},
        amenity_vocab=tuple(p["amenity_vocab"]),
        outlier_fences=tuple(float(v) for v in p["outlier_fences"]),
        numeric_medians={k: float(v) for k, v in p["numeric_medians"]},
        unknown_location_policy=p["unknown_location_policy"],
        target_transform=p["target_transform"],
    )


def loads_model(data: bytes | str):
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptPayload(f"not a JSON envelope: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptPayload("envelope lacks format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise UnknownVersion(f"unsupported format_version {doc['format_version']!r}")
    kind = doc.get("kind")
    if kind not in KINDS or not isinstance(doc.get("payload"), dict):
        raise CorruptPayload(f"unknown kind {kind!r} or missing payload")
    try:
        return _rebuild(kind, doc["payload"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptPayload(f"{kind} payload does not match its schema: {exc}") from exc


def load_model(source: IO[bytes]):
    try:
        data = source.read()
    except OSError as exc:
        raise IoFailure(f"could not read model: {exc}") from exc
    return loads_model(data)


def envelope_fields(data: bytes | str) -> dict:
    """The envelope minus its payload (for inspection and tests)."""
    doc = json.loads(data)
    return {k: v for k, v in doc.items() if k != "payload"}
