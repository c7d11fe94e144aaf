"""Run configuration: one TOML file per run, validated in full before any work."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigError, ConfigInvalid
from .evaluate import DEFAULT_K, SearchSpace
from .features import FeatureConfig
from .ingest import REQUIRED_SCHEMA_ROLES, ROLES
from .models import KINDS, REPORTED_KINDS, parameter_problems

_TOP_KEYS = {"seed", "k", "jobs", "paths", "schema", "ingest", "features", "models", "search", "diagnostics"}
_PATH_KEYS = {"input", "gazetteer", "cache", "out"}
_INGEST_KEYS = {"regroup", "required", "histogram_bins"}
_FEATURE_KEYS = {
    "one_hot_roles", "amenity_top_k", "outlier_k", "split_ratio", "unknown_location_policy", "drop_outliers",
}
_DIAG_KEYS = {"residual_bins", "permutation_repeats", "importance_model", "raw_scale"}


@dataclass(frozen=True)
class SearchBlock:
    space: SearchSpace
    n_iter: int = 1


@dataclass(frozen=True)
class RunConfig:
    source: Path | None
    seed: int
    k: int = DEFAULT_K
    jobs: int = 1
    input_path: Path | None = None
    gazetteer_path: Path | None = None
    cache_path: Path | None = None
    out_dir: Path = Path("out")
    schema: dict[str, str] = field(default_factory=dict)
    regroup: dict[str, str] = field(default_factory=dict)
    required: tuple[str, ...] = ("price", "location")
    histogram_bins: int = 30
    features: FeatureConfig = field(default_factory=FeatureConfig)
    drop_outliers: bool = True
    models: dict[str, dict[str, Any]] = field(default_factory=dict)
    search: dict[str, SearchBlock] = field(default_factory=dict)
    residual_bins: int = 30
    permutation_repeats: int = 3
    importance_model: str = "cat"
    raw_scale_residuals: bool = False
    document: dict = field(default_factory=dict, compare=False)

    def model_params(self, kind: str) -> dict[str, Any]:
        return dict(self.models.get(kind, {}))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _table(doc, key, problems) -> dict:
    v = doc.get(key, {})
    if not isinstance(v, dict):
        problems.append(f"[{key}] must be a table")
        return {}
    return v


def _unknown(section: str, table: dict, allowed: set, problems: list) -> None:
    for k in sorted(set(table) - allowed):
        problems.append(f"{section}: unknown key {k!r}")


def parse_config(doc: dict, base_dir: Path | None = None, source: Path | None = None,
                 check_paths: bool = True) -> RunConfig:
    """Cross-check a parsed TOML document; every violation is collected."""
    problems: list[str] = []
    base = base_dir or Path(".")
    _unknown("top level", doc, _TOP_KEYS, problems)

    seed = doc.get("seed")
    if seed is None:
        problems.append("seed: required (runs are never seeded from the clock)")
    elif not _is_int(seed) or seed < 0:
        problems.append(f"seed: must be a non-negative integer, got {seed!r}")
    k = doc.get("k", DEFAULT_K)
    if not _is_int(k) or k < 2:
        problems.append(f"k: must be an integer >= 2, got {k!r}")
    jobs = doc.get("jobs", 1)
    if not _is_int(jobs) or jobs < 1:
        problems.append(f"jobs: must be an integer >= 1, got {jobs!r}")

    paths = _table(doc, "paths", problems)
    _unknown("[paths]", paths, _PATH_KEYS, problems)

    def path(key, must_exist):
        v = paths.get(key)
        if v in (None, ""):
            return None
        if not isinstance(v, str):
            problems.append(f"paths.{key}: must be a string")
            return None
        p = Path(v)
        p = p if p.is_absolute() else base / p
        if must_exist and check_paths and not p.exists():
            problems.append(f"paths.{key}: {p} does not exist")
        return p

    input_path = path("input", True)
    gazetteer_path = path("gazetteer", True)
    cache_path = path("cache", False)
    out_dir = path("out", False) or base / "out"

    schema = _table(doc, "schema", problems)
    _unknown("[schema]", schema, set(ROLES), problems)
    for role in REQUIRED_SCHEMA_ROLES:
        if role not in schema:
            problems.append(f"schema.{role}: required role is not mapped to a column")
    for role, col in schema.items():
        if not isinstance(col, str) or not col:
            problems.append(f"schema.{role}: column name must be a non-empty string")

    ingest = _table(doc, "ingest", problems)
    _unknown("[ingest]", ingest, _INGEST_KEYS, problems)
    regroup = ingest.get("regroup", {})
    if not isinstance(regroup, dict) or not all(isinstance(v, str) for v in regroup.values()):
        problems.append("ingest.regroup: must map category names to category names")
        regroup = {}
    required = ingest.get("required", ["price", "location"])
    if not isinstance(required, list) or any(r not in ROLES for r in required):
        problems.append(f"ingest.required: roles must be drawn from {ROLES}")
        required = ["price", "location"]
    bins = ingest.get("histogram_bins", 30)
    if not _is_int(bins) or bins < 1:
        problems.append("ingest.histogram_bins: must be an integer >= 1")

    feats = _table(doc, "features", problems)
    _unknown("[features]", feats, _FEATURE_KEYS, problems)
    drop_outliers = feats.get("drop_outliers", True)
    if not isinstance(drop_outliers, bool):
        problems.append("features.drop_outliers: must be true or false")
    fc_kwargs = {k: v for k, v in feats.items() if k != "drop_outliers"}
    if "one_hot_roles" in fc_kwargs:
        fc_kwargs["one_hot_roles"] = tuple(fc_kwargs["one_hot_roles"])
    fc_kwargs["split_seed"] = seed if _is_int(seed) and seed >= 0 else 0
    fc = None
    try:
        fc = FeatureConfig(**{k: v for k, v in fc_kwargs.items() if k in FeatureConfig.__dataclass_fields__})
    except (TypeError, ValueError) as exc:  # the constructor reports every field problem at once
        problems.extend(f"features: {m}" for m in str(exc).split("; "))

    models = _table(doc, "models", problems)
    _unknown("[models]", models, set(KINDS), problems)
    for kind, params in models.items():
        if not isinstance(params, dict):
            problems.append(f"models.{kind}: must be a table")
            continue
        problems.extend(f"models.{kind}: {m}" for m in parameter_problems(kind, params))

    searches: dict[str, SearchBlock] = {}
    for kind, block in _table(doc, "search", problems).items():
        if kind not in KINDS or not isinstance(block, dict):
            problems.append(f"search.{kind}: unknown model kind or not a table")
            continue
        mode = block.get("mode", "grid")
        n_iter = block.get("n_iter", 10)
        params = block.get("params", {})
        _unknown(f"[search.{kind}]", block, {"mode", "n_iter", "params"}, problems)
        if not _is_int(n_iter) or n_iter < 1:
            problems.append(f"search.{kind}.n_iter: must be an integer >= 1")
            n_iter = 1
        try:
            searches[kind] = SearchBlock(SearchSpace(kind, mode, params), n_iter)
        except ConfigError as exc:  # EmptySpace is a ConfigError too
            problems.append(f"search.{kind}: {exc}")

    diag = _table(doc, "diagnostics", problems)
    _unknown("[diagnostics]", diag, _DIAG_KEYS, problems)
    res_bins = diag.get("residual_bins", 30)
    repeats = diag.get("permutation_repeats", 3)
    imp_model = diag.get("importance_model", "cat")
    raw_scale = diag.get("raw_scale", False)
    if not _is_int(res_bins) or res_bins < 1:
        problems.append("diagnostics.residual_bins: must be an integer >= 1")
    if not _is_int(repeats) or repeats < 1:
        problems.append("diagnostics.permutation_repeats: must be an integer >= 1")
    if imp_model not in REPORTED_KINDS:
        problems.append(f"diagnostics.importance_model: must be one of {REPORTED_KINDS}")
    if not isinstance(raw_scale, bool):
        problems.append("diagnostics.raw_scale: must be true or false")

    if problems:
        raise ConfigInvalid(problems)
    return RunConfig(
        source=source, seed=seed, k=k, jobs=jobs, input_path=input_path, gazetteer_path=gazetteer_path,
        cache_path=cache_path, out_dir=out_dir, schema=dict(schema), regroup=dict(regroup),
        required=tuple(required), histogram_bins=bins, features=fc, drop_outliers=drop_outliers,
        models={k: dict(v) for k, v in models.items()}, search=searches, residual_bins=res_bins,
        permutation_repeats=repeats, importance_model=imp_model, raw_scale_residuals=raw_scale, document=doc,
    )


def validate_config(path, check_paths: bool = True, overrides: dict | None = None) -> RunConfig:
    """Read and fully validate a run config; raises ConfigInvalid listing every problem.

    ``overrides`` holds flag values that replace config entries: ``seed`` and
    ``jobs`` at top level, ``out`` under ``[paths]``.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid([f"cannot read config {p}: {exc}"]) from exc
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigInvalid([f"not valid TOML: {exc}"]) from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "out":
            doc.setdefault("paths", {})["out"] = str(Path(value).resolve())
        else:
            doc[key] = value
    return parse_config(doc, p.parent, p, check_paths)
