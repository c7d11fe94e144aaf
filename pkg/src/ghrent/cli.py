"""Command-line pipeline: ingest, featurize, tune, train, evaluate, diagnose, predict.

Every stage reads the run config plus whatever earlier stages left in the
output directory, and writes its artifacts through a single :class:`Writer`.
Progress and timings go to standard error only, so the output directory is a
pure function of the config, the input data and the seed (model envelopes
carry a ``created_at`` stamp, fixed by ``SOURCE_DATE_EPOCH`` when set).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._csvio import csv_text
from ._rng import derive_seed
from .config import RunConfig, validate_config
from .diagnostics import (
    compute_residuals,
    gain_importance,
    histogram_csv,
    permutation_importance,
    prediction_error_summary,
    residual_histogram,
    residuals_csv,
)
from .errors import (
    ConfigError,
    DataError,
    GhrentError,
    IoFailure,
    MissingGeo,
    ModelError,
    UnknownLocation,
)
from .evaluate import compute_metrics, cross_validate, grid_search, random_search, search_summary_json, trials_csv
from .features import TargetVector, encode_rows, fit_encoder, split_indices, transform, transform_target
from .geocode import GeocodeTable, default_gazetteer, http_resolver, load_geocode_table, resolve_location, save_geocode_table
from .ingest import clean_listings, parse_listings, serialize_listings, summarize_listings
from .models import REPORTED_KINDS, ModelSpec, fit_model, predict_model
from .persist import dumps_model, loads_model, training_fingerprint

SUBCOMMANDS = ("ingest", "featurize", "train", "tune", "evaluate", "diagnose", "predict", "all")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL, EXIT_IO = 0, 2, 3, 4, 5

# published holdout R2 per model: (baseline table, tuned table)
REFERENCE_R2 = {
    "linear": (0.749, 0.749),
    "svr": (0.819, 0.822),
    "forest": (0.859, 0.858),
    "xgb": (0.868, 0.852),
    "cat": (0.877, 0.876),
}
CAT_BAND = 0.10
_MODEL_STREAM = 11

CLEAN_FILE = "listings_clean.csv"
ENCODER_FILE = "encoder.model.json"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


class Writer:
    """Funnels every artifact write; files land atomically via rename."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def bytes(self, name: str, data: bytes) -> Path:
        target = self.path(name)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(target.name + ".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, target)
        except OSError as exc:
            raise IoFailure(f"cannot write {target}: {exc}") from exc
        self.written.append(name)
        return target

    def text(self, name: str, text: str) -> Path:
        return self.bytes(name, text.encode("utf-8"))

    def json(self, name: str, doc) -> Path:
        return self.text(name, json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")

    def read(self, name: str) -> bytes:
        p = self.path(name)
        try:
            return p.read_bytes()
        except FileNotFoundError:
            raise IoFailure(f"{p} not found; run the earlier pipeline stage first") from None
        except OSError as exc:
            raise IoFailure(f"cannot read {p}: {exc}") from exc


def _json_float(v: float):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


# ----------------------------------------------------------------- stages


def stage_ingest(cfg: RunConfig, w: Writer) -> None:
    if cfg.input_path is None:
        raise ConfigError("paths.input is required for ingest")
    try:
        raw = cfg.input_path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {cfg.input_path}: {exc}") from exc
    table = parse_listings(raw, cfg.schema)
    cleaned = clean_listings(table, cfg.regroup, cfg.required)
    summary = summarize_listings(cleaned, cfg.histogram_bins)
    w.text(CLEAN_FILE, serialize_listings(cleaned))
    w.text("fig1_price_hist.csv", histogram_csv(summary.price_histogram))
    w.text("fig2_locations.csv", csv_text(["location", "count"], summary.location_counts.items()))
    w.text(
        "fig3_price_by_location.csv",
        csv_text(
            ["location", "count", "min", "q1", "median", "q3", "max"],
            ([loc, summary.location_counts[loc], *five] for loc, five in summary.price_by_location.items()),
        ),
    )
    w.text("fig4_amenities.csv", csv_text(["amenity", "count"], summary.amenity_counts.items()))
    w.json("ingest_summary.json", {
        "rows_read": len(table), "rows_kept": len(cleaned), "rows_dropped": len(table) - len(cleaned),
        "columns": len(table.column_names),
    })
    _log(f"ingest: {len(table)} rows read, {len(cleaned)} kept")


def _load_clean(cfg: RunConfig, w: Writer):
    return parse_listings(w.read(CLEAN_FILE), cfg.schema)


def _geocoder(cfg: RunConfig, remote: bool):
    if cfg.gazetteer_path is not None:
        try:
            gaz = load_geocode_table(cfg.gazetteer_path.read_bytes(), str(cfg.gazetteer_path))
        except OSError as exc:
            raise IoFailure(f"cannot read gazetteer: {exc}") from exc
    else:
        gaz = default_gazetteer()
    cache = GeocodeTable({}, "cache")
    if cfg.cache_path is not None and cfg.cache_path.exists():
        cache = load_geocode_table(cfg.cache_path.read_bytes(), "cache")
    resolver = http_resolver() if remote else None
    return gaz, cache, resolver


def _resolve_all(table, gaz, cache, resolver, policy: str):
    points, unresolved = [], set()
    for rec in table.records:
        try:
            points.append(resolve_location(rec.location or "", gaz, resolver, cache))
        except UnknownLocation as exc:
            if policy == "error":
                raise MissingGeo(f"row {rec.id}: {exc}") from exc
            points.append(None)
            unresolved.add(rec.location)
    return points, sorted(unresolved)


def _matrix_csv(ids, X, y) -> str:
    header = ["id", *X.column_names, "log_price"]
    return csv_text(header, ([i, *row, t] for i, row, t in zip(ids, X.values, y.values)))


def _read_matrix(w: Writer, name: str):
    rows = list(csv.reader(io.StringIO(w.read(name).decode("utf-8"))))
    header, body = rows[0], rows[1:]
    ids = [r[0] for r in body]
    values = np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), len(header) - 1)
    return ids, header[1:-1], np.ascontiguousarray(values[:, :-1]), values[:, -1].copy()


def _fingerprint(cfg: RunConfig, w: Writer) -> str:
    data = w.path(CLEAN_FILE).read_bytes() if w.path(CLEAN_FILE).exists() else b""
    # output location and worker count do not change results, so they stay out of the hash
    doc = {k: v for k, v in cfg.document.items() if k not in ("paths", "jobs")}
    return training_fingerprint(doc, data, cfg.seed)


def stage_featurize(cfg: RunConfig, w: Writer, remote: bool = False) -> None:
    table = _load_clean(cfg, w)
    gaz, cache, resolver = _geocoder(cfg, remote)
    points, unresolved = _resolve_all(table, gaz, cache, resolver, cfg.features.unknown_location_policy)
    if cfg.cache_path is not None and resolver is not None:
        buf = io.BytesIO()
        save_geocode_table(cache, buf)
        try:
            cfg.cache_path.write_bytes(buf.getvalue())
        except OSError as exc:
            raise IoFailure(f"cannot write geocode cache: {exc}") from exc

    tr, te = (np.sort(a) for a in split_indices(len(table), cfg.features.split_ratio, cfg.seed))
    train_tab, test_tab = table.take(tr), table.take(te)
    train_pts, test_pts = [points[i] for i in tr], [points[i] for i in te]
    enc = fit_encoder(train_tab, train_pts, cfg.features)
    counts = {}
    for part, tab, pts in (("train", train_tab, train_pts), ("test", test_tab, test_pts)):
        for layout in ("onehot", "codes"):
            X, y, ids = transform(tab, pts, enc, drop_outliers=cfg.drop_outliers, layout=layout)
            w.text(f"{part}_{layout}.csv", _matrix_csv(ids, X, y))
        counts[part] = {"rows": len(tab), "kept": len(ids),
                        "no_location": sum(p is None for p in pts)}
    w.bytes(ENCODER_FILE, dumps_model(enc, _created_at(), _fingerprint(cfg, w)))
    w.json("featurize_summary.json", {
        "split": counts, "n_features_onehot": len(enc.names("onehot")),
        "n_features_codes": len(enc.names("codes")), "unresolved_locations": unresolved,
        "outlier_fences": list(enc.outlier_fences),
    })
    _log(
        f"featurize: train {counts['train']['kept']}/{counts['train']['rows']}, "
        f"test {counts['test']['kept']}/{counts['test']['rows']} rows kept; "
        f"{sum(c['no_location'] for c in counts.values())} rows dropped for unknown location"
    )


def _encoder(w: Writer):
    return loads_model(w.read(ENCODER_FILE))


def _tuned_params(w: Writer, kind: str) -> dict:
    p = w.path(f"tuning/tuned_{kind}.json")
    if not p.exists():
        return {}
    return dict(json.loads(p.read_text())["best_params"])


def _spec(cfg: RunConfig, w: Writer, kind: str) -> ModelSpec:
    return ModelSpec(kind, {**cfg.model_params(kind), **_tuned_params(w, kind)})


def _model_seed(cfg: RunConfig, kind: str) -> int:
    return derive_seed(cfg.seed, _MODEL_STREAM, REPORTED_KINDS.index(kind))


def _train_data(w: Writer, kind: str, part: str = "train"):
    layout = ModelSpec(kind).layout
    return _read_matrix(w, f"{part}_{layout}.csv")


def stage_train(cfg: RunConfig, w: Writer, kinds: Sequence[str]) -> None:
    enc = _encoder(w)
    fp = _fingerprint(cfg, w)
    for kind in kinds:
        spec = _spec(cfg, w, kind)
        _, _, X, y = _train_data(w, kind)
        t0 = time.perf_counter()
        model = fit_model(spec, X, y, seed=_model_seed(cfg, kind),
                          categorical_columns=enc.categorical_columns(spec.layout), n_jobs=cfg.jobs)
        w.bytes(f"models/{kind}.model.json", dumps_model(model, _created_at(), fp))
        _log(f"train {kind}: {time.perf_counter() - t0:.1f}s")


def _trials_table(w: Writer) -> str:
    rows = []
    for kind in REPORTED_KINDS:
        p = w.path(f"tuning/tuned_{kind}.json")
        if not p.exists():
            continue
        doc = json.loads(p.read_text())
        for t in doc["trials"]:
            rows.append([kind, t["trial"], json.dumps(t["params"], sort_keys=True), t["mean_r2"],
                         int(t["trial"] == doc["best_trial"])])
    return csv_text(["model", "trial", "params", "cv_r2", "best"], rows)


def stage_tune(cfg: RunConfig, w: Writer, kinds: Sequence[str], explicit: bool) -> None:
    enc = _encoder(w)
    for kind in kinds:
        block = cfg.search.get(kind)
        if block is None:
            if explicit:
                raise ConfigError(f"no [search.{kind}] block in the config")
            continue
        _, _, X, y = _train_data(w, kind)
        spec = ModelSpec(kind, cfg.model_params(kind))
        cats = enc.categorical_columns(spec.layout)
        t0 = time.perf_counter()
        common = dict(k=cfg.k, seed=cfg.seed, categorical_columns=cats, n_jobs=cfg.jobs,
                      base_params=cfg.model_params(kind))
        if block.space.mode == "grid":
            result = grid_search(block.space, X, y, **common)
        else:
            result = random_search(block.space, block.n_iter, X, y, **common)
        w.text(f"tuning/trials_{kind}.csv", trials_csv(result))
        summary = json.loads(search_summary_json(result))
        summary["best_trial"] = result.best_index
        summary["trials"] = [
            {"trial": i, "params": t.params, "mean_r2": _json_float(t.mean)} for i, t in enumerate(result.trials)
        ]
        w.json(f"tuning/tuned_{kind}.json", summary)
        _log(f"tune {kind}: {len(result.trials)} trials, best cv r2 {result.best_cv_score:.4f} "
             f"({time.perf_counter() - t0:.1f}s)")
    w.text("table2_trials.csv", _trials_table(w))


def _trained_kinds(w: Writer) -> list[str]:
    kinds = [k for k in REPORTED_KINDS if w.path(f"models/{k}.model.json").exists()]
    if not kinds:
        raise IoFailure("no trained models found; run 'train' first")
    return kinds


def _summary_text(rows: dict, checks: dict) -> str:
    lines = ["model    holdout_r2  cv_r2   reference_r2(baseline/tuned)"]
    for kind, r in rows.items():
        ref = REFERENCE_R2[kind]
        lines.append(f"{kind:<8} {r['r2']:.4f}      {r['cv'] if r['cv'] is None else format(r['cv'], '.4f')}  "
                     f"{ref[0]:.3f}/{ref[1]:.3f}")
    for name, ok in checks.items():
        lines.append(f"{name}: {'yes' if ok else 'NO'}")
    return "\n".join(lines) + "\n"


def stage_evaluate(cfg: RunConfig, w: Writer, with_cv: bool = True) -> None:
    enc = _encoder(w)
    rows = {}
    for kind in _trained_kinds(w):
        model = loads_model(w.read(f"models/{kind}.model.json"))
        _, _, Xte, yte = _train_data(w, kind, "test")
        report = compute_metrics(yte, predict_model(model, Xte))
        cv = None
        if with_cv:
            spec = _spec(cfg, w, kind)
            _, _, Xtr, ytr = _train_data(w, kind)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cv = cross_validate(spec, Xtr, ytr, cfg.k, cfg.seed, enc.categorical_columns(spec.layout),
                                    n_jobs=cfg.jobs).mean_r2
        rows[kind] = {**report.as_row(), "cv": _json_float(cv), "n": report.n}
        _log(f"evaluate {kind}: holdout r2 {report.r2:.4f}")
    w.text("table1_metrics.csv", csv_text(
        ["model", "r2", "mse", "rmse", "mae", "cv"],
        ([k, r["r2"], r["mse"], r["rmse"], r["mae"], "" if r["cv"] is None else r["cv"]] for k, r in rows.items()),
    ))
    checks = {}
    if "linear" in rows:
        lin = rows["linear"]["r2"]
        for k in ("forest", "xgb", "cat"):
            if k in rows:
                checks[f"{k}_beats_linear"] = rows[k]["r2"] > lin
        if "cat" in rows:
            checks["cat_at_least_linear_plus_0.05"] = rows["cat"]["r2"] >= lin + 0.05
    if "cat" in rows:
        checks["cat_within_reference_band"] = abs(rows["cat"]["r2"] - REFERENCE_R2["cat"][0]) <= CAT_BAND
    w.json("run_summary.json", {
        "models": {k: {**r, "reference_r2_baseline": REFERENCE_R2[k][0], "reference_r2_tuned": REFERENCE_R2[k][1]}
                   for k, r in rows.items()},
        "checks": checks, "cat_reference_band": [REFERENCE_R2["cat"][0] - CAT_BAND, REFERENCE_R2["cat"][0] + CAT_BAND],
        "seed": cfg.seed,
    })
    w.text("run_summary.txt", _summary_text(rows, checks))
    if checks.get("cat_within_reference_band") is False:
        _log(f"warning: cat holdout r2 {rows['cat']['r2']:.4f} is outside "
             f"{REFERENCE_R2['cat'][0]} +/- {CAT_BAND}")


def stage_diagnose(cfg: RunConfig, w: Writer) -> None:
    enc = _encoder(w)
    scatter, hist_rows, err_rows = [], [], []
    models = {}
    for kind in _trained_kinds(w):
        model = loads_model(w.read(f"models/{kind}.model.json"))
        models[kind] = model
        _, _, X, y = _train_data(w, kind, "test")
        pred = predict_model(model, X)
        res = compute_residuals(TargetVector(y, "log_e"), TargetVector(pred, "log_e"), cfg.raw_scale_residuals)
        w.text(f"diagnostics/residuals_{kind}.csv", residuals_csv(res))
        h = residual_histogram(res, cfg.residual_bins)
        hist_rows += [[kind, h.edges[i], h.edges[i + 1], h.counts[i]] for i in range(len(h.counts))]
        scatter += [[kind, a, p] for a, p in zip(y, pred)]
        slope, intercept, r2 = prediction_error_summary(y, pred)
        err_rows.append([kind, slope, intercept, r2])
    w.text("fig5_scatter.csv", csv_text(["model", "actual", "predicted"], scatter))
    w.text("fig6_residual_hist.csv", csv_text(["model", "left", "right", "count"], hist_rows))
    w.text("fig7_prediction_error.csv", csv_text(["model", "slope", "intercept", "r2"], err_rows))

    kind = cfg.importance_model
    if kind not in models:
        raise IoFailure(f"importance model {kind!r} is not trained")
    names = enc.names(ModelSpec(kind).layout)
    _, _, X, y = _train_data(w, kind, "test")
    reports = []
    if kind in ("forest", "xgb", "cat"):
        reports.append(gain_importance(models[kind], names))
    reports.append(permutation_importance(models[kind], X, y, cfg.permutation_repeats,
                                          derive_seed(cfg.seed, _MODEL_STREAM, 99), names))
    w.text("fig8_importance.csv", csv_text(
        ["model", "method", "rank", "feature", "score"],
        ([kind, r.method, i + 1, n, s] for r in reports for i, (n, s) in enumerate(r.entries)),
    ))


def stage_predict(cfg: RunConfig, w: Writer, in_path: Path, kind: str, remote: bool) -> Path:
    enc = _encoder(w)
    model = loads_model(w.read(f"models/{kind}.model.json"))
    try:
        raw = Path(in_path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {in_path}: {exc}") from exc
    header = next(csv.reader(io.StringIO(raw.decode("utf-8-sig"))), [])
    schema = {r: c for r, c in cfg.schema.items() if r != "price" or c in header}
    table = parse_listings(raw, schema, required_roles=("location",))
    gaz, cache, resolver = _geocoder(cfg, remote)
    points, _ = _resolve_all(table, gaz, cache, resolver, enc.unknown_location_policy)
    X, kept = encode_rows(table, points, enc, ModelSpec(kind).layout)
    log_pred = TargetVector(predict_model(model, X.values), "log_e")
    prices = transform_target(log_pred, "inverse").values
    dropped = len(table) - len(kept)
    if dropped:
        _log(f"predict: {dropped} rows skipped (unknown location)")
    return w.text("predictions.csv", csv_text(
        ["id", "predicted_price_ghs"], ([table.records[i].id, p] for i, p in zip(kept, prices))
    ))


# ------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ghrent", description="Rental-price modelling pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="run config (TOML)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--model", choices=REPORTED_KINDS, help="restrict train/tune to one model; model used by predict")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--remote-geocoder", action="store_true", help="resolve unknown locations via GEOCODER_URL")
    p.add_argument("--in", dest="in_path", help="new listings CSV for predict")
    p.add_argument("--jobs", type=int, help="worker threads (results do not depend on it)")
    p.add_argument("--no-cv", action="store_true", help="skip the cross-validation column in evaluate")
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, IoFailure):
        return EXIT_IO
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, ModelError):
        return EXIT_MODEL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_MODEL


def run(args: argparse.Namespace) -> int:
    cfg = validate_config(args.config, overrides={"seed": args.seed, "jobs": args.jobs, "out": args.out})
    w = Writer(cfg.out_dir)
    sub = args.subcommand
    kinds = [args.model] if args.model else list(REPORTED_KINDS)
    t0 = time.perf_counter()
    if sub in ("ingest", "all"):
        stage_ingest(cfg, w)
    if sub in ("featurize", "all"):
        stage_featurize(cfg, w, args.remote_geocoder)
    if sub in ("tune", "all"):
        stage_tune(cfg, w, kinds, explicit=sub == "tune" and args.model is not None)
    if sub in ("train", "all"):
        stage_train(cfg, w, kinds)
    if sub in ("evaluate", "all"):
        stage_evaluate(cfg, w, with_cv=not args.no_cv)
    if sub in ("diagnose", "all"):
        stage_diagnose(cfg, w)
    if sub == "predict":
        if not args.in_path:
            raise ConfigError("predict needs --in PATH")
        stage_predict(cfg, w, Path(args.in_path), args.model or "cat", args.remote_geocoder)
    _log(f"{sub}: {len(w.written)} artifacts written to {cfg.out_dir} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return run(args)
    except GhrentError as exc:
        _log(f"error: {exc}")
        return exit_code(exc)
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
