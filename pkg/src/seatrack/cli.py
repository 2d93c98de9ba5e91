"""Command-line entry point: ``seatrack {gen,train,eval,associate,export-tracks,grad-check}``.

Exit codes:
    0  success
    1  nothing to do (associate scored no rows, grad-check failed)
    2  usage or configuration error
    3  data pipeline error (unreadable/ malformed input, nothing left to train on)
    4  training diverged
    5  checkpoint could not be loaded
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from . import evaluation, models, synth, training
from .config import RunConfig, load_config
from .errors import (CheckpointError, ConfigError, DivergenceError, FormatError, PipelineError)

log = logging.getLogger("seatrack")

EXIT_OK, EXIT_EMPTY, EXIT_CONFIG, EXIT_PIPELINE, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 1, 2, 3, 4, 5

ASSOC_COLUMNS = ("object_id", "timestamp", "lat", "lon", "vessel_id", "confidence")
UNKNOWN = "unknown"


def _setup_logging() -> None:
    level = os.environ.get("SEATRACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _err(msg: str) -> None:
    print(f"seatrack: {msg}", file=sys.stderr)


# -- gen -------------------------------------------------------------------------

def cmd_gen(args) -> int:
    try:
        if args.scenario in synth.SCENARIOS:
            cfg = synth.scenario(args.scenario, seed=args.seed)
        elif Path(args.scenario).is_file():
            cfg = synth.load_scenario(args.scenario, seed=args.seed)
        else:
            raise ConfigError(f"unknown scenario {args.scenario!r}; available: "
                              f"{', '.join(sorted(synth.SCENARIOS))} (or a scenario file)")
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    records = synth.generate(cfg)
    if args.out in (None, "-"):
        datamod.write_csv(records, sys.stdout)
    else:
        datamod.write_csv(records, args.out)
        print(f"wrote {len(records)} rows for {cfg.vessel_count} vessels to {args.out}")
    return EXIT_OK


# -- train -----------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, model=args.model, epochs=getattr(args, "epochs", None))


def cmd_train(args) -> int:
    try:
        cfg = _run_config(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    data_path = args.data or cfg.data
    out = args.out or cfg.out
    if not data_path or not out:
        _err("train needs a data file and --out")
        return EXIT_CONFIG
    try:
        records, rejects = datamod.parse_csv(data_path)
        if args.rejects:
            datamod.write_rejects(rejects, args.rejects)
        prep = datamod.prepare(records, min_obs=cfg.min_obs, max_vessels=cfg.max_vessels,
                               allowlist=cfg.vessels or None, ratios=cfg.split, seed=cfg.seed)
    except (PipelineError, FormatError, OSError) as exc:
        _err(str(exc))
        return EXIT_PIPELINE
    for vid, n in prep.dropped:
        log.info("dropped %s (%d rows < %d)", vid, n, cfg.min_obs)

    model = models.build_model(cfg.model, len(prep.label_map), seed=cfg.seed, **cfg.model_kwargs())
    try:
        ckpt, trainlog = training.fit(model, prep.train, prep.val, cfg.train_config(),
                                      scaler=prep.scaler, label_map=prep.label_map)
    except DivergenceError as exc:
        _err(str(exc))
        return EXIT_DIVERGED
    models.save(ckpt, out)
    trainlog.write_csv(args.log or f"{out}.trainlog.csv")
    if args.test_out:
        _write_split(prep, args.test_out)
    last = trainlog.last
    print(f"{cfg.model}: {len(prep.label_map)} vessels, {len(prep.train)}/{len(prep.val)}/{len(prep.test)} rows, "
          f"{model.param_count} parameters")
    print(f"final train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f}")
    return EXIT_OK


def _write_split(prep: datamod.Prepared, path) -> None:
    """Write the held-out test rows back out in the input schema (raw units)."""
    raw = prep.raw_test
    recs = [datamod.AisRecord(oid, prep.label_map.decode(lab), ts, *map(float, feats))
            for oid, lab, ts, feats in zip(raw.object_ids, raw.labels, raw.timestamps, raw.features)]
    datamod.write_csv(recs, path)


# -- eval ------------------------------------------------------------------------

def _load_checkpoint(path):
    ckpt = models.load(path)
    if ckpt.scaler is None or ckpt.label_map is None:
        raise CheckpointError(f"{path} carries no scaler/label map; it cannot score raw records")
    return ckpt


def score_records(ckpt, records):
    """Scale raw records with the checkpoint's scaler and run inference."""
    model = ckpt.to_model()
    feats = np.array([r.features for r in records], dtype=np.float64).reshape(len(records), 4)
    x = datamod.to_model_input(datamod.apply_scaler(ckpt.scaler, feats)) if records else np.zeros((0, 4, 1))
    return model.predict(x)


def cmd_eval(args) -> int:
    try:
        ckpts = [_load_checkpoint(p) for p in args.checkpoints]
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_CHECKPOINT
    label_map = ckpts[0].label_map
    if any(c.label_map != label_map for c in ckpts[1:]):
        _err("checkpoints were trained on different vessel sets")
        return EXIT_CONFIG
    try:
        records, rejects = datamod.parse_csv(args.data)
    except (FormatError, OSError) as exc:
        _err(str(exc))
        return EXIT_PIPELINE
    complete = [r for r in records if r.complete]
    known = [r for r in complete if r.vessel_id in label_map]
    unseen = len(complete) - len(known)
    incomplete = len(records) - len(complete)
    if not known:
        _err("no labelled rows from known vessels to evaluate")
        return EXIT_PIPELINE
    truth = np.array([label_map.encode(r.vessel_id) for r in known], dtype=np.int64)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, seen = [], {}
    for ckpt in ckpts:
        name = ckpt.spec.name
        seen[name] = seen.get(name, 0) + 1
        tag = name if seen[name] == 1 else f"{name}-{seen[name]}"
        _, pred, _ = score_records(ckpt, known)
        cm = evaluation.confusion(truth, pred, len(label_map), label_map.classes)
        rep = evaluation.metrics(cm)
        cm.write_csv(out_dir / f"confusion_{tag}.csv")
        evaluation.write_per_class_csv(rep, out_dir / f"per_class_{tag}.csv")
        rows.append((tag, rep))
    evaluation.write_report_csv(rows, out_dir / "metrics.csv")
    print(evaluation.format_table(rows))
    print(f"evaluated {len(known)} rows")
    if unseen:
        print(f"excluded {unseen} rows (unseen vessels)")
    if incomplete or rejects:
        print(f"excluded {incomplete} incomplete and {len(rejects)} malformed rows")
    return EXIT_OK


# -- associate -------------------------------------------------------------------

def associate_stream(ckpt, instream, outstream, min_confidence: float | None = None,
                     batch_size: int = 256, errstream=None) -> int:
    """Score a CSV stream row by row, in order, holding at most ``batch_size`` rows.

    Returns the number of rows scored.
    """
    errstream = errstream or sys.stderr
    model = ckpt.to_model()
    label_map, scaler = ckpt.label_map, ckpt.scaler
    mean, std = np.asarray(scaler.mean), np.asarray(scaler.std)
    writer = csv.writer(outstream, lineterminator="\n")
    writer.writerow(ASSOC_COLUMNS)
    pending: list = []
    scored = 0

    def flush():
        nonlocal scored
        if not pending:
            return
        feats = np.array([r.features for r in pending], dtype=np.float64)
        x = ((feats - mean) / std).astype(np.float32)[..., None]
        _, labels, conf = model.predict(x, batch_size=batch_size)
        for rec, lab, c in zip(pending, labels, conf):
            vid = label_map.decode(lab)
            if min_confidence is not None and c < min_confidence:
                vid = UNKNOWN
            writer.writerow(("" if rec.object_id is None else rec.object_id,
                             "" if rec.timestamp is None else datamod.format_timestamp(rec.timestamp),
                             f"{rec.lat:.7f}", f"{rec.lon:.7f}", vid, f"{float(c):.6f}"))
        scored += len(pending)
        pending.clear()
        outstream.flush()

    for item in datamod.iter_rows(instream):
        if isinstance(item, datamod.Reject):
            print(f"line {item.line}: {item.reason}", file=errstream)
            continue
        if None in item.features:
            print(f"line {item.line}: missing position, speed or course", file=errstream)
            continue
        pending.append(item)
        if len(pending) >= batch_size:
            flush()
    flush()
    return scored


def cmd_associate(args) -> int:
    try:
        ckpt = _load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_CHECKPOINT
    if args.batch_size < 1:
        _err("--batch-size must be >= 1")
        return EXIT_CONFIG
    instream = sys.stdin if args.input in (None, "-") else open(args.input, newline="", encoding="utf-8")
    outstream = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="", encoding="utf-8")
    try:
        scored = associate_stream(ckpt, instream, outstream, args.min_confidence, args.batch_size)
    except FormatError as exc:
        _err(str(exc))
        return EXIT_PIPELINE
    finally:
        if instream is not sys.stdin:
            instream.close()
        if outstream is not sys.stdout:
            outstream.close()
    if scored == 0:
        _err("no rows scored")
        return EXIT_EMPTY
    log.info("scored %d rows", scored)
    return EXIT_OK


# -- export-tracks ---------------------------------------------------------------

def tracks_geojson(rows) -> dict:
    """Build a FeatureCollection from association rows.

    Each predicted vessel becomes a LineString in timestamp order (a Point if
    it has a single fix); rows labelled ``unknown`` become Points.
    """
    by_vessel: dict[str, list] = {}
    unknowns = []
    for r in rows:
        point = (r["timestamp"], float(r["lon"]), float(r["lat"]), r)
        if r["vessel_id"] == UNKNOWN:
            unknowns.append(point)
        else:
            by_vessel.setdefault(r["vessel_id"], []).append(point)
    features = []
    for vid in sorted(by_vessel):
        pts = sorted(by_vessel[vid], key=lambda p: p[0])
        coords = [[lon, lat] for _, lon, lat, _ in pts]
        geom = ({"type": "LineString", "coordinates": coords} if len(coords) >= 2
                else {"type": "Point", "coordinates": coords[0]})
        features.append({"type": "Feature", "geometry": geom,
                         "properties": {"vessel_id": vid, "points": len(coords)}})
    for ts, lon, lat, r in unknowns:
        features.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": [lon, lat]},
                         "properties": {"vessel_id": UNKNOWN, "object_id": r["object_id"], "timestamp": ts,
                                        "confidence": float(r["confidence"])}})
    return {"type": "FeatureCollection", "features": features}


def cmd_export_tracks(args) -> int:
    try:
        with open(args.predictions, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != ASSOC_COLUMNS:
                raise FormatError(f"predictions header must be {','.join(ASSOC_COLUMNS)}")
            rows = list(reader)
    except (OSError, FormatError) as exc:
        _err(str(exc))
        return EXIT_PIPELINE
    doc = tracks_geojson(rows)
    text = json.dumps(doc, indent=None, separators=(",", ":"))
    if args.out in (None, "-"):
        print(text)
    else:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


# -- grad-check ------------------------------------------------------------------

def run_grad_checks(tolerance: float = 1e-4, seed: int = 0, full_width: bool = True):
    """Gradient-check each layer type and the reduced-width full stack.

    Returns a list of ``(label, GradCheckReport)``.
    """
    from .layers import Conv1d, Dense, Lstm
    from .tensor import Rng

    rng = Rng(seed)
    width = 32 if full_width else 4
    cases = [
        ("conv1d", Conv1d(1, filters=width, rng=rng), rng.normal((2, 4, 1))),
        ("lstm1 (sequences)", Lstm(width, width, return_sequences=True, rng=rng), rng.normal((2, 2, width))),
        ("lstm2 (last state)", Lstm(width, width, return_sequences=False, rng=rng), rng.normal((2, 2, width))),
        ("lstm peephole", Lstm(3, 4, return_sequences=True, peephole_output_gate=True, rng=rng),
         rng.normal((2, 3, 3))),
        ("dense softmax", Dense(width, 23, rng=rng), rng.normal((2, width))),
    ]
    reports = [(name, training.grad_check(layer, x, tolerance, seed=seed)) for name, layer, x in cases]
    stack = models.build_cnn_lstm(5, seed=seed, filters=4, units=4)
    x = rng.normal((3, 4, 1))
    reports.append(("cnn-lstm stack (F=4, H=4)", training.grad_check(stack, x, tolerance, training=True, seed=seed)))
    for name in ("lstm", "cnn", "ann"):
        m = models.build_model(name, 5, seed=seed)
        reports.append((f"{name} baseline", training.grad_check(m, rng.normal((2, 4, 1)), tolerance, seed=seed,
                                                               training=True)))
    return reports


def cmd_grad_check(args) -> int:
    reports = run_grad_checks(args.tolerance, args.seed, full_width=not args.quick)
    ok = True
    for name, rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {name:<28} max_rel_err={rep.max_error:.3e}")
    return EXIT_OK if ok else EXIT_EMPTY


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seatrack", description="AIS track association with a 1D CNN-LSTM")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic AIS scenario CSV")
    g.add_argument("--scenario", default="small5", help="scenario name or key=value scenario file")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("-o", "--out", default=None, help="output CSV (default stdout)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on an AIS CSV")
    t.add_argument("data", nargs="?", help="input CSV")
    t.add_argument("--config", help="key = value run configuration")
    t.add_argument("--model", choices=models.ARCHITECTURES, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("-o", "--out", help="checkpoint path")
    t.add_argument("--log", help="training log CSV (default <out>.trainlog.csv)")
    t.add_argument("--test-out", help="write the held-out test rows to this CSV")
    t.add_argument("--rejects", help="write malformed input rows to this CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints on labelled data")
    e.add_argument("checkpoints", nargs="+")
    e.add_argument("--data", required=True)
    e.add_argument("-o", "--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("associate", help="assign vessel ids to a stream of observations")
    a.add_argument("checkpoint")
    a.add_argument("input", nargs="?", default="-", help="CSV file or - for stdin")
    a.add_argument("-o", "--out", default="-")
    a.add_argument("--min-confidence", type=float, default=None)
    a.add_argument("--batch-size", type=int, default=256,
                   help="rows scored together; 1 emits each row as soon as it arrives")
    a.set_defaults(func=cmd_associate)

    x = sub.add_parser("export-tracks", help="turn association output into GeoJSON tracks")
    x.add_argument("predictions")
    x.add_argument("-o", "--out", default="-")
    x.set_defaults(func=cmd_export_tracks)

    c = sub.add_parser("grad-check", help="finite-difference check of every backward pass")
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--quick", action="store_true", help="reduced-width layers only")
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
