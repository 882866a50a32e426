"""Command-line surface: evderain generate|label|train|infer|eval|spectrum|bench-scan.

Configuration comes from --config JSON with flag overrides; EVDERAIN_SEED
overrides any configured seed. Outputs land under --out. Failures print one
machine-parseable line "error: <kind>: <detail>" on stderr and exit with a
kind-specific code (see EXIT_CODES).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import kernels
from .baselines import FilterConfig, density_filter, ts_filter
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    EvderainError,
    ParseError,
    UndefinedMetricError,
    ValidationError,
)
from .events import build_cloud, load_events, probe_sensor_size, save_events
from .curves import SCAN_MODES, serialize
from .loss_metrics import evaluate, label_spectrum, merge_reports
from .model import NetworkConfig
from .raingen import RainParams, SceneParams, generate, knn_label
from .train import (
    RunConfig,
    load_params_from_checkpoint,
    load_sample,
    predict,
    train,
)

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    "bad-config": 4,
    "checkpoint-mismatch": 5,
    "bad-data": 6,
    "undefined-metric": 7,
    "error": 1,
}


class CliFailure(Exception):
    def __init__(self, kind, detail):
        super().__init__(detail)
        self.kind = kind
        self.detail = detail


def _fail(kind, detail):
    raise CliFailure(kind, detail)


def _require_file(path):
    if not os.path.exists(path):
        _fail("missing-file", path)
    return path


def _load_run_config(args):
    cfg_dict = {}
    if getattr(args, "config", None):
        _require_file(args.config)
        try:
            with open(args.config) as fh:
                cfg_dict = json.load(fh)
        except json.JSONDecodeError as exc:
            _fail("bad-config", f"{args.config}: {exc}")
    try:
        cfg = RunConfig.from_dict(cfg_dict)
    except (ConfigError, TypeError, ValueError) as exc:
        _fail("bad-config", str(exc))
    for name in ("seed", "window_duration_s", "data_format"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "epochs", None) is not None:
        cfg.optim.epochs = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg.optim.lr = args.lr
    if getattr(args, "batch_size", None) is not None:
        cfg.optim.batch_size = args.batch_size
    if getattr(args, "train_files", None):
        cfg.train_files = list(args.train_files)
    if getattr(args, "val_files", None):
        cfg.val_files = list(args.val_files)
    env_seed = os.environ.get("EVDERAIN_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            _fail("bad-config", f"EVDERAIN_SEED={env_seed!r} is not an integer")
    return cfg


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    out = _out_dir(args)
    params = {}
    if args.params:
        _require_file(args.params)
        with open(args.params) as fh:
            params = json.load(fh)
    scene_keys = params.get("scene", {})
    rain_keys = params.get("rain", {})
    if args.sensor:
        scene_keys["sensor_width"], scene_keys["sensor_height"] = args.sensor
    if args.duration is not None:
        scene_keys["duration_s"] = args.duration
    if args.scene is not None:
        scene_keys["background"] = args.scene
    if args.background_file is not None:
        scene_keys["background_file"] = args.background_file
    if args.intensity is not None:
        rain_keys["intensity"] = args.intensity
    seed = args.seed if args.seed is not None else rain_keys.get("seed", 0)
    env_seed = os.environ.get("EVDERAIN_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    rain_keys["seed"] = seed
    try:
        scene = SceneParams(**scene_keys)
        rain = RainParams(**rain_keys)
    except (TypeError, ValueError) as exc:
        _fail("bad-config", str(exc))
    events = generate(scene, rain)
    path = os.path.join(out, args.name)
    save_events(path, events, args.format,
                sensor_width=scene.sensor_width, sensor_height=scene.sensor_height)
    n_rain = sum(1 for e in events if e.label == 1)
    print(f"wrote {path}: {len(events)} events, {n_rain} rain")
    return 0


def cmd_label(args):
    out = _out_dir(args)
    rainy = load_events(_require_file(args.rainy), args.format)
    clean = load_events(_require_file(args.clean), args.format)
    labeled = knn_label(rainy, clean, k=args.k, radius=(args.radius_px, args.radius_us))
    if labeled.warning:
        print(f"warning: {labeled.warning}", file=sys.stderr)
    path = os.path.join(out, args.name)
    width = max((e.x for e in rainy), default=0) + 1
    height = max((e.y for e in rainy), default=0) + 1
    save_events(path, list(labeled), args.format,
                sensor_width=width, sensor_height=height)
    n_rain = sum(1 for e in labeled if e.label == 1)
    print(f"wrote {path}: {len(labeled)} events, {n_rain} labeled rain")
    return 0


def cmd_train(args):
    out = _out_dir(args)
    cfg = _load_run_config(args)
    if not cfg.train_files:
        _fail("bad-config", "no training files (config train_files or --train-files)")
    for p in cfg.train_files + cfg.val_files:
        _require_file(p)
    if args.resume:
        _require_file(args.resume)
    _, final, last_val = train(cfg, out, resume=args.resume)
    print(f"wrote {final}")
    if last_val is not None:
        print(f"validation DA {last_val.DA:.4f}")
    return 0


def cmd_infer(args):
    out = _out_dir(args)
    params, model_cfg, meta = load_params_from_checkpoint(_require_file(args.checkpoint))
    run_cfg = RunConfig.from_dict(meta["run_config"]) if "run_config" in meta else RunConfig()
    if args.window_duration_s is not None:
        run_cfg.window_duration_s = args.window_duration_s
    run_cfg.model = model_cfg
    run_cfg.data_format = args.format
    for path in args.events:
        sample = load_sample(_require_file(path), run_cfg)
        preds = predict(sample.cloud, model_cfg, params)
        name = os.path.splitext(os.path.basename(path))[0] + ".pred.csv"
        dest = os.path.join(out, name)
        _write_predictions(dest, preds)
        print(f"wrote {dest}")
    return 0


def _write_predictions(path, preds):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "pred"])
        for i, p in enumerate(preds):
            writer.writerow([i, int(p)])


def _read_predictions(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["index", "pred"]:
            raise ParseError(f"{path}: expected header index,pred")
        preds = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                preds[int(row[0])] = int(row[1])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: line {lineno}: malformed row") from exc
    out = np.zeros(len(preds), dtype=np.int64)
    for idx, val in preds.items():
        if idx >= len(preds) or idx < 0:
            raise ParseError(f"{path}: prediction index {idx} out of range")
        out[idx] = val
    return out


def cmd_eval(args):
    out = _out_dir(args)
    if len(args.events) != len(args.preds):
        _fail("usage", "--events and --preds need the same number of paths")
    reports = []
    for epath, ppath in zip(args.events, args.preds):
        events = load_events(_require_file(epath), args.format)
        labels = np.array(
            [-1 if e.label is None else e.label for e in events], dtype=np.int64
        )
        if (labels < 0).any():
            _fail("bad-data", f"{epath}: evaluation requires labels on every event")
        preds = _read_predictions(_require_file(ppath))
        if len(preds) != len(labels):
            _fail("bad-data",
                  f"{ppath}: {len(preds)} predictions vs {len(labels)} events")
        reports.append(evaluate(preds, labels))
    report = merge_reports(reports)
    dest = os.path.join(out, args.name)
    with open(dest, "w") as fh:
        fh.write(report.to_json())
    print(f"wrote {dest}")
    print(f"SR {report.SR:.4f}  NR {report.NR:.4f}  DA {report.DA:.4f}")
    return 0


def cmd_spectrum(args):
    out = _out_dir(args)
    events = load_events(_require_file(args.events), args.format)
    labels = np.array([-1 if e.label is None else e.label for e in events], dtype=np.int64)
    if (labels < 0).any():
        _fail("bad-data", f"{args.events}: spectrum requires labels on every event")
    cloud = build_cloud(events, args.window_duration_s, args.windows)
    order = serialize(cloud, args.scan_mode, args.grid_bits).order
    flat_labels = []
    for w in cloud.windows:
        for e in w.events:
            flat_labels.append(e.label)
    seq = np.array(flat_labels, dtype=np.int64)[order]
    spec = label_spectrum(seq, bins=args.bins)
    spath = os.path.join(out, "spectrum.csv")
    with open(spath, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_freq_normalized", "power"])
        for f, p in zip(spec.bin_freqs, spec.bin_power):
            writer.writerow([f"{f:.6f}", f"{p:.10g}"])
    rpath = os.path.join(out, "runs.csv")
    with open(rpath, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_length", "count"])
        for length in sorted(spec.run_lengths):
            writer.writerow([length, spec.run_lengths[length]])
    print(f"wrote {spath} and {rpath}")
    print(f"peak frequency {spec.peak_frequency:.6f}")
    return 0


def _bench_once(length, channels, state_dim, seed, impl):
    from .ssm import raw_scan
    from . import autodiff as ad

    rng = np.random.default_rng(seed)
    x = rng.normal(size=(length, channels))
    dt = rng.uniform(0.01, 0.1, size=(length, channels))
    b = rng.normal(size=(length, state_dim))
    ct = rng.normal(size=(length, state_dim))
    a = -rng.uniform(0.5, 2.0, size=(channels, state_dim))
    d = rng.normal(size=channels)
    h = np.zeros((channels, state_dim))
    y = np.empty((length, channels))
    hist = np.empty((1, 1, 1))
    t0 = time.perf_counter()
    kernels.scan_forward_impl(impl, x, dt, b, ct, a, d, h, y, hist, False)
    return time.perf_counter() - t0


def cmd_bench_scan(args):
    impls = []
    if args.compare_impls:
        impls = ["python"] + (["cython"] if kernels.HAVE_EXTENSION else [])
    else:
        impls = [args.impl if args.impl != "auto" else kernels.active_impl()]
    rows = []
    for impl in impls:
        if impl == "cython" and not kernels.HAVE_EXTENSION:
            _fail("bad-config", "compiled scan extension is not available")
        for length in args.length:
            times = [
                _bench_once(length, args.channels, args.state_dim, rep, impl)
                for rep in range(args.repeats)
            ]
            rows.append((impl, length, float(np.median(times))))
    lines = []
    if args.compare_impls:
        lines.append("impl,length,seconds")
        lines += [f"{impl},{length},{sec:.6f}" for impl, length, sec in rows]
    else:
        lines.append("length,seconds")
        lines += [f"{length},{sec:.6f}" for _, length, sec in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dest = os.path.join(args.out, "bench_scan.csv")
        with open(dest, "w") as fh:
            fh.write(text)
        print(f"wrote {dest}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_filter(args):
    """Run a baseline filter and write predictions (harness plumbing)."""
    out = _out_dir(args)
    events = load_events(_require_file(args.events), args.format)
    cfg = FilterConfig()
    if args.filter == "ts":
        preds = ts_filter(events, cfg)
    else:
        preds = density_filter(events, cfg)
    dest = os.path.join(out, args.name)
    _write_predictions(dest, preds)
    print(f"wrote {dest}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="evderain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a labeled synthetic rainy stream")
    g.add_argument("--out", default=".")
    g.add_argument("--name", default="events.csv")
    g.add_argument("--format", choices=["csv", "packed-binary"], default="csv")
    g.add_argument("--params", help="JSON with scene/rain parameter objects")
    g.add_argument("--intensity", type=float, help="rain rate in mm/hr")
    g.add_argument("--duration", type=float, help="seconds")
    g.add_argument("--sensor", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--scene", choices=["static-edges", "moving-bar", "loaded-file"])
    g.add_argument("--background-file")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    l = sub.add_parser("label", help="KNN-label a rainy recording against a clean one")
    l.add_argument("--rainy", required=True)
    l.add_argument("--clean", required=True)
    l.add_argument("--k", type=int, default=2)
    l.add_argument("--radius-px", type=float, default=3.0)
    l.add_argument("--radius-us", type=float, default=2000.0)
    l.add_argument("--format", choices=["csv", "packed-binary"], default="csv")
    l.add_argument("--out", default=".")
    l.add_argument("--name", default="labeled.csv")
    l.set_defaults(func=cmd_label)

    t = sub.add_parser("train", help="train the deraining network")
    t.add_argument("--config", help="RunConfig JSON")
    t.add_argument("--out", default="run")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--window-duration-s", dest="window_duration_s", type=float)
    t.add_argument("--data-format", dest="data_format", choices=["csv", "packed-binary"])
    t.add_argument("--train-files", nargs="+")
    t.add_argument("--val-files", nargs="+")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="write per-event predictions for event files")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--events", nargs="+", required=True)
    i.add_argument("--format", choices=["csv", "packed-binary"], default="csv")
    i.add_argument("--window-duration-s", dest="window_duration_s", type=float)
    i.add_argument("--out", default=".")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score prediction files against labeled events")
    e.add_argument("--events", nargs="+", required=True)
    e.add_argument("--preds", nargs="+", required=True)
    e.add_argument("--format", choices=["csv", "packed-binary"], default="csv")
    e.add_argument("--out", default=".")
    e.add_argument("--name", default="report.json")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("spectrum", help="label-sequence power spectrum and run lengths")
    s.add_argument("--events", required=True)
    s.add_argument("--format", choices=["csv", "packed-binary"], default="csv")
    s.add_argument("--window-duration-s", dest="window_duration_s",
                   type=float, default=0.1)
    s.add_argument("--windows", type=int, default=5)
    s.add_argument("--scan-mode", choices=list(SCAN_MODES), default="zorder")
    s.add_argument("--grid-bits", type=int, default=10)
    s.add_argument("--bins", type=int, default=64)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_spectrum)

    b = sub.add_parser("bench-scan", help="time the scan kernel; CSV (length, seconds)")
    b.add_argument("--length", type=int, nargs="+", default=[100_000])
    b.add_argument("--channels", type=int, default=8)
    b.add_argument("--state-dim", type=int, default=8)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--impl", choices=["auto", "cython", "python"], default="auto")
    b.add_argument("--compare-impls", action="store_true",
                   help="bench every available implementation; adds an impl column")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_scan)

    f = sub.add_parser("filter", help="run a classical baseline filter")
    f.add_argument("--filter", choices=["ts", "density"], required=True)
    f.add_argument("--events", required=True)
    f.add_argument("--format", choices=["csv", "packed-binary"], default="csv")
    f.add_argument("--out", default=".")
    f.add_argument("--name", default="filter.pred.csv")
    f.set_defaults(func=cmd_filter)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"error: {exc.kind}: {exc.detail}", file=sys.stderr)
        return EXIT_CODES[exc.kind]
    except (ParseError, ValidationError) as exc:
        print(f"error: bad-data: {exc}", file=sys.stderr)
        return EXIT_CODES["bad-data"]
    except ConfigError as exc:
        print(f"error: bad-config: {exc}", file=sys.stderr)
        return EXIT_CODES["bad-config"]
    except CheckpointMismatchError as exc:
        print(f"error: checkpoint-mismatch: {exc}", file=sys.stderr)
        return EXIT_CODES["checkpoint-mismatch"]
    except UndefinedMetricError as exc:
        print(f"error: undefined-metric: {exc}", file=sys.stderr)
        return EXIT_CODES["undefined-metric"]
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc.filename}", file=sys.stderr)
        return EXIT_CODES["missing-file"]
    except EvderainError as exc:
        print(f"error: error: {exc}", file=sys.stderr)
        return EXIT_CODES["error"]


if __name__ == "__main__":
    sys.exit(main())
