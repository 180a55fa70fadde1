"""``ddmd`` command line: simulate, train, forecast, spectrum, sweep, benchmark.

Exit codes: 0 ok, 2 validation (bad config, gate failure, incompatible
inputs), 3 capacity (dictionary too large), 4 numerical failure.
The output directory is ``--out``, else ``$DDMD_OUT_DIR``, else ``./ddmd-out``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import SCALES, SUITES, run_benchmark
from .config import load_config
from .edmd import load_model, save_model
from .errors import DDMDError, InvalidArgument
from .evaluation import (
    basis_sweep,
    forecast_error_curve,
    spectrum,
    write_error_curve_csv,
    write_forecast_csv,
    write_spectrum_csv,
    write_sweep_csv,
)
from .pipeline import fit, forecast_on, generate, read_dataset, split_timing, write_dataset

OUT_ENV = "DDMD_OUT_DIR"
DEFAULT_OUT = "ddmd-out"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


def _pct(x) -> str:
    return "n/a" if x is None else f"{x:.4g}%"


def cmd_simulate(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed)
    dataset, echo = generate(cfg)
    out = _out_dir(args)
    manifest = write_dataset(dataset, out, cfg, echo)
    n_train = len(dataset.train)
    print(f"wrote {len(dataset.trajectories)} trajectories ({n_train} train, {len(dataset.test)} test) "
          f"and {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed)
    dataset, manifest = read_dataset(args.data)
    if cfg.system.kind != manifest.get("system", {}).get("kind", cfg.system.kind):
        raise InvalidArgument("config system kind does not match the dataset manifest")

    def progress(rec):
        print(json.dumps(rec, sort_keys=True), flush=True)

    model, report = fit(cfg, dataset, log=progress)
    report, timing = split_timing(report)
    report["dataset"] = {"manifest_config_sha256": manifest.get("config_sha256"), "p": dataset.p}
    out = _out_dir(args)
    save_model(model, out / "model.json")
    _dump(report, out / "report.json")
    _dump(timing, out / "timing.json")
    print(f"train_error={_pct(report['train_error'])} test_error={_pct(report['test_error'])}")
    print(f"wrote {out / 'model.json'} and {out / 'report.json'}")
    return 0


def cmd_forecast(args) -> int:
    steps, mode, root, index = args.steps, args.mode, args.root, args.trajectory
    if args.config:
        ev = load_config(args.config).evaluation
        steps = steps if steps is not None else ev.forecast_steps
        mode = mode if mode is not None else ev.modes[0]
        root = root if root is not None else ev.root_index
        index = index if index is not None else ev.trajectory
    steps = 100 if steps is None else steps
    mode = mode or "lifted"
    root = root or 0
    index = index or 0
    model = load_model(args.model)
    dataset, _ = read_dataset(args.data)
    pool = {"test": dataset.test, "train": dataset.train, "all": dataset.trajectories}[args.split]
    if not 0 <= index < len(pool):
        raise InvalidArgument(f"trajectory index {index} outside the {args.split} split of size {len(pool)}")
    traj = pool[index]
    if traj.p != model.p:
        raise InvalidArgument(f"model expects p={model.p}, data has p={traj.p}")
    result = forecast_on(model, traj, root, steps, mode)
    out = _out_dir(args)
    write_forecast_csv(result, out / "forecast.csv", traj.dt)
    msg = f"wrote {out / 'forecast.csv'}"
    if result.truth is not None and result.predicted.shape[0]:
        errors = forecast_error_curve(result)
        write_error_curve_csv(errors, out / "forecast_errors.csv", traj.dt)
        msg += f" and {out / 'forecast_errors.csv'} (mean relative error {100 * errors.mean():.4g}%)"
    print(msg)
    if result.diverged:
        print(f"forecast diverged at step {result.diverged_at}: {result.reason}", file=sys.stderr)
    return 0


def cmd_spectrum(args) -> int:
    model = load_model(args.model)
    report = spectrum(model)
    out = _out_dir(args)
    write_spectrum_csv(report, out / "spectrum.csv")
    print(f"wrote {out / 'spectrum.csv'} ({report.eigenvalues.size} eigenvalues, "
          f"max |lambda| {np.abs(report.eigenvalues).max():.6g})")
    if report.degraded:
        print("warning: eigendecomposition accuracy degraded", file=sys.stderr)
    return 0


def _sweep_center(model, text):
    if text:
        center = np.array([float(v) for v in text.split(",")])
        if center.size != model.p:
            raise InvalidArgument(f"--center needs {model.p} comma-separated values")
        return center
    box = getattr(getattr(model.dictionary, "spec", None), "domain_box", None)
    if box is not None:
        return np.array([(lo + hi) / 2.0 for lo, hi in box])
    return np.zeros(model.p)


def cmd_sweep(args) -> int:
    model = load_model(args.model)
    report = basis_sweep(model, args.dim, _sweep_center(model, args.center), args.radius, args.points)
    out = _out_dir(args)
    write_sweep_csv(report, out / "sweep.csv")
    print(f"wrote {out / 'sweep.csv'} ({args.points} points x {model.m} functions)")
    return 0


def cmd_benchmark(args) -> int:
    out = _out_dir(args)

    def log(row):
        if args.verbose:
            print(f"  {row['instance']:<20} {row['method']:<15} {row['status']:<10} "
                  f"train={_pct(row['train_pct'])} test={_pct(row['test_pct'])}", file=sys.stderr)

    result = run_benchmark(args.suite, args.scale, out, seed=args.seed or 0, workers=args.workers, log=log)
    failed = [r for r in result.rows if r["status"] == "failed"]
    print(f"wrote {out / 'table.csv'} ({len(result.rows)} rows, {len(failed)} failed)")
    for r in result.rows:
        print(f"{r['instance']:<20} {r['method']:<15} {r['variant']:<28} {r['status']:<17} "
              f"train={_pct(r['train_pct'])} test={_pct(r['test_pct'])} forecast={_pct(r['forecast_pct'])}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddmd", description="Koopman operator learning with EDMD and deep DMD.")
    parser.add_argument("--version", action="version", version=f"ddmd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="YAML or JSON run config")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="override the root seed")
        return p

    p = common(sub.add_parser("simulate", help="simulate trajectories and write a dataset"), True)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("train", help="fit a model on a dataset"), True)
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("forecast", help="multi-step forecast from one root sample"))
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--trajectory", type=int, help="trajectory index within the split (default 0)")
    p.add_argument("--root", type=int, help="root sample index (default 0)")
    p.add_argument("--steps", type=int, help="forecast length (default 100)")
    p.add_argument("--mode", choices=("lifted", "relift"))
    p.set_defaults(func=cmd_forecast)

    p = common(sub.add_parser("spectrum", help="eigenvalues of K as CSV"))
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = common(sub.add_parser("sweep", help="dictionary response along one observable axis"))
    p.add_argument("--model", required=True)
    p.add_argument("--dim", type=int, default=0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--center", help="comma-separated center point (default: domain-box midpoint or zeros)")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("benchmark", help="run a benchmark suite"))
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DDMDError as exc:
        print(f"ddmd {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
