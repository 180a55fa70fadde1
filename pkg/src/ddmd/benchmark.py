"""Benchmark suites: POLS, glycolysis and swing, at desk or paper scale.

Every instance is isolated: it derives its own seed from the suite seed and
its label, simulates its own data and writes into its own directory. The
table is a deterministic ordered merge. Wall-clock times are kept out of the
table (in ``timing.json``) so reruns produce byte-identical CSVs.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, validate
from .edmd import save_model
from .errors import DDMDError, InvalidArgument, NotOscillatory
from .evaluation import dominant_period, forecast_error_curve, mean_forecast_error, write_error_curve_csv, write_forecast_csv
from .numerics import Rng
from .pipeline import finite_or_none, fit, forecast_on, generate, in_domain

TABLE_SCHEMA = "ddmd-benchmark-v1"
COLUMNS = [
    "schema", "suite", "scale", "instance", "method", "variant", "status", "train_pct", "test_pct",
    "forecast_root", "forecast_horizon", "forecast_pct", "config_sha256", "detail",
]
SUITES = ("pols", "glycolysis", "swing")
SCALES = ("desk", "paper")

LAMBDAS = [0.0, 1e-4, 1e-3, 1e-2, 1e-1]
DEGREES = [1, 2, 3]

# deep DMD settings shared by every suite; the final iterate is reported
TRAIN = dict(optimizer="adam", learning_rate=1e-3, batch_size=64, k_update="alternating-least-squares",
             eval_every=500, select="last")

# short trajectories keep observables within about one decade of their initial size, so the
# relative metric scores dynamics rather than constant offsets on fully decayed tails
POLS_DATA = {"trajectories": 150, "length": 30, "train_fraction": 0.8}

# observed species (0-based) for the reduced glycolysis measurements
GLYCOLYSIS_OBSERVED = {7: [0, 1, 2, 3, 4, 5, 6], 5: [0, 1, 2, 3, 5], 3: [0, 1, 5]}


@dataclass
class MethodRun:
    method: str  # edmd | ddmd | fixed-dict-dmd
    variant: str
    dictionary: dict
    training: dict


@dataclass
class Instance:
    suite: str
    scale: str
    label: str
    system: dict
    data: dict
    methods: list
    root: int = 0  # forecast root sample in each test trajectory
    horizon: int = 50  # steps scored in the table
    long_steps: int = 0  # optional longer rollout kept for the period check
    meta: dict = field(default_factory=dict)

    def config(self, run: MethodRun) -> RunConfig:
        steps = max(self.horizon, self.long_steps)
        return validate({"system": self.system, "data": self.data, "dictionary": run.dictionary,
                         "training": run.training,
                         "evaluation": {"forecast_steps": steps, "root_index": self.root}})


def instance_seed(seed: int, suite: str, label: str) -> int:
    return int(Rng(seed).child(f"{suite}/{label}").next_u64(1)[0] >> np.uint64(33))


def _edmd(family="legendre", degrees=DEGREES, lambdas=LAMBDAS, max_regularized_dim=600, max_iter=2000):
    return MethodRun("edmd", "", {"kind": "poly", "family": family, "max_total_degree": degrees[0]},
                     {"method": "edmd", "degrees": list(degrees), "lambdas": list(lambdas),
                      "max_regularized_dim": max_regularized_dim, "max_iter": max_iter})


def _mlp(hidden, out, activation="elu", dropout=0.0):
    return {"kind": "mlp", "hidden_widths": list(hidden), "output_width": out, "activation": activation,
            "dropout_rate": dropout}


def _deep(mlp, variant="", **train):
    return MethodRun("ddmd", variant, mlp, {"method": "ddmd", **train})


def _fixed(mlp):
    return MethodRun("fixed-dict-dmd", "", mlp, {"method": "fixed-dict-dmd"})


def _pols(scale: str, seed: int) -> list:
    sizes = [4, 8, 16] if scale == "desk" else [4, 8, 16, 32, 64, 128]
    iters = 10000 if scale == "desk" else 50000
    out = []
    for n in sizes:
        label = f"n{n}"
        mlp = _mlp((20,) * 4, 20)
        train = dict(TRAIN, iterations=iters)
        methods = [_edmd(degrees=DEGREES if n <= 16 else [1, 2]), _deep(mlp, **train), _fixed(mlp)]
        if n == 4:
            methods.append(_deep(mlp, "k_update=joint-gradient", **{**train, "k_update": "joint-gradient"}))
        data = dict(POLS_DATA, seed=instance_seed(seed, "pols", label))
        out.append(Instance("pols", scale, label, {"kind": "pols", "n": n, "p": 3 * n // 4, "oscillatory": True},
                            data, methods, root=0, horizon=20))
    # the same smallest system drawn without rotation blocks
    label = "n4-nonoscillatory"
    data = dict(POLS_DATA, seed=instance_seed(seed, "pols", label))
    mlp = _mlp((20,) * 4, 20)
    out.append(Instance("pols", scale, label, {"kind": "pols", "n": 4, "p": 3, "oscillatory": False}, data,
                        [_edmd(), _deep(mlp, **dict(TRAIN, iterations=iters))],
                        root=0, horizon=20))
    return out


def _glycolysis(scale: str, seed: int) -> list:
    iters = 10000 if scale == "desk" else 50000
    count = 30 if scale == "desk" else 100
    out = []
    for k, observe in GLYCOLYSIS_OBSERVED.items():
        label = f"species{k}"
        mlp = _mlp((20,) * 4, 60)
        methods = [
            _edmd(),
            _deep(mlp, **dict(TRAIN, iterations=iters)),
            _fixed(mlp),
        ]
        data = {"trajectories": count, "length": 601, "dt": 0.01, "substeps": 10, "train_fraction": 0.8,
                "seed": instance_seed(seed, "glycolysis", label)}
        # forecasts start after the 200-sample transient the limit-cycle gate discards
        out.append(Instance("glycolysis", scale, label, {"kind": "glycolysis", "observe": observe}, data, methods,
                            root=200, horizon=100, long_steps=400))
    return out


def _swing(scale: str, seed: int) -> list:
    iters = 10000 if scale == "desk" else 50000
    count = 100 if scale == "desk" else 1000
    mlp = _mlp((20,) * 19, 20)
    methods = [
        _edmd(),
        _deep(mlp, **dict(TRAIN, iterations=iters)),
        _fixed(mlp),
    ]
    data = {"trajectories": count, "length": 201, "dt": 0.05, "substeps": 10, "train_fraction": 0.8,
            "seed": instance_seed(seed, "swing", "ieee39")}
    return [Instance("swing", scale, "ieee39", {"kind": "swing", "delta_scale": 0.3}, data, methods,
                     root=0, horizon=50, long_steps=200)]


def suite_instances(suite: str, scale: str = "desk", seed: int = 0) -> list:
    if suite not in SUITES:
        raise InvalidArgument(f"unknown suite {suite!r}; choose from {SUITES}")
    if scale not in SCALES:
        raise InvalidArgument(f"unknown scale {scale!r}; choose from {SCALES}")
    return {"pols": _pols, "glycolysis": _glycolysis, "swing": _swing}[suite](scale, seed)


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _period_ratio(result, dt):
    """Forecast period over truth period on the first observable, or None if either is not oscillatory."""
    if result.truth is None or result.diverged:
        return None
    try:
        return dominant_period(result.predicted[:, 0], dt) / dominant_period(result.truth[:, 0], dt)
    except NotOscillatory:
        return None


def _forecast_summary(inst: Instance, model, test, dt: float, out_dir: Path, tag: str) -> dict:
    """Score forecasts from ``inst.root`` on every in-domain test trajectory; write CSVs for the first."""
    steps = max(inst.horizon, inst.long_steps)
    errors, diverged, skipped = [], [], []
    first = None
    for j, traj in enumerate(test):
        if not in_domain(model, traj):
            skipped.append(j)
            continue
        res = forecast_on(model, traj, inst.root, steps)
        if res.truth is None:
            raise InvalidArgument(f"test trajectory too short for a {steps}-step forecast from {inst.root}")
        errors.append(mean_forecast_error(res, inst.horizon))
        if res.diverged:
            diverged.append(j)
        if first is None:
            first, first_index = res, j
            write_forecast_csv(res, out_dir / f"forecast_{tag}.csv", dt)
            if res.predicted.shape[0]:
                write_error_curve_csv(forecast_error_curve(res), out_dir / f"forecast_errors_{tag}.csv", dt)
    if first is None:
        raise InvalidArgument("every test trajectory leaves the dictionary domain")
    mean = float(np.mean(errors))
    curve = forecast_error_curve(first) if first.predicted.shape[0] else np.array([])
    return {
        "root": inst.root,
        "horizon": inst.horizon,
        "steps": steps,
        "mean_error": finite_or_none(mean),
        "per_trajectory": [finite_or_none(e) for e in errors],
        "diverged_trajectories": diverged,
        "outside_domain_trajectories": skipped,
        "first": {
            "trajectory": first_index,
            "horizon_error": finite_or_none(mean_forecast_error(first, inst.horizon)),
            "diverged_at": first.diverged_at,
            "reason": first.reason,
            "steps_completed": int(first.predicted.shape[0]),
            "max_error": finite_or_none(float(curve.max())) if curve.size else None,
            "period_ratio": finite_or_none(_period_ratio(first, dt)),
        },
    }


def _skip_note(summary):
    skipped = summary["outside_domain_trajectories"]
    return f"forecasts skip test trajectories outside the dictionary domain: {skipped}" if skipped else ""


def run_instance(inst: Instance, out_dir, log=None):
    """Run every method of one instance; returns ``(rows, report, timing)``."""
    out = Path(out_dir) / inst.label
    out.mkdir(parents=True, exist_ok=True)
    rows, report, timing = [], {"instance": inst.label, "methods": []}, {}
    base = inst.config(inst.methods[0])
    try:
        dataset, _ = generate(base)
    except DDMDError as exc:
        for run in inst.methods:
            rows.append(_row(inst, run, "failed", detail=f"data generation: {type(exc).__name__}: {exc}"))
        return rows, report, timing
    dt = dataset.trajectories[0].dt
    for run in inst.methods:
        cfg = inst.config(run)
        tag = run.method + (f"-{run.variant}" if run.variant else "")
        tag = tag.replace("=", "-").replace(" ", "_")
        start = time.perf_counter()
        try:
            model, rep = fit(cfg, dataset)
            wall = rep.pop("wall_time", None)
            save_model(model, out / f"model_{tag}.json")
            summary = _forecast_summary(inst, model, dataset.test, dt, out, tag)
            variant = run.variant
            if run.method == "edmd":
                variant = f"degree={rep['selected']['degree']} lambda={rep['selected']['lambda']:g}"
            status = "ok" if not summary["diverged_trajectories"] else "forecast-diverged"
            notes = [n for n in (rep.get("test_note"), _skip_note(summary)) if n]
            rows.append(_row(inst, run, status, rep["train_error"], rep["test_error"], summary["mean_error"],
                             cfg.digest(), variant=variant, detail="; ".join(notes)))
            report["methods"].append({"method": run.method, "variant": variant, "tag": tag, "fit": rep,
                                      "forecast": summary})
        except DDMDError as exc:
            wall = None
            rows.append(_row(inst, run, "failed", config=cfg.digest(), detail=f"{type(exc).__name__}: {exc}"))
            report["methods"].append({"method": run.method, "variant": run.variant, "tag": tag,
                                      "error": f"{type(exc).__name__}: {exc}"})
        timing[tag] = {"wall_time": time.perf_counter() - start, "train_wall_time": wall}
        if log is not None:
            log(rows[-1])
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n")
    return rows, report, timing


def _row(inst, run, status, train=None, test=None, fc=None, config="", variant=None, detail=""):
    return {
        "schema": TABLE_SCHEMA, "suite": inst.suite, "scale": inst.scale, "instance": inst.label,
        "method": run.method, "variant": run.variant if variant is None else variant, "status": status,
        "train_pct": finite_or_none(train), "test_pct": finite_or_none(test), "forecast_root": inst.root,
        "forecast_horizon": inst.horizon, "forecast_pct": None if fc is None else 100.0 * fc,
        "config_sha256": config, "detail": detail,
    }


def _run_one(args):
    inst, out_dir = args
    return run_instance(inst, out_dir)


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])


def read_table(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        if r.get("schema") != TABLE_SCHEMA:
            raise InvalidArgument(f"{path} is not a {TABLE_SCHEMA} table")
    return rows


@dataclass
class BenchmarkResult:
    rows: list
    reports: dict
    timing: dict


def run_benchmark(suite: str, scale: str, out_dir, seed: int = 0, workers: int = 1, log=None) -> BenchmarkResult:
    """Run a suite and write ``table.csv``, per-instance artifacts and ``timing.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instances = suite_instances(suite, scale, seed)
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [(inst, out) for inst in instances]))
    else:
        results = [run_instance(inst, out, log) for inst in instances]
    rows, reports, timing = [], {}, {}
    for inst, (r, rep, t) in zip(instances, results):
        rows.extend(r)
        reports[inst.label] = rep
        timing[inst.label] = t
    write_table(rows, out / "table.csv")
    timing["total_wall_time"] = time.perf_counter() - start
    (out / "timing.json").write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n")
    return BenchmarkResult(rows, reports, timing)
