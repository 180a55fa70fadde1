"""Config-driven workflow shared by the CLI and the benchmark suites.

Data generation, dataset files (per-trajectory CSV plus a JSON manifest),
method dispatch (EDMD sweep, deep DMD, fixed-dictionary DMD) and forecasts
against held-out trajectories.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .config import EdmdTraining, PolyDictConfig, RunConfig
from .dictionaries import PolyDictionary, PolyDictSpec, estimate_domain_box
from .edmd import KoopmanModel, build_snapshots, fixed_dictionary_dmd, solve
from .errors import DictionaryTooLarge, InvalidArgument, NumericalFailure
from .evaluation import forecast
from .metrics import METRIC_DEFINITION, one_step_percent_error
from .numerics import Rng
from .systems import (
    Dataset,
    SwingParams,
    Trajectory,
    bundled_swing_params,
    check_glycolysis_gate,
    check_swing_gate,
    glycolysis_trajectories,
    linear_trajectories,
    make_dataset,
    random_linear_system,
    spec_to_dict,
    swing_trajectories,
)
from .trainer import train

MANIFEST_SCHEMA = "ddmd-dataset"
MANIFEST_VERSION = 1


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


def generate(cfg: RunConfig):
    """Simulate the configured system; returns ``(Dataset, system_echo)``.

    Streams: ``system`` (random system draw), ``ics`` (initial conditions)
    and ``split`` (inside :func:`make_dataset`), all children of ``data.seed``.
    Validation gates run first and raise :class:`ValidationGateError`.
    """
    sys_cfg, data = cfg.system, cfg.data
    root = Rng(data.seed)
    total = data.length + data.burn_in
    if sys_cfg.kind == "pols":
        spec = random_linear_system(root.child("system"), sys_cfg.n, sys_cfg.p, sys_cfg.oscillatory)
        trajs = linear_trajectories(spec, root.child("ics"), data.trajectories, total)
        trajs = [Trajectory(t.dt, t.samples[data.burn_in:], {"system": "pols"}) for t in trajs]
        echo = {"kind": "pols", "oscillatory": sys_cfg.oscillatory, **spec_to_dict(spec)}
    elif sys_cfg.kind == "glycolysis":
        params = sys_cfg.params.build()
        check_glycolysis_gate(params, data.dt, data.substeps, seed=data.seed)
        trajs = glycolysis_trajectories(params, root.child("ics"), data.trajectories, data.length, data.dt,
                                        data.substeps, sys_cfg.observe, data.burn_in)
        echo = {"kind": "glycolysis", "params": spec_to_dict(params), "observe": list(sys_cfg.observe)}
    else:
        params = SwingParams.load(sys_cfg.params_file) if sys_cfg.params_file else bundled_swing_params()
        check_swing_gate(params, data.dt, delta_scale=sys_cfg.delta_scale, seed=data.seed)
        trajs = swing_trajectories(params, root.child("ics"), data.trajectories, total, data.dt,
                                   sys_cfg.delta_scale, data.substeps)
        trajs = [Trajectory(t.dt, t.samples[data.burn_in:], t.meta) for t in trajs]
        echo = {"kind": "swing", "params": params.to_dict(), "delta_scale": sys_cfg.delta_scale,
                "observables": "delta_i-delta_1, omega_i-omega_1 for i >= 2"}
    return make_dataset(trajs, data.train_fraction, data.seed), echo


def write_dataset(dataset: Dataset, out_dir, cfg: RunConfig = None, echo: dict = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (traj, split) in enumerate(zip(dataset.trajectories, dataset.split)):
        name = f"traj_{i:04d}.csv"
        traj.to_csv(out / name)
        files.append({"file": name, "split": split, "samples": len(traj)})
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "schema_version": MANIFEST_VERSION,
        "p": dataset.p,
        "dt": dataset.trajectories[0].dt,
        "seed": dataset.seed,
        "files": files,
        "system": echo or {},
    }
    if cfg is not None:
        manifest["config"] = cfg.model_dump(mode="json")
        manifest["config_sha256"] = cfg.digest()
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_dataset(path):
    """Load a dataset from its directory or manifest; returns ``(Dataset, manifest)``."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgument(f"cannot read dataset manifest {path}: {exc}") from None
    if manifest.get("schema") != MANIFEST_SCHEMA or manifest.get("schema_version") != MANIFEST_VERSION:
        raise InvalidArgument(f"{path} is not a ddmd dataset manifest")
    trajs = []
    for entry in manifest["files"]:
        t = Trajectory.from_csv(path.parent / entry["file"])
        trajs.append(Trajectory(manifest["dt"], t.samples, {"file": entry["file"]}))
    split = [e["split"] for e in manifest["files"]]
    return Dataset(trajs, split, manifest.get("seed", 0)), manifest


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def in_domain(model, traj: Trajectory) -> bool:
    """True when every sample of ``traj`` can be lifted by the model's dictionary."""
    try:
        model.lift(traj.samples)
    except InvalidArgument:
        return False
    return True


def _safe_error(model, trajectories):
    """One-step percent error and a note; ``(None, reason)`` if no trajectory fits the dictionary domain.

    Polynomial dictionaries only accept inputs inside their frozen domain box.
    Trajectories that leave it are left out of the score and the note says how many.
    """
    trajectories = list(trajectories)
    try:
        return one_step_percent_error(model, trajectories), None
    except InvalidArgument as exc:
        reason = str(exc)
    inside = [t for t in trajectories if in_domain(model, t)]
    if not inside:
        return None, reason
    dropped = len(trajectories) - len(inside)
    return one_step_percent_error(model, inside), f"{dropped} of {len(trajectories)} trajectories outside the dictionary domain were not scored"


def edmd_sweep(dataset: Dataset, dict_cfg: PolyDictConfig, train_cfg: EdmdTraining, margin_samples=None):
    """Fit EDMD over the degree x lambda grid and select by one-step train error.

    Returns ``(best_model, rows)``. Each row records degree, lambda, dictionary
    size, train/test error and a status. Regularised solves on dictionaries
    larger than ``max_regularized_dim`` are skipped and marked ``capacity``.
    Raises :class:`DictionaryTooLarge` when no degree fits under the cap.
    """
    p = dataset.p
    samples = np.vstack([t.samples for t in (margin_samples or dataset.train)])
    box = estimate_domain_box(samples, dict_cfg.margin) if dict_cfg.family == "legendre" else None
    degrees = train_cfg.degrees if train_cfg.degrees is not None else [dict_cfg.max_total_degree]
    rows, best, too_large = [], None, None
    for d in degrees:
        try:
            dictionary = PolyDictionary(PolyDictSpec(dict_cfg.family, p, d, box, cap=dict_cfg.cap))
        except DictionaryTooLarge as exc:
            too_large = exc
            rows.append({"degree": d, "lambda": None, "m": exc.size, "status": "capacity", "detail": str(exc)})
            continue
        snaps = build_snapshots(dataset.train, dictionary)
        for lam in train_cfg.lambdas:
            row = {"degree": d, "lambda": lam, "m": dictionary.dim}
            if lam > 0 and dictionary.dim > train_cfg.max_regularized_dim:
                row.update(status="capacity",
                           detail=f"regularised solve skipped: m={dictionary.dim} > {train_cfg.max_regularized_dim}")
                rows.append(row)
                continue
            try:
                sol = solve(snaps, train_cfg.solver(lam))
            except NumericalFailure as exc:
                row.update(status="numerical", detail=str(exc))
                rows.append(row)
                continue
            model = KoopmanModel(sol.k, dictionary, {
                "method": "edmd", "degree": d, "lambda": lam, "converged": sol.converged,
                "iterations": sol.iterations, "data_sha256": snaps.digest()})
            tr, _ = _safe_error(model, dataset.train)
            te, reason = _safe_error(model, dataset.test)
            row.update(train_error=tr, test_error=te, converged=sol.converged, iterations=sol.iterations,
                       zero_columns=int(np.sum(np.linalg.norm(sol.k, axis=0) == 0.0)),
                       status="ok" if te is not None else "test-outside-domain", detail=reason)
            rows.append(row)
            if te is not None and (best is None or tr < best[0]):
                best = (tr, model, row)
    if best is None:
        if too_large is not None and all(r["status"] == "capacity" for r in rows):
            raise too_large
        raise NumericalFailure("no EDMD configuration produced a usable model")
    best[2]["selected"] = True
    return best[1], rows


def fit(cfg: RunConfig, dataset: Dataset, log=None):
    """Train the configured method; returns ``(model, report)``.

    The report is a plain dict; its ``wall_time`` entry (deep DMD only) should
    be split off with :func:`split_timing` before writing so reruns are
    byte-identical. ``log`` receives deep-training progress records.
    """
    method = cfg.training.method
    report = {"method": method, "metric": METRIC_DEFINITION, "config_sha256": cfg.digest()}
    if method == "edmd":
        model, rows = edmd_sweep(dataset, cfg.dictionary, cfg.training)
        report["sweep"] = rows
        sel = next(r for r in rows if r.get("selected"))
        report["selected"] = {"degree": sel["degree"], "lambda": sel["lambda"]}
    elif method == "ddmd":
        spec = cfg.dictionary.build(dataset.p)
        model, rep = train(dataset, spec, cfg.training.build(cfg.data.seed), log=log)
        doc = rep.to_dict()
        report["wall_time"] = doc.pop("wall_time")
        report.update(doc)
    else:
        spec = cfg.dictionary.build(dataset.p)
        model = fixed_dictionary_dmd(dataset, spec, cfg.data.seed)
    report["train_error"], report["train_note"] = _safe_error(model, dataset.train)
    report["test_error"], report["test_note"] = _safe_error(model, dataset.test)
    return model, report


def split_timing(report: dict):
    """Separate wall-clock fields from a report; returns ``(report, timing)``."""
    report = dict(report)
    timing = {"wall_time": report.pop("wall_time", None)}
    return report, timing


# --------------------------------------------------------------------------
# forecasting against data
# --------------------------------------------------------------------------


def forecast_on(model, traj: Trajectory, root: int, steps: int, mode: str = "lifted"):
    """Forecast from sample ``root`` of ``traj``; truth attached when the trajectory is long enough."""
    if not 0 <= root < len(traj):
        raise InvalidArgument(f"root index {root} outside trajectory of length {len(traj)}")
    if traj.p != model.p:
        raise InvalidArgument(f"model expects p={model.p}, data has p={traj.p}")
    truth = traj.samples[root + 1 : root + 1 + steps] if root + steps < len(traj) else None
    return forecast(model, traj.samples[root], steps, mode, truth=truth, root_index=root)


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
