"""Multi-step forecasting, spectra, eigenfunctions and dictionary sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .edmd import KoopmanModel, reconstruct
from .errors import InvalidArgument, NotOscillatory
from .metrics import relative_errors
from .numerics import eig

MODES = ("lifted", "relift")


@dataclass
class ForecastResult:
    predicted: np.ndarray  # rows are steps 1..T after the root
    truth: np.ndarray = None
    mode: str = "lifted"
    root_index: int = 0
    diverged_at: int = None  # first step that failed, if any
    reason: str = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


def forecast(model: KoopmanModel, y0, steps: int, mode: str = "lifted", truth=None, root_index: int = 0):
    """Roll the model forward ``steps`` times from the single observation ``y0``.

    ``lifted``: iterate ``z <- K z`` from ``z = psi(y0)`` and read the prefix.
    ``relift``: reconstruct after every step and lift the reconstruction again.
    A non-finite iterate (or, for polynomial dictionaries, leaving the domain
    box under relifting) truncates the result and records the step.
    """
    if steps < 1:
        raise InvalidArgument("steps must be >= 1")
    if mode not in MODES:
        raise InvalidArgument(f"mode must be one of {MODES}")
    y0 = np.asarray(y0, dtype=np.float64).ravel()
    if y0.size != model.p:
        raise InvalidArgument(f"model expects {model.p} observables, got {y0.size}")
    out = np.empty((steps, model.p))
    diverged, reason = None, None
    z = model.lift(y0)
    y = y0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            if mode == "lifted":
                z = model.step_lifted(z)
                y = reconstruct(model, z)
            else:
                try:
                    y = reconstruct(model, model.step_lifted(model.lift(y)))
                except InvalidArgument as exc:
                    diverged, reason = t + 1, str(exc)
                    break
            if not np.all(np.isfinite(y)):
                diverged, reason = t + 1, "non-finite iterate"
                break
            out[t] = y
    if diverged is not None:
        out = out[: diverged - 1]
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape != (steps, model.p):
            raise InvalidArgument(f"truth must have shape {(steps, model.p)}, got {truth.shape}")
    return ForecastResult(out, truth, mode, root_index, diverged, reason)


def forecast_error_curve(result: ForecastResult) -> np.ndarray:
    """Per-step relative error of the (possibly truncated) forecast."""
    if result.truth is None:
        raise InvalidArgument("forecast has no truth to compare against")
    n = result.predicted.shape[0]
    return relative_errors(result.predicted, result.truth[:n])


def mean_forecast_error(result: ForecastResult, steps: int = None) -> float:
    """Mean relative error over the first ``steps`` steps; ``inf`` if it diverged earlier."""
    steps = steps or result.truth.shape[0]
    if result.diverged and result.diverged_at <= steps:
        return float("inf")
    return float(forecast_error_curve(result)[:steps].mean())


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    modes: np.ndarray  # right eigenvectors as columns
    eigenfunction_weights: np.ndarray  # left eigenvectors as rows
    degraded: bool = False


def spectrum(model: KoopmanModel) -> SpectrumReport:
    s = eig(model.k)
    return SpectrumReport(s.eigenvalues, s.right_eigenvectors, s.left_eigenvectors, s.degraded)


def eigenfunction_eval(model: KoopmanModel, spec: SpectrumReport, i: int, y) -> complex:
    """Koopman eigenfunction ``phi_i(y) = w_i . psi(y)``."""
    if not 0 <= i < model.m:
        raise InvalidArgument(f"mode index {i} out of range")
    return complex(spec.eigenfunction_weights[i] @ model.lift(y))


@dataclass
class BasisSweepReport:
    swept_dim: int
    grid: np.ndarray
    responses: np.ndarray  # (n_points, m)


def basis_sweep(model: KoopmanModel, dim: int, center, radius: float, n_points: int) -> BasisSweepReport:
    """Dictionary response to moving one observable through ``center[dim] +- radius``."""
    if n_points < 2:
        raise InvalidArgument("n_points must be >= 2")
    if not 0 <= dim < model.p:
        raise InvalidArgument(f"dimension {dim} out of range")
    if not radius > 0:
        raise InvalidArgument("radius must be positive")
    center = np.asarray(center, dtype=np.float64).ravel()
    grid = np.linspace(-radius, radius, n_points)
    ys = np.repeat(center[None, :], n_points, axis=0)
    ys[:, dim] = center[dim] + grid
    return BasisSweepReport(dim, grid, model.lift(ys))


def _crossing_times(x: np.ndarray, dt: float, band: float) -> np.ndarray:
    """Zero-crossing times with hysteresis ``band`` so small ripple is ignored."""
    times = []
    state = 0
    last_zero = None
    for i in range(x.size):
        if i > 0 and np.signbit(x[i]) != np.signbit(x[i - 1]):
            frac = x[i - 1] / (x[i - 1] - x[i]) if x[i - 1] != x[i] else 0.0
            last_zero = (i - 1 + frac) * dt
        if x[i] > band and state <= 0:
            if state < 0 and last_zero is not None:
                times.append(last_zero)
            state = 1
        elif x[i] < -band and state >= 0:
            if state > 0 and last_zero is not None:
                times.append(last_zero)
            state = -1
    return np.array(times)


def dominant_period(series, dt: float, hysteresis: float = 0.1) -> float:
    """Oscillation period as twice the mean spacing of successive mean crossings."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise NotOscillatory("series contains non-finite values")
    x = x - x.mean()
    amp = np.abs(x).max()
    if amp == 0:
        raise NotOscillatory("constant series")
    times = _crossing_times(x, dt, hysteresis * amp)
    if times.size < 4:
        raise NotOscillatory(f"only {times.size} mean crossings; need at least 4")
    return float(2.0 * np.diff(times).mean())


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    return f"{v:.17g}"


def write_forecast_csv(result: ForecastResult, path, dt: float = 1.0):
    p = result.predicted.shape[1] if result.predicted.size else (result.truth.shape[1] if result.truth is not None else 0)
    header = ["t"] + [f"yhat{i + 1}" for i in range(p)]
    if result.truth is not None:
        header += [f"ytrue{i + 1}" for i in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, row in enumerate(result.predicted):
            line = [_fmt((k + 1) * dt)] + [_fmt(v) for v in row]
            if result.truth is not None:
                line += [_fmt(v) for v in result.truth[k]]
            w.writerow(line)


def write_error_curve_csv(errors, path, dt: float = 1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "relative_error"])
        for k, e in enumerate(errors):
            w.writerow([_fmt((k + 1) * dt), _fmt(e)])


def write_spectrum_csv(report: SpectrumReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["re", "im", "abs"])
        for z in report.eigenvalues:
            w.writerow([_fmt(z.real), _fmt(z.imag), _fmt(abs(z))])


def write_sweep_csv(report: BasisSweepReport, path):
    m = report.responses.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"psi{i + 1}" for i in range(m)])
        for t, row in zip(report.grid, report.responses):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])
