"""Benchmark dynamical systems and trajectory generation.

Three families are provided: random partially observed linear systems
(POLS), the seven-species glycolytic oscillator and Kron-reduced classical
swing dynamics for multi-machine power networks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, SimulationDiverged, ValidationGateError
from .numerics import Rng, rk4_step


# --------------------------------------------------------------------------
# trajectories and datasets
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    dt: float
    samples: np.ndarray  # (T, p)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.shape[0] < 2:
            raise InvalidArgument("a trajectory needs at least 2 samples")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgument("trajectory contains non-finite samples")

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"y{i + 1}" for i in range(self.p)])
            for t, row in zip(self.times, self.samples):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path, meta=None) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        dt = float(data[1, 0] - data[0, 0]) if data.shape[0] > 1 else 1.0
        return cls(dt, data[:, 1:], dict(meta or {}))


@dataclass
class Dataset:
    trajectories: list
    split: list  # "train" / "test" per trajectory
    seed: int = 0

    def __post_init__(self):
        if len(self.split) != len(self.trajectories):
            raise InvalidArgument("split must label every trajectory")
        if "train" not in self.split or "test" not in self.split:
            raise InvalidArgument("train and test sets must both be non-empty")
        ps = {t.p for t in self.trajectories}
        dts = {round(t.dt, 12) for t in self.trajectories}
        if len(ps) != 1 or len(dts) != 1:
            raise InvalidArgument("all trajectories must share p and dt")

    @property
    def train(self) -> list:
        return [t for t, s in zip(self.trajectories, self.split) if s == "train"]

    @property
    def test(self) -> list:
        return [t for t, s in zip(self.trajectories, self.split) if s == "test"]

    @property
    def p(self) -> int:
        return self.trajectories[0].p


def make_dataset(trajectories, train_fraction: float, seed: int) -> Dataset:
    """Seeded shuffle of trajectory indices split by ``train_fraction``."""
    trajectories = list(trajectories)
    if len(trajectories) < 2:
        raise InvalidArgument("need at least 2 trajectories to split train/test")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgument("train_fraction must lie in (0, 1)")
    n = len(trajectories)
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    order = Rng(seed).child("split").permutation(n)
    split = ["test"] * n
    for i in order[:n_train]:
        split[int(i)] = "train"
    return Dataset(trajectories, split, seed)


# --------------------------------------------------------------------------
# partially observed linear systems
# --------------------------------------------------------------------------


@dataclass
class LinearSystemSpec:
    n: int
    p: int
    a: np.ndarray
    c: np.ndarray
    marginal: bool = False

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if not 1 <= self.p <= self.n:
            raise InvalidArgument("need 1 <= p <= n")
        if self.a.shape != (self.n, self.n) or self.c.shape != (self.p, self.n):
            raise InvalidArgument("a must be n x n and c must be p x n")
        if not (np.all(np.sum(self.c == 1.0, axis=1) == 1) and np.all((self.c == 0) | (self.c == 1))):
            raise InvalidArgument("c must select exactly one state per row")
        if not self.marginal and self.spectral_radius() >= 1.0:
            raise InvalidArgument("a is not stable; set marginal=True to allow this")

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.a))))


def _random_orthogonal(rng: Rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((n, n)))
    return q * np.sign(np.diag(r))


def random_linear_system(
    rng: Rng,
    n: int,
    p: int,
    oscillatory: bool = True,
    radius: tuple = (0.90, 0.99),
    block_radius: tuple = (0.5, 1.0),
    angle: tuple = (0.05, 0.5),
) -> LinearSystemSpec:
    """Random stable linear system observed through its first ``p`` states.

    The spectral radius is drawn uniformly from ``radius``. In oscillatory mode
    the dynamics are a block diagonal of damped rotations (moduli from
    ``block_radius``, angles in radians from ``angle``), plus a scalar block
    when ``n`` is odd, conjugated by a random orthogonal matrix.
    """
    if not 1 <= p <= n:
        raise InvalidArgument("need 1 <= p <= n")
    target = rng.uniform(low=radius[0], high=radius[1])
    if oscillatory:
        a = np.zeros((n, n))
        for i in range(0, n - 1, 2):
            r = rng.uniform(low=block_radius[0], high=block_radius[1])
            th = rng.uniform(low=angle[0], high=angle[1])
            a[i : i + 2, i : i + 2] = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        if n % 2:
            a[-1, -1] = rng.uniform(low=block_radius[0], high=block_radius[1])
        q = _random_orthogonal(rng, n)
        a = q @ a @ q.T
    else:
        a = rng.normal((n, n))
    a *= target / np.max(np.abs(np.linalg.eigvals(a)))
    c = np.eye(p, n)
    return LinearSystemSpec(n, p, a, c)


def simulate_linear(spec: LinearSystemSpec, x0, steps: int) -> Trajectory:
    if steps < 2:
        raise InvalidArgument("steps must be at least 2")
    x = np.asarray(x0, dtype=np.float64).reshape(spec.n)
    out = np.empty((steps, spec.p))
    for t in range(steps):
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(f"non-finite state at step {t}", step=t)
        out[t] = spec.c @ x
        with np.errstate(over="ignore", invalid="ignore"):
            x = spec.a @ x
    return Trajectory(1.0, out, {"system": "pols"})


# --------------------------------------------------------------------------
# glycolytic oscillator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GlycolysisParams:
    """Rate constants of the seven-species glycolysis model.

    Defaults are the standard oscillatory parameter set of Ruoff et al.
    (2003) as used by Daniels & Nemenman (2015).
    """

    j0: float = 2.5
    k1: float = 100.0
    k2: float = 6.0
    k3: float = 16.0
    k4: float = 100.0
    k5: float = 1.28
    k6: float = 12.0
    k_cap1: float = 0.52
    q: float = 4.0
    n_tot: float = 1.0
    a_tot: float = 4.0
    kappa: float = 13.0
    mu: float = 0.1
    k: float = 1.8

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise InvalidArgument(f"glycolysis parameter {f.name} must be positive")
        if self.q < 1:
            raise InvalidArgument("q must be >= 1")


# initial-condition box of the oscillatory regime
GLYCOLYSIS_IC_LOW = np.array([0.15, 0.19, 0.04, 0.10, 0.08, 0.14, 0.05])
GLYCOLYSIS_IC_HIGH = np.array([1.60, 2.16, 0.20, 0.35, 0.30, 2.67, 0.10])


def glycolysis_rhs(params: GlycolysisParams, s) -> np.ndarray:
    s1, s2, s3, s4, s5, s6, s7 = s
    v1 = params.k1 * s1 * s6 / (1.0 + (s6 / params.k_cap1) ** params.q)
    v2 = params.k2 * s2 * (params.n_tot - s5)
    v3 = params.k3 * s3 * (params.a_tot - s6)
    v4 = params.k4 * s4 * s5
    v6 = params.k6 * s2 * s5
    leak = params.kappa * (s4 - s7)
    return np.array(
        [
            params.j0 - v1,
            2.0 * v1 - v2 - v6,
            v2 - v3,
            v3 - v4 - leak,
            v2 - v4 - v6,
            -2.0 * v1 + 2.0 * v3 - params.k5 * s6,
            params.mu * leak - params.k * s7,
        ]
    )


def is_limit_cycle(samples, transient: int = 200, window: int = 100, rel: float = 0.01) -> bool:
    """True when every column keeps oscillating after ``transient`` samples.

    Every ``window``-sample sliding window must span a range larger than
    ``rel`` times the column mean, and the series must stay finite.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    x = x[transient:]
    if x.shape[0] < window or not np.all(np.isfinite(x)):
        return False
    views = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
    ranges = views.max(axis=-1) - views.min(axis=-1)
    return bool(np.all(ranges > rel * np.abs(x.mean(axis=0))))


# --------------------------------------------------------------------------
# swing dynamics
# --------------------------------------------------------------------------


@dataclass
class SwingParams:
    m: np.ndarray
    d: np.ndarray
    p_m: np.ndarray
    v: np.ndarray
    g: np.ndarray
    b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("m", "d", "p_m", "v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        self.g = np.asarray(self.g, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        n = self.m.size
        if any(getattr(self, k).size != n for k in ("d", "p_m", "v")):
            raise InvalidArgument("m, d, p_m, v must share one length")
        if self.g.shape != (n, n) or self.b.shape != (n, n):
            raise InvalidArgument("g and b must be n_gen x n_gen")
        if np.any(self.m <= 0) or np.any(self.d < 0):
            raise InvalidArgument("need m > 0 and d >= 0")
        if not (np.allclose(self.g, self.g.T) and np.allclose(self.b, self.b.T)):
            raise InvalidArgument("g and b must be symmetric")

    @property
    def n_gen(self) -> int:
        return self.m.size

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ("m", "d", "p_m", "v", "g", "b")}
        out["n_gen"] = self.n_gen
        out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "SwingParams":
        unknown = set(doc) - {"n_gen", "m", "d", "p_m", "v", "g", "b", "meta", "equilibrium"}
        if unknown:
            raise InvalidArgument(f"unknown keys in swing parameter file: {sorted(unknown)}")
        params = cls(doc["m"], doc["d"], doc["p_m"], doc["v"], doc["g"], doc["b"], dict(doc.get("meta", {})))
        if "n_gen" in doc and doc["n_gen"] != params.n_gen:
            raise InvalidArgument("n_gen does not match array lengths")
        if "equilibrium" in doc:
            params.meta["equilibrium"] = list(doc["equilibrium"])
        return params

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "SwingParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def bundled_swing_params() -> SwingParams:
    """Representative Kron-reduced 10-machine system shipped with the package."""
    text = resources.files("ddmd.data").joinpath("ieee39_reduced.json").read_text()
    return SwingParams.from_dict(json.loads(text))


def electrical_power(params: SwingParams, delta) -> np.ndarray:
    diff = delta[:, None] - delta[None, :]
    flows = params.g * np.cos(diff) + params.b * np.sin(diff)
    return params.v * (flows @ params.v)


def swing_rhs(params: SwingParams, state) -> np.ndarray:
    n = params.n_gen
    delta, omega = state[:n], state[n:]
    p_e = electrical_power(params, delta)
    domega = (-params.d * omega + params.p_m - p_e) / params.m
    return np.concatenate([omega, domega])


def swing_equilibrium(params: SwingParams) -> np.ndarray:
    """Equilibrium state (delta, 0) stored in the parameter file, else delta = 0."""
    n = params.n_gen
    delta = np.asarray(params.meta.get("equilibrium", np.zeros(n)), dtype=np.float64)
    return np.concatenate([delta, np.zeros(n)])


def perturbed_swing_ic(base, rng: Rng, delta_scale: float) -> np.ndarray:
    """Shift every rotor angle by an independent uniform draw in ``[-delta_scale, delta_scale]``."""
    if delta_scale < 0:
        raise InvalidArgument("delta_scale must be non-negative")
    base = np.asarray(base, dtype=np.float64)
    n = base.size // 2
    out = base.copy()
    if delta_scale > 0:
        out[:n] = base[:n] + rng.uniform(n, -delta_scale, delta_scale)
    return out


def swing_observables(states) -> np.ndarray:
    """Angles and speeds relative to machine 1: (delta_i - delta_1, omega_i - omega_1), i >= 2."""
    states = np.atleast_2d(states)
    n = states.shape[1] // 2
    delta, omega = states[:, :n], states[:, n:]
    return np.hstack([delta[:, 1:] - delta[:, :1], omega[:, 1:] - omega[:, :1]])


def is_damped_oscillation(series, min_crossings: int = 4) -> bool:
    """Oscillates about its mean at least ``min_crossings`` times and decays."""
    x = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(x)) or x.size < 8:
        return False
    centered = x - x[-max(x.size // 4, 2) :].mean()
    crossings = np.count_nonzero(np.diff(np.signbit(centered)))
    q = x.size // 4
    return crossings >= min_crossings and np.abs(centered[-q:]).max() < np.abs(centered[:q]).max()


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------


def simulate_ode(rhs, x0, dt: float, steps: int, substeps: int = 10, observe=None, meta=None) -> Trajectory:
    """Integrate ``x' = rhs(x)`` with RK4 at ``dt / substeps`` and sample every ``dt``.

    ``observe`` selects state coordinates; ``None`` keeps the full state.
    """
    if not dt > 0 or substeps < 1:
        raise InvalidArgument("need dt > 0 and substeps >= 1")
    if steps < 2:
        raise InvalidArgument("steps must be at least 2")
    x = np.asarray(x0, dtype=np.float64).copy()
    h = dt / substeps
    idx = np.arange(x.size) if observe is None else np.asarray(observe, dtype=int)
    out = np.empty((steps, idx.size))
    for t in range(steps):
        out[t] = x[idx]
        if t == steps - 1:
            break
        for s in range(substeps):
            k = t * substeps + s
            try:
                x = rk4_step(rhs, x, h, step=k)
            except SimulationDiverged as exc:
                raise SimulationDiverged(str(exc) + f" (t={k * h:.6g})", step=k, time=k * h) from exc
    return Trajectory(dt, out, dict(meta or {}))


def glycolysis_trajectories(
    params: GlycolysisParams,
    rng: Rng,
    count: int,
    steps: int,
    dt: float,
    substeps: int = 10,
    observe=None,
    burn_in: int = 0,
) -> list:
    """Trajectories from uniform random initial conditions in the oscillatory box.

    ``burn_in`` samples are simulated and discarded before recording.
    """
    rhs = lambda s: glycolysis_rhs(params, s)  # noqa: E731
    observe = list(range(7)) if observe is None else list(observe)
    out = []
    for _ in range(count):
        x0 = rng.uniform(7, 0.0, 1.0) * (GLYCOLYSIS_IC_HIGH - GLYCOLYSIS_IC_LOW) + GLYCOLYSIS_IC_LOW
        full = simulate_ode(rhs, x0, dt, burn_in + steps, substeps)
        out.append(
            Trajectory(dt, full.samples[burn_in:, observe], {"system": "glycolysis", "observed_species": observe})
        )
    return out


def check_glycolysis_gate(params: GlycolysisParams, dt: float = 0.01, substeps: int = 10, steps: int = 600, seed=0):
    """Refuse to proceed unless the parameters produce a sustained limit cycle."""
    rng = Rng(seed).child("gate")
    traj = glycolysis_trajectories(params, rng, 1, steps, dt, substeps)[0]
    if not is_limit_cycle(traj.samples):
        raise ValidationGateError(
            "glycolysis parameters do not produce a limit cycle "
            "(some species stops oscillating after the 200-sample transient)"
        )
    return traj


def swing_trajectories(params: SwingParams, rng: Rng, count: int, steps: int, dt: float, delta_scale: float,
                       substeps: int = 10) -> list:
    rhs = lambda s: swing_rhs(params, s)  # noqa: E731
    base = swing_equilibrium(params)
    out = []
    for _ in range(count):
        x0 = perturbed_swing_ic(base, rng, delta_scale)
        full = simulate_ode(rhs, x0, dt, steps, substeps)
        out.append(
            Trajectory(dt, swing_observables(full.samples),
                       {"system": "swing", "reference": "machine 1", "observables": "delta_i-delta_1, omega_i-omega_1"})
        )
    return out


def check_swing_gate(params: SwingParams, dt: float = 0.05, steps: int = 200, delta_scale: float = 0.3, seed=0):
    rng = Rng(seed).child("gate")
    traj = swing_trajectories(params, rng, 1, steps, dt, delta_scale)[0]
    if not is_damped_oscillation(traj.samples[:, 0]):
        raise ValidationGateError("swing parameters do not produce a damped oscillation")
    return traj


def linear_trajectories(spec: LinearSystemSpec, rng: Rng, count: int, steps: int) -> list:
    return [simulate_linear(spec, rng.uniform(spec.n, -1.0, 1.0), steps) for _ in range(count)]


def spec_to_dict(obj) -> dict:
    out = asdict(obj)
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in out.items()}
