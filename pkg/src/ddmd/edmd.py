"""Snapshot matrices, the (group-sparse) EDMD operator fit and the model file.

Orientation: lifted snapshots are columns, so ``Y_f ~= K @ Y_p`` with
``K`` of shape ``(m, m)`` acting on the left. Column ``t`` of ``Y_p`` is
``psi(y_t)`` and column ``t`` of ``Y_f`` is ``psi(y_{t+1})`` from the same
trajectory. The stacking in Williams et al. is the transpose of this.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dictionaries import IdentityDictionary, PolyDictionary
from .errors import InvalidArgument, NumericalFailure
from .neural import MlpSpec, NeuralDictionary, init_params
from .numerics import Rng, lstsq

MODEL_SCHEMA = "ddmd-model"
MODEL_SCHEMA_VERSION = 1


@dataclass
class Snapshots:
    yp: np.ndarray  # (m, M)
    yf: np.ndarray  # (m, M)

    @property
    def m(self) -> int:
        return self.yp.shape[0]

    @property
    def M(self) -> int:
        return self.yp.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.yp).tobytes())
        h.update(np.ascontiguousarray(self.yf).tobytes())
        return h.hexdigest()


def build_snapshots(trajectories, dictionary) -> Snapshots:
    """Pool one-step pairs of every trajectory (never across a boundary)."""
    trajectories = list(trajectories)
    if not trajectories:
        raise InvalidArgument("no trajectories to build snapshots from")
    ps = {t.p for t in trajectories}
    if len(ps) != 1:
        raise InvalidArgument(f"trajectories disagree on observable count: {sorted(ps)}")
    if dictionary.p not in ps:
        raise InvalidArgument(f"dictionary expects p={dictionary.p}, data has p={ps.pop()}")
    past, future = [], []
    for traj in trajectories:
        if len(traj) < 2:
            raise InvalidArgument("every trajectory needs at least 2 samples")
        lifted = dictionary.lift(traj.samples)
        past.append(lifted[:-1])
        future.append(lifted[1:])
    return Snapshots(np.vstack(past).T.copy(), np.vstack(future).T.copy())


@dataclass
class EdmdConfig:
    lam: float = 0.0
    max_iter: int = 2000
    tol: float = 1e-9
    step_size: float = None  # None selects 1/L automatically

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgument("lambda must be non-negative")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")


@dataclass
class Solution:
    k: np.ndarray
    converged: bool = True
    iterations: int = 0
    objective: list = field(default_factory=list)


def group_soft_threshold(column, t: float) -> np.ndarray:
    """Proximal map of ``t * ||.||_2``: shrink the whole vector towards zero."""
    if t < 0:
        raise InvalidArgument("threshold must be non-negative")
    column = np.asarray(column, dtype=np.float64)
    norm = np.linalg.norm(column)
    if norm <= t:
        return np.zeros_like(column)
    return column * (1.0 - t / norm)


def _prox_columns(k: np.ndarray, t: float) -> np.ndarray:
    norms = np.linalg.norm(k, axis=0)
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = 1.0 - t / norms[keep]
    return k * scale


def group_norm(k: np.ndarray) -> float:
    return float(np.linalg.norm(k, axis=0).sum())


def lambda_max(snapshots: Snapshots) -> float:
    """Smallest lambda for which ``K = 0`` is optimal: max column norm of the gradient at 0."""
    grad0 = -(2.0 / snapshots.M) * (snapshots.yf @ snapshots.yp.T)
    return float(np.linalg.norm(grad0, axis=0).max())


def least_squares_operator(snapshots: Snapshots) -> np.ndarray:
    """``K = Y_f pinv(Y_p)``, the minimum-norm least-squares operator."""
    return lstsq(snapshots.yp.T, snapshots.yf.T).T


def solve(snapshots: Snapshots, config: EdmdConfig = None, k_init=None) -> Solution:
    """Fit K by least squares (lambda = 0) or monotone FISTA on the group-lasso objective.

    The regularised objective is ``(1/M) ||Y_f - K Y_p||_F^2 + lam * sum_j ||K[:, j]||_2``.
    """
    config = config or EdmdConfig()
    if snapshots.M < 1:
        raise InvalidArgument("need at least one snapshot pair")
    if config.lam == 0.0:
        k = least_squares_operator(snapshots) if k_init is None else np.array(k_init, dtype=np.float64)
        if not np.all(np.isfinite(k)):
            raise NumericalFailure("non-finite least-squares operator")
        return Solution(k, True, 0, [])

    m, M = snapshots.m, snapshots.M
    gram = snapshots.yp @ snapshots.yp.T
    cross = snapshots.yf @ snapshots.yp.T
    energy = float(np.sum(snapshots.yf**2))
    lam = config.lam

    def smooth(k):
        return (energy - 2.0 * np.sum(k * cross) + np.sum((k @ gram) * k)) / M

    def total(k):
        return smooth(k) + lam * group_norm(k)

    def grad(k):
        return (2.0 / M) * (k @ gram - cross)

    if config.step_size is None:
        lip = 2.0 * max(np.linalg.eigvalsh(gram)[-1], 1e-300) / M
    else:
        lip = 1.0 / config.step_size

    if k_init is None:
        k_init = least_squares_operator(snapshots)
    k_init = np.asarray(k_init, dtype=np.float64)
    zero = np.zeros((m, m))
    x = k_init if total(k_init) < total(zero) else zero
    fx = total(x)
    history = [fx]
    y, x_prev, t = x.copy(), x.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        gy, fy = grad(y), smooth(y)
        while True:
            z = _prox_columns(y - gy / lip, lam / lip)
            diff = z - y
            if smooth(z) <= fy + np.sum(gy * diff) + 0.5 * lip * np.sum(diff**2) + 1e-12 * abs(fy):
                break
            lip *= 2.0
        fz = total(z)
        if not np.isfinite(fz):
            raise NumericalFailure(f"non-finite objective at proximal iteration {it}")
        accepted = fz <= fx
        x_prev = x
        if accepted:
            x, f_old, fx = z, fx, fz
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_prev)
        t = t_new
        history.append(fx)
        if accepted and abs(f_old - fx) <= config.tol * max(abs(f_old), 1e-300):
            converged = True
            break
    return Solution(x, converged, it, history)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


@dataclass
class KoopmanModel:
    k: np.ndarray
    dictionary: object
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if self.k.shape != (self.dictionary.dim, self.dictionary.dim):
            raise InvalidArgument(f"K has shape {self.k.shape}, dictionary lifts to {self.dictionary.dim}")
        if not np.all(np.isfinite(self.k)):
            raise InvalidArgument("K contains non-finite entries")

    @property
    def p(self) -> int:
        return self.dictionary.p

    @property
    def m(self) -> int:
        return self.dictionary.dim

    def lift(self, y) -> np.ndarray:
        return self.dictionary.lift(y)

    def step_lifted(self, z) -> np.ndarray:
        """Advance lifted states (single vector or rows) one step.

        Uses a non-BLAS contraction so a row gives bit-identical results
        whether it is advanced alone or inside a batch.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 2:
            return np.einsum("ij,bj->bi", self.k, z)
        return np.einsum("ij,j->i", self.k, z)

    def predict_next(self, y) -> np.ndarray:
        return reconstruct(self, self.step_lifted(self.lift(y)))


def reconstruct(model: KoopmanModel, lifted) -> np.ndarray:
    """Observables from a lifted state: the identity prefix ``[I_p 0]``."""
    return np.asarray(lifted)[..., : model.p].copy()


def dictionary_from_dict(doc: dict):
    kinds = {"poly": PolyDictionary, "mlp": NeuralDictionary, "identity": IdentityDictionary}
    if doc.get("kind") not in kinds:
        raise InvalidArgument(f"unknown dictionary kind {doc.get('kind')!r}")
    return kinds[doc["kind"]].from_dict(doc)


def model_to_dict(model: KoopmanModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "schema_version": MODEL_SCHEMA_VERSION,
        "p": model.p,
        "m": model.m,
        "dictionary": model.dictionary.to_dict(),
        "k": model.k.tolist(),
        "meta": model.meta,
    }


def model_from_dict(doc: dict) -> KoopmanModel:
    if doc.get("schema") != MODEL_SCHEMA or doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise InvalidArgument("not a ddmd model file (schema/version mismatch)")
    model = KoopmanModel(np.array(doc["k"], dtype=np.float64), dictionary_from_dict(doc["dictionary"]),
                         dict(doc.get("meta", {})))
    if model.p != doc["p"]:
        raise InvalidArgument("model p does not match its dictionary")
    return model


def save_model(model: KoopmanModel, path):
    # json writes floats with shortest round-trip repr, so load(save(m)) is bit-exact
    Path(path).write_text(json.dumps(model_to_dict(model), indent=None, sort_keys=True) + "\n")


def load_model(path) -> KoopmanModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def params_digest(dictionary) -> str:
    return hashlib.sha256(json.dumps(dictionary.to_dict(), sort_keys=True).encode()).hexdigest()


def fit_edmd(trajectories, dictionary, config: EdmdConfig = None, k_init=None, meta=None):
    snaps = build_snapshots(trajectories, dictionary)
    sol = solve(snaps, config, k_init)
    info = {
        "method": "edmd",
        "lambda": (config or EdmdConfig()).lam,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "data_sha256": snaps.digest(),
    }
    info.update(meta or {})
    return KoopmanModel(sol.k, dictionary, info), sol


def fixed_dictionary_dmd(trajectories, mlp_spec: MlpSpec, seed: int) -> KoopmanModel:
    """DMD over a randomly initialised, frozen neural dictionary (no training).

    ``trajectories`` may be a :class:`~ddmd.systems.Dataset`, in which case its
    training split is used.
    """
    trajectories = trajectories.train if hasattr(trajectories, "train") else trajectories
    params = init_params(mlp_spec, Rng(seed).child("init"))
    dictionary = NeuralDictionary(mlp_spec, params)
    model, _ = fit_edmd(trajectories, dictionary, EdmdConfig(0.0),
                        meta={"method": "fixed-dict-dmd", "seed": int(seed), "params_sha256": params_digest(dictionary)})
    return model
