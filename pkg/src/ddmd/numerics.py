"""Dense linear algebra, eigendecomposition, RK4 integration and a portable RNG.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The SVD and
eigen routines delegate to LAPACK through numpy; this module adds the
tolerance handling, error mapping and accuracy bookkeeping the rest of the
package relies on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalFailure, SimulationDiverged

ABS_TOL = 1e-10
REL_TOL = 1e-8

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def as_mat(a, name="matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return a


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator (a xorshift-multiply mixer over a Weyl sequence).

    Output ``i`` (1-based) is ``mix(seed + i * 0x9E3779B97F4A7C15 mod 2**64)``,
    so the stream is identical on every platform and blocks of any size can be
    produced with vectorised integer arithmetic. Gaussians use Box-Muller on
    consecutive uniform pairs.

    A generator is single-owner state. Use :meth:`child` to derive independent
    streams for separate purposes instead of sharing one.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def child(self, name: str) -> "Rng":
        digest = hashlib.blake2b(name.encode(), digest_size=8).digest()
        salt = int.from_bytes(digest, "little")
        base = np.array([(self.seed ^ salt) & _MASK64], dtype=np.uint64)
        return Rng(int(_splitmix(base)[0]))

    def spawn(self) -> "Rng":
        return Rng(int(self.next_u64(1)[0]))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GAMMA
            return _splitmix(z)

    def uniform(self, size=None, low=0.0, high=1.0):
        """Uniform samples on ``[low, high)`` with 53-bit resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        return float(out[0]) if size is None else out.reshape(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        half = (n + 1) // 2
        u = self.uniform(2 * half).reshape(half, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = loc + scale * z[:n]
        return float(out[0]) if size is None else out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")

    def bernoulli_mask(self, shape, keep: float) -> np.ndarray:
        return self.uniform(shape) < keep


def _svd(a: np.ndarray):
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc


def pinv(a, tol: float = 0.0) -> np.ndarray:
    """Moore-Penrose pseudoinverse.

    Singular values below ``tol * sigma_max`` are dropped. ``tol=0`` selects
    ``max(rows, cols) * eps``.
    """
    a = as_mat(a)
    if tol < 0:
        raise InvalidArgument("tol must be non-negative")
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    u, s, vt = _svd(a)
    cutoff = (tol or max(a.shape) * np.finfo(float).eps) * (s[0] if s.size else 0.0)
    keep = s > cutoff
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def lstsq(a, b, tol: float = 0.0) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a @ x = b``."""
    a = as_mat(a, "a")
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    b = as_mat(b, "b")
    if a.shape[0] != b.shape[0]:
        raise InvalidArgument(f"row mismatch: a has {a.shape[0]}, b has {b.shape[0]}")
    x = pinv(a, tol) @ b
    return x[:, 0] if squeeze else x


@dataclass(frozen=True)
class ComplexSpectrum:
    eigenvalues: np.ndarray  # complex, shape (m,)
    right_eigenvectors: np.ndarray  # columns, shape (m, m)
    left_eigenvectors: np.ndarray  # rows, shape (m, m)
    degraded: bool = False

    def pairs(self):
        return [(float(z.real), float(z.imag)) for z in self.eigenvalues]


def _match(targets: np.ndarray, candidates: np.ndarray) -> tuple[np.ndarray, float]:
    """Greedy nearest matching of each target to a distinct candidate."""
    order = np.argsort(-np.abs(targets), kind="stable")
    free = np.ones(candidates.size, dtype=bool)
    idx = np.empty(targets.size, dtype=int)
    worst = 0.0
    for i in order:
        dist = np.where(free, np.abs(candidates - targets[i]), np.inf)
        j = int(np.argmin(dist))
        free[j] = False
        idx[i] = j
        worst = max(worst, dist[j] / max(1.0, abs(targets[i])))
    return idx, worst


def eig(a, pair_tol: float = 1e-6) -> ComplexSpectrum:
    """Eigenvalues with unit-norm right and left eigenvectors.

    Left eigenvectors come from the decomposition of ``a.T`` matched to the
    right spectrum by eigenvalue. ``degraded`` is set when the matrix looks
    defective: poor residuals, an ill-conditioned eigenvector basis, or an
    eigenvalue of ``a.T`` that could not be paired within ``pair_tol``.
    """
    a = as_mat(a)
    if a.shape[0] != a.shape[1]:
        raise InvalidArgument(f"eig needs a square matrix, got {a.shape}")
    try:
        lam, v = np.linalg.eig(a)
        mu, w = np.linalg.eig(a.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"QR iteration did not converge: {exc}") from exc
    lam = lam.astype(complex)
    v = v.astype(complex)
    order = np.lexsort((-lam.imag, -np.abs(lam)))
    lam, v = lam[order], v[:, order]
    idx, worst = _match(lam, mu.astype(complex))
    w = w.astype(complex)[:, idx].T
    w /= np.linalg.norm(w, axis=1, keepdims=True)

    scale = max(np.linalg.norm(a, 2), ABS_TOL)
    resid = np.linalg.norm(a @ v - v * lam, axis=0).max() if lam.size else 0.0
    cond = np.linalg.cond(v) if lam.size else 1.0
    degraded = bool(resid > REL_TOL * scale or cond > 1e12 or worst > pair_tol)
    return ComplexSpectrum(lam, v, w, degraded)


def rk4_step(f, x, h: float, step: int = 0) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of ``x' = f(x)``."""
    if not h > 0:
        raise InvalidArgument("step size must be positive")
    x = np.asarray(x, dtype=np.float64)
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise SimulationDiverged(f"non-finite stage evaluation at step {step}", step=step)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
