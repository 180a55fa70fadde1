"""Polynomial lifting maps for extended DMD.

Every dictionary exposes the same small surface: ``p`` (input dimension),
``dim`` (lifted dimension), ``lift(y)`` for a single sample or a batch of
rows, and ``to_dict()`` for the model file. The first ``p`` lifted entries are
always the raw observables, so reconstruction is coordinate selection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DictionaryTooLarge, InvalidArgument

DEFAULT_CAP = 20000
DOMAIN_TOL = 1e-9


def legendre_eval(k: int, x: float) -> float:
    """Legendre polynomial ``P_k(x)`` by the three-term recurrence."""
    if abs(x) > 1.0 + 1e-12:
        raise InvalidArgument(f"Legendre argument {x} outside [-1, 1]")
    return float(legendre_table(np.array([x], dtype=np.float64), k)[0, -1])


def legendre_table(x: np.ndarray, degree: int) -> np.ndarray:
    """Values ``P_0..P_degree`` at every entry of ``x``; trailing axis is the degree."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = x
    for k in range(1, degree):
        out[..., k + 1] = ((2 * k + 1) * x * out[..., k] - k * out[..., k - 1]) / (k + 1)
    return out


def monomial_table(x: np.ndarray, degree: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    for k in range(1, degree + 1):
        out[..., k] = out[..., k - 1] * x
    return out


def multi_indices(p: int, d: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    """All exponent tuples of total degree <= d in graded-lexicographic order.

    Returns an integer array of shape ``(C(p+d, d), p)`` whose first row is the
    zero tuple.
    """
    if p < 1 or d < 1:
        raise InvalidArgument("need p >= 1 and d >= 1")
    count = comb(p + d, d)
    if count > cap:
        raise DictionaryTooLarge(count, cap)
    out = np.zeros((count, p), dtype=np.int64)
    row = 1
    for k in range(1, d + 1):
        for combo in itertools.combinations_with_replacement(range(p), k):
            for j in combo:
                out[row, j] += 1
            row += 1
    return out


def estimate_domain_box(samples, margin: float = 0.1) -> list:
    """Per-coordinate ``(lo, hi)`` from data, widened by ``margin`` of the range."""
    x = np.asarray(samples, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    pad = np.where(span > 0, margin * span, margin * np.maximum(np.abs(hi), 1.0))
    return [(float(a), float(b)) for a, b in zip(lo - pad, hi + pad)]


@dataclass(frozen=True)
class PolyDictSpec:
    family: str
    p: int
    max_total_degree: int
    domain_box: tuple = None
    include_identity: bool = True
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.family not in ("legendre", "monomial"):
            raise InvalidArgument(f"unknown polynomial family {self.family!r}")
        if self.max_total_degree < 1 or self.p < 1:
            raise InvalidArgument("need p >= 1 and max_total_degree >= 1")
        if not self.include_identity:
            raise InvalidArgument("the identity prefix is mandatory")
        if self.domain_box is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.domain_box)
            if len(box) != self.p or any(not lo < hi for lo, hi in box):
                raise InvalidArgument("domain_box needs one (lo, hi) with lo < hi per coordinate")
            object.__setattr__(self, "domain_box", box)
        elif self.family == "legendre":
            raise InvalidArgument("legendre dictionaries need a domain_box")


def lifted_dim(spec: PolyDictSpec) -> int:
    count = comb(spec.p + spec.max_total_degree, spec.max_total_degree)
    if count > spec.cap:
        raise DictionaryTooLarge(count, spec.cap)
    return spec.p + count


class PolyDictionary:
    kind = "poly"

    def __init__(self, spec: PolyDictSpec):
        self.spec = spec
        self.p = spec.p
        self.alphas = multi_indices(spec.p, spec.max_total_degree, spec.cap)
        self.dim = spec.p + len(self.alphas)
        if spec.domain_box is not None:
            box = np.array(spec.domain_box)
            self._lo, self._hi = box[:, 0], box[:, 1]
        self._plan = self._build_plan()

    def _build_plan(self):
        # each tuple = (tuple with its last nonzero coordinate zeroed) * P_k(that coordinate)
        index = {tuple(a): i for i, a in enumerate(self.alphas)}
        levels = []
        degree = self.alphas.sum(axis=1)
        for k in range(1, self.spec.max_total_degree + 1):
            rows = np.flatnonzero(degree == k)
            parent, coord, power = [], [], []
            for r in rows:
                a = self.alphas[r].copy()
                j = int(np.flatnonzero(a)[-1])
                power.append(int(a[j]))
                coord.append(j)
                a[j] = 0
                parent.append(index[tuple(a)])
            levels.append((rows, np.array(parent), np.array(coord), np.array(power)))
        return levels

    def rescale(self, y: np.ndarray) -> np.ndarray:
        z = 2.0 * (y - self._lo) / (self._hi - self._lo) - 1.0
        bad = np.abs(z) > 1.0 + DOMAIN_TOL
        if np.any(bad):
            col = int(np.flatnonzero(bad.any(axis=0))[0])
            raise InvalidArgument(
                f"coordinate {col} outside the dictionary domain box {self.spec.domain_box[col]}"
            )
        return np.clip(z, -1.0, 1.0)

    def lift(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        single = y.ndim == 1
        y = np.atleast_2d(y)
        if y.shape[1] != self.p:
            raise InvalidArgument(f"expected {self.p} observables, got {y.shape[1]}")
        if self.spec.family == "legendre":
            table = legendre_table(self.rescale(y), self.spec.max_total_degree)
        else:
            if self.spec.domain_box is not None:
                self.rescale(y)
            table = monomial_table(y, self.spec.max_total_degree)
        basis = np.empty((y.shape[0], len(self.alphas)))
        basis[:, 0] = 1.0
        for rows, parent, coord, power in self._plan:
            basis[:, rows] = basis[:, parent] * table[:, coord, power]
        out = np.hstack([y, basis])
        return out[0] if single else out

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "kind": self.kind,
            "family": s.family,
            "p": s.p,
            "max_total_degree": s.max_total_degree,
            "domain_box": None if s.domain_box is None else [list(b) for b in s.domain_box],
            "cap": s.cap,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolyDictionary":
        box = doc.get("domain_box")
        return cls(PolyDictSpec(doc["family"], doc["p"], doc["max_total_degree"],
                                None if box is None else tuple(map(tuple, box)), cap=doc.get("cap", DEFAULT_CAP)))


def poly_lift(spec: PolyDictSpec, y) -> np.ndarray:
    return PolyDictionary(spec).lift(y)


class IdentityDictionary:
    """Plain DMD: the lifted state is the observable vector itself."""

    kind = "identity"

    def __init__(self, p: int):
        self.p = self.dim = int(p)

    def lift(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.p:
            raise InvalidArgument(f"expected {self.p} observables, got {y.shape[-1]}")
        return y.copy()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p}

    @classmethod
    def from_dict(cls, doc: dict) -> "IdentityDictionary":
        return cls(doc["p"])
