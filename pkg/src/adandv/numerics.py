"""Small numerical primitives shared by the estimators and the learner."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Optional, Sequence

import numpy as np


class SolverError(ArithmeticError):
    """Raised when a root finder is fed a NaN by its objective."""


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    tol: float
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty bracket [{self.lo}, {self.hi}]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def bisect(f: Callable[[float], float], b: Bracket) -> Optional[float]:
    """Bisection root search on ``b``.

    Returns ``None`` when ``f`` has the same (nonzero) sign at both ends.
    An endpoint at which ``f`` vanishes exactly is returned as the root.
    """
    lo, hi = b.lo, b.hi
    flo, fhi = f(lo), f(hi)
    if math.isnan(flo) or math.isnan(fhi):
        raise SolverError("objective returned NaN at bracket end")
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        return None
    for _ in range(b.max_iter):
        if hi - lo <= b.tol:
            break
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if math.isnan(fmid):
            raise SolverError(f"objective returned NaN at x={mid}")
        if fmid == 0.0:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_quantile(dof: int, p: float) -> float:
    """Wilson-Hilferty approximation to the chi-square quantile."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    z = NormalDist().inv_cdf(p)
    c = 2.0 / (9.0 * dof)
    return dof * (1.0 - c + z * math.sqrt(c)) ** 3


def softmax(v) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def quantile(values: Sequence[float], p: float) -> float:
    """Nearest-rank quantile: element ``ceil(p * M) - 1`` of the sorted values."""
    arr = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if arr.size == 0:
        raise ValueError("quantile of an empty sample")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    # guard against p*M landing a hair above an integer
    idx = math.ceil(round(p * arr.size, 9)) - 1
    return float(arr[max(idx, 0)])
