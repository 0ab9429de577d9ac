"""Sampling-based distinct-value estimators.

Every estimator takes a :class:`~adandv.profile.FrequencyProfile` and returns a
positive float.  Failures (overflow, no root, non-positive output) are replaced
by the sample NDV ``d`` and reported through the ``sanitized`` flags of
:func:`estimate_all`.  Raw values are otherwise left alone; in particular they
are not clamped to ``[d, N]``.

Two estimators have no closed form that is pinned down in the literature we
follow, and are implemented as follows:

* ``sj`` (smoothed jackknife) uses the second-order jackknife of Haas,
  Naughton, Seshadri and Stokes (1995)::

      q      = n / N
      D1     = d / (1 - (1 - q) f1 / n)
      g2(D)  = max(0, D / n**2 * sum_i i (i - 1) f_i + D / N - 1)
      D_sj   = (d - f1 (1 - q) ln(1 - q) g2(D1) / q) / (1 - (1 - q) f1 / n)

  which is ``d - K (d_{n-1} - d_n)`` with ``d_{n-1} - d_n = -f1 / n``.
* ``mom3`` multiplies the finite-population method-of-moments root (``mom2``)
  by ``1 + g2``, where ``g2`` is the squared coefficient of variation used by
  ``chao_lee``.  It is an approximation and is listed in :data:`APPROXIMATIONS`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import Bracket, SolverError, bisect, chi2_quantile, log_gamma
from .profile import FrequencyProfile

ESTIMATOR_NAMES = (
    "goodman",
    "gee",
    "eb",
    "chao",
    "shlosser",
    "chao_lee",
    "jackknife",
    "sichel",
    "bootstrap",
    "ht",
    "mom1",
    "mom2",
    "mom3",
    "sj",
)
M = len(ESTIMATOR_NAMES)
HYBRID_NAMES = ("hyb_skew", "hyb_gee")

APPROXIMATIONS = {
    "mom3": "mom2 root scaled by (1 + squared CV from chao_lee)",
    "sj": "Haas et al. second-order jackknife used for the smoothing constant K",
}

MOM1_UPPER = 1e12
ROOT_RTOL = 1e-6
ROOT_MAX_ITER = 200
SICHEL_EPS = 1e-9


class Fallback(Exception):
    """Raised inside an estimator to request a flagged fallback value."""

    def __init__(self, value: Optional[float] = None, reason: str = ""):
        super().__init__(reason)
        self.value = value


@dataclass(frozen=True)
class EstimateSet:
    estimates: np.ndarray
    sanitized: np.ndarray
    raw: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.estimates[ESTIMATOR_NAMES.index(name)])


@dataclass(frozen=True)
class SkewStatistic:
    u: float
    nbar: float
    threshold: float


@dataclass(frozen=True)
class SichelWork:
    g: float
    A: float
    B: float
    b_hat: float
    c_hat: float


def _items(p: FrequencyProfile):
    """(i, f_i) pairs over the nonzero profile entries."""
    idx = p.nonzero
    return idx, p.f[idx - 1].astype(np.float64)


def ht_kernel(x: float, n: int, N: int) -> float:
    """Probability that a value with ``x`` copies is missed by a size-``n`` sample."""
    if x > N - n:
        return 0.0
    return math.exp(
        log_gamma(N - x + 1)
        + log_gamma(N - n + 1)
        - log_gamma(N - n - x + 1)
        - log_gamma(N + 1)
    )


def _goodman(p: FrequencyProfile) -> float:
    n, N = p.n, p.N
    terms = []
    for i in p.nonzero.tolist():
        log_coef = (
            log_gamma(N - n + i) + log_gamma(n - i + 1) - log_gamma(N - n) - log_gamma(n + 1)
        )
        sign = 1.0 if i % 2 == 1 else -1.0
        terms.append(sign * math.exp(log_coef) * p.get(i))
    return p.d + math.fsum(terms)


def _gee(p: FrequencyProfile) -> float:
    return math.sqrt(p.N / p.n) * p.f1 + (p.d - p.f1)


def _eb(p: FrequencyProfile) -> float:
    return math.sqrt(p.N / p.n) * max(1, p.f1) + (p.d - p.f1)


def _chao(p: FrequencyProfile) -> float:
    if p.f2 == 0:
        return float(p.d)
    return p.d + p.f1 ** 2 / (2.0 * p.f2)


def _shlosser(p: FrequencyProfile) -> float:
    q = 1.0 - p.r
    i, fi = _items(p)
    num = float(np.sum(q ** i * fi))
    den = float(np.sum(i * p.r * q ** (i - 1) * fi))
    if den == 0.0:
        raise Fallback(reason="zero denominator")
    return p.d + p.f1 * num / den


def coverage_cv2(p: FrequencyProfile) -> tuple[float, float]:
    """Sample coverage ``1 - f1/n`` and the squared coefficient of variation."""
    coverage = 1.0 - p.f1 / p.n
    if coverage <= 0.0 or p.n < 2:
        return coverage, 0.0
    i, fi = _items(p)
    s = float(np.sum(i * (i - 1) * fi))
    cv2 = max(0.0, (p.d / coverage) * s / (p.n * (p.n - 1.0)) - 1.0)
    return coverage, cv2


def _chao_lee(p: FrequencyProfile) -> float:
    coverage, cv2 = coverage_cv2(p)
    if coverage <= 0.0:
        return float(p.d)
    return p.d / coverage + p.n * (1.0 - coverage) / coverage * cv2


def _jackknife(p: FrequencyProfile) -> float:
    return p.d + (p.n - 1) * p.f1 / p.n


def sichel_equation(g: float, p: FrequencyProfile) -> float:
    A = 2.0 * p.n / p.d - math.log(p.n / p.f1)
    B = 2.0 * p.f1 / p.d + math.log(p.n / p.f1)
    return (1.0 + g) * math.log(g) - A * g + B


def sichel_work(p: FrequencyProfile) -> Optional[SichelWork]:
    f1, n = p.f1, p.n
    if f1 == 0 or f1 >= n:
        return None
    lo = (f1 / n) * (1.0 + SICHEL_EPS)
    hi = 1.0 - SICHEL_EPS
    if not lo < hi:
        return None
    g = bisect(lambda t: sichel_equation(t, p), Bracket(lo, hi, 1e-12, ROOT_MAX_ITER))
    if g is None:
        return None
    A = 2.0 * n / p.d - math.log(n / f1)
    B = 2.0 * f1 / p.d + math.log(n / f1)
    b_hat = g * math.log(n * g / f1) / (1.0 - g)
    c_hat = (1.0 - g * g) / (n * g * g)
    return SichelWork(g=g, A=A, B=B, b_hat=b_hat, c_hat=c_hat)


def _sichel(p: FrequencyProfile) -> float:
    work = sichel_work(p)
    if work is None:
        raise Fallback(reason="no interior root")
    return 2.0 / (work.b_hat * work.c_hat)


def _bootstrap(p: FrequencyProfile) -> float:
    i, fi = _items(p)
    return p.d + float(np.sum(fi * (1.0 - i / p.n) ** p.n))


def _ht(p: FrequencyProfile) -> float:
    total = 0.0
    for i in p.nonzero.tolist():
        h = ht_kernel(p.N * i / p.n, p.n, p.N)
        if h >= 1.0 - 1e-12:
            raise Fallback(reason="inclusion probability vanishes")
        total += p.get(i) / (1.0 - h)
    return total


def _mom1(p: FrequencyProfile) -> float:
    d, n = p.d, p.n
    if d == n:
        raise Fallback(p.N, "all-distinct sample has no finite root")

    def g(D):
        return D * -math.expm1(-n / D) - d

    root = bisect(g, Bracket(float(d), MOM1_UPPER, ROOT_RTOL * d, ROOT_MAX_ITER))
    if root is None:
        raise Fallback(p.N, "no root below upper bracket")
    return root


def _mom2(p: FrequencyProfile) -> float:
    d, n, N = p.d, p.n, p.N
    if d == n:
        raise Fallback(N, "all-distinct sample pushes the root to N")

    def g(D):
        return D * (1.0 - ht_kernel(N / D, n, N)) - d

    root = bisect(g, Bracket(float(d), float(N), ROOT_RTOL * d, ROOT_MAX_ITER))
    if root is None:
        raise Fallback(N, "no root in [d, N]")
    return root


def _mom3(p: FrequencyProfile) -> float:
    base = _mom2(p)
    return base * (1.0 + coverage_cv2(p)[1])


def _sj(p: FrequencyProfile) -> float:
    d, n, N, f1 = p.d, p.n, p.N, p.f1
    if f1 == 0 or n <= 1:
        return float(d)
    try:
        q = n / N
        shrink = 1.0 - (1.0 - q) * f1 / n
        d1 = d / shrink
        i, fi = _items(p)
        cv2 = max(0.0, d1 / n ** 2 * float(np.sum(i * (i - 1) * fi)) + d1 / N - 1.0)
        value = (d - f1 * (1.0 - q) * math.log1p(-q) * cv2 / q) / shrink
    except (ValueError, ZeroDivisionError, OverflowError):
        return _jackknife(p)
    if not math.isfinite(value):
        return _jackknife(p)
    return value


_RAW: dict[str, Callable[[FrequencyProfile], float]] = {
    "goodman": _goodman,
    "gee": _gee,
    "eb": _eb,
    "chao": _chao,
    "shlosser": _shlosser,
    "chao_lee": _chao_lee,
    "jackknife": _jackknife,
    "sichel": _sichel,
    "bootstrap": _bootstrap,
    "ht": _ht,
    "mom1": _mom1,
    "mom2": _mom2,
    "mom3": _mom3,
    "sj": _sj,
}


def evaluate(name: str, p: FrequencyProfile) -> tuple[float, float, bool]:
    """Run one estimator; returns ``(value, raw, sanitized)``."""
    if p.n == p.N:
        return float(p.d), float(p.d), False
    try:
        raw = float(_RAW[name](p))
    except Fallback as fb:
        value = float(p.d) if fb.value is None else float(fb.value)
        return value, math.nan, True
    except (OverflowError, ZeroDivisionError, SolverError, ValueError):
        return float(p.d), math.nan, True
    if not math.isfinite(raw) or raw <= 0.0:
        return float(p.d), raw, True
    return raw, raw, False


def _public(name: str):
    def estimator(p: FrequencyProfile) -> float:
        return evaluate(name, p)[0]

    estimator.__name__ = name
    estimator.__qualname__ = name
    estimator.__doc__ = f"Sanitized ``{name}`` estimate of the population NDV."
    return estimator


goodman = _public("goodman")
gee = _public("gee")
eb = _public("eb")
chao = _public("chao")
shlosser = _public("shlosser")
chao_lee = _public("chao_lee")
jackknife = _public("jackknife")
sichel = _public("sichel")
bootstrap = _public("bootstrap")
horvitz_thompson = _public("ht")
mom1 = _public("mom1")
mom2 = _public("mom2")
mom3 = _public("mom3")
smoothed_jackknife = _public("sj")


def skew_u(p: FrequencyProfile) -> SkewStatistic:
    nbar = p.n / p.d
    i, fi = _items(p)
    u = float(np.sum(fi * (i - nbar) ** 2) / nbar)
    return SkewStatistic(u=u, nbar=nbar, threshold=chi2_quantile(max(1, p.n - 1), 0.975))


def _hybrid(p: FrequencyProfile, skewed: Callable[[FrequencyProfile], float]) -> float:
    stat = skew_u(p)
    if stat.u <= stat.threshold:
        return smoothed_jackknife(p)
    return skewed(p)


def hyb_skew(p: FrequencyProfile) -> float:
    """Smoothed jackknife on low-skew samples, Shlosser otherwise."""
    return _hybrid(p, shlosser)


def hyb_gee(p: FrequencyProfile) -> float:
    """Smoothed jackknife on low-skew samples, GEE otherwise."""
    return _hybrid(p, gee)


ALL_ESTIMATORS = {name: _public(name) for name in ESTIMATOR_NAMES}
ALL_ESTIMATORS.update(hyb_skew=hyb_skew, hyb_gee=hyb_gee)


def estimate_all(p: FrequencyProfile) -> EstimateSet:
    values = np.empty(M)
    raw = np.empty(M)
    flags = np.zeros(M, dtype=bool)
    for k, name in enumerate(ESTIMATOR_NAMES):
        values[k], raw[k], flags[k] = evaluate(name, p)
    return EstimateSet(estimates=values, sanitized=flags, raw=raw)
