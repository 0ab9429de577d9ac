"""Sampling, frequency profiles, exact column statistics and model features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ColumnData:
    """One column of opaque value tokens (ints, bytes or str)."""

    values: np.ndarray

    def __post_init__(self):
        if not isinstance(self.values, np.ndarray):
            self.values = _as_token_array(self.values)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("a column needs at least one row")

    @property
    def N(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ExactColumnStats:
    D: int
    F: dict
    N: int


@dataclass(frozen=True)
class FrequencyProfile:
    """Frequency-of-frequency counts of a sample.

    ``f[j - 1]`` is the number of distinct values seen exactly ``j`` times.
    """

    f: np.ndarray
    d: int
    n: int
    N: int
    nonzero: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.int64)
        object.__setattr__(self, "f", f)
        if f.ndim != 1 or f.size == 0 or (f < 0).any():
            raise ValueError("f must be a nonempty vector of counts")
        j = np.arange(1, f.size + 1)
        if int(f.sum()) != self.d or int((j * f).sum()) != self.n:
            raise ValueError("profile counts disagree with d or n")
        if not 1 <= self.d <= self.n <= self.N:
            raise ValueError(f"need 1 <= d <= n <= N, got d={self.d} n={self.n} N={self.N}")
        object.__setattr__(self, "nonzero", np.flatnonzero(f) + 1)

    @classmethod
    def from_counts(cls, f, N: int) -> "FrequencyProfile":
        f = np.asarray(f, dtype=np.int64)
        j = np.arange(1, f.size + 1)
        return cls(f=f, d=int(f.sum()), n=int((j * f).sum()), N=int(N))

    @property
    def r(self) -> float:
        return self.n / self.N

    def get(self, j: int) -> int:
        """f_j, zero outside the stored range."""
        return int(self.f[j - 1]) if 1 <= j <= self.f.size else 0

    @property
    def f1(self) -> int:
        return self.get(1)

    @property
    def f2(self) -> int:
        return self.get(2)


def _as_token_array(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "iub":
        return arr
    # strings and bytes compare as raw bytes
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        out[i] = v.encode() if isinstance(v, str) else v
    return out


def sample_size(N: int, rate: float) -> int:
    if not rate > 0 or rate > 1:
        raise ValueError(f"sampling rate must be in (0, 1], got {rate}")
    return max(1, min(N, math.floor(rate * N + 0.5)))


def sample_uniform(col: ColumnData, rate: float, seed: int) -> np.ndarray:
    """Draw ``max(1, round(rate*N))`` rows without replacement."""
    n = sample_size(col.N, rate)
    rng = np.random.default_rng(seed)
    idx = rng.permutation(col.N) if n == col.N else rng.choice(col.N, size=n, replace=False)
    return col.values[idx]


def _value_counts(tokens) -> np.ndarray:
    arr = tokens if isinstance(tokens, np.ndarray) else _as_token_array(tokens)
    if arr.dtype.kind in "iu" and arr.size and arr.min() >= 0 and arr.max() < 4 * arr.size + 1024:
        c = np.bincount(arr)
        return c[c > 0]
    _, counts = np.unique(arr, return_counts=True)
    return counts


def build_profile(sample, N: int) -> FrequencyProfile:
    counts = _value_counts(sample)
    if counts.size == 0:
        raise ValueError("cannot profile an empty sample")
    n = int(counts.sum())
    if N < n:
        raise ValueError("population smaller than sample")
    f = np.bincount(counts)[1:]
    return FrequencyProfile(f=f, d=int(counts.size), n=n, N=int(N))


def exact_stats(col: ColumnData) -> ExactColumnStats:
    counts = _value_counts(col.values)
    j, Fj = np.unique(counts, return_counts=True)
    F = {int(a): int(b) for a, b in zip(j, Fj)}
    return ExactColumnStats(D=int(counts.size), F=F, N=col.N)


def featurize(p: FrequencyProfile, H: int = 100) -> np.ndarray:
    """``[f_1 .. f_{H-3}, ln n, ln d, ln N]`` with zero padding / truncation."""
    if H < 4:
        raise ValueError("H must be at least 4")
    x = np.zeros(H, dtype=np.float64)
    width = min(H - 3, p.f.size)
    x[:width] = p.f[:width]
    x[H - 3:] = (math.log(p.n), math.log(p.d), math.log(p.N))
    return x
