"""Synthetic columns, CSV ingestion, and labelled dataset construction."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .estimators import EstimateSet, estimate_all
from .profile import ColumnData, FrequencyProfile, build_profile, exact_stats, sample_uniform

KINDS = ("zipf", "uniform", "geometric")
GEOMETRIC_TAIL = 5.0


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    N: int
    V: Optional[int] = None
    s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"kind: unknown generator {self.kind!r}, expected one of {KINDS}")
        if not int(self.N) >= 1:
            raise DataError(f"N: must be >= 1, got {self.N}")
        if self.V is not None and not int(self.V) >= 1:
            raise DataError(f"V: must be >= 1, got {self.V}")
        if self.kind == "zipf" and not self.s > 0:
            raise DataError(f"s: zipf skew must be > 0, got {self.s}")

    @property
    def domain(self) -> int:
        if self.V is not None:
            return int(self.V)
        return max(1, self.N // 10) if self.kind == "zipf" else self.N


def value_probabilities(spec: GeneratorSpec) -> np.ndarray:
    """Probabilities of values ``1..V`` under ``spec``."""
    i = np.arange(1, spec.domain + 1, dtype=np.float64)
    if spec.kind == "zipf":
        w = i ** -spec.s
    elif spec.kind == "uniform":
        w = np.ones_like(i)
    else:
        # success probability chosen so that value V sits ~e^-5 below value 1
        q = min(1.0, GEOMETRIC_TAIL / spec.domain)
        w = (1.0 - q) ** (i - 1) if q < 1.0 else (i == 1).astype(np.float64)
    return w / w.sum()


def gen_column(spec: GeneratorSpec) -> ColumnData:
    """Draw ``N`` values by inverse CDF over the finite value distribution."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform":
        values = rng.integers(1, spec.domain + 1, size=spec.N)
    else:
        cdf = np.cumsum(value_probabilities(spec))
        cdf[-1] = 1.0
        values = np.searchsorted(cdf, rng.random(spec.N), side="right") + 1
    return ColumnData(values.astype(np.int64))


def ingest_csv(path, column: Union[str, int], drop_empty: bool = False) -> ColumnData:
    """Read one column of a headed CSV file as opaque strings."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    values = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}:{reader.line_num}: {exc}") from None
        if isinstance(column, int):
            if not 0 <= column < len(header):
                raise DataError(f"{path}: column index {column} out of range")
            pos = column
        elif column in header:
            pos = header.index(column)
        else:
            raise DataError(f"{path}: no column named {column!r}")
        try:
            for row in reader:
                cell = row[pos] if pos < len(row) else ""
                if cell == "" and drop_empty:
                    continue
                values.append(cell)
        except csv.Error as exc:
            raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    if not values:
        raise DataError(f"{path}: column {column!r} has no rows")
    return ColumnData(values)


@dataclass
class LabeledColumn:
    profile: FrequencyProfile
    D: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.D <= self.profile.N:
            raise DataError(f"true NDV {self.D} outside [1, {self.profile.N}]")

    @cached_property
    def estimates(self) -> EstimateSet:
        return estimate_all(self.profile)

    def digest(self) -> str:
        p = self.profile
        payload = json.dumps([p.f.tolist(), p.n, p.d, p.N, self.D], separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_record(self, split: str = "") -> dict:
        p = self.profile
        return {
            "split": split,
            "provenance": self.provenance,
            "N": p.N,
            "n": p.n,
            "d": p.d,
            "D": self.D,
            "f": p.f.tolist(),
            "digest": self.digest(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledColumn":
        profile = FrequencyProfile(f=np.asarray(rec["f"], dtype=np.int64), d=rec["d"], n=rec["n"], N=rec["N"])
        col = cls(profile, int(rec["D"]), rec.get("provenance", {}))
        if "digest" in rec and rec["digest"] != col.digest():
            raise DataError(f"digest mismatch for record {rec.get('provenance')}")
        return col


def label_column(col: ColumnData, rate: float, seed: int, provenance: Optional[dict] = None) -> LabeledColumn:
    sample = sample_uniform(col, rate, seed)
    profile = build_profile(sample, col.N)
    return LabeledColumn(profile, exact_stats(col).D, dict(provenance or {}))


def _source_key(src) -> str:
    if isinstance(src, GeneratorSpec):
        return json.dumps(asdict(src), sort_keys=True)
    return json.dumps([str(src[0]), src[1]]) if isinstance(src, tuple) else str(src)


def split_counts(total: int, proportions=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """Floor the train and validation shares; the remainder goes to test."""
    n_train = math.floor(round(total * proportions[0], 9))
    n_val = math.floor(round(total * proportions[1], 9))
    return n_train, n_val, total - n_train - n_val


def _label_source(args) -> LabeledColumn:
    src, rate, col_seed = args
    if isinstance(src, GeneratorSpec):
        column = gen_column(src)
        prov = {"generator": asdict(src)}
    else:
        path, column_name = src
        column = ingest_csv(path, column_name)
        prov = {"file": str(path), "column": column_name}
    return label_column(column, rate, col_seed, prov)


def make_dataset(
    sources: Sequence,
    rate: float,
    seed: int,
    proportions=(0.70, 0.15, 0.15),
    workers: int = 1,
):
    """Label every source column and split at column granularity.

    ``sources`` holds :class:`GeneratorSpec` objects and/or ``(csv_path, column)``
    pairs.  Sources are ordered by a canonical key before shuffling, so the
    split does not depend on input order.  ``workers > 1`` labels columns in
    a process pool; results are identical to the serial path.
    """
    if not sources:
        raise DataError("no sources")
    keyed = sorted(sources, key=_source_key)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(keyed))
    n_train, n_val, _ = split_counts(len(keyed), proportions)
    bounds = {"train": (0, n_train), "validation": (n_train, n_train + n_val), "test": (n_train + n_val, len(keyed))}
    jobs = [
        (keyed[i], rate, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        for i in range(len(keyed))
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            labelled = list(pool.map(_label_source, jobs, chunksize=8))
    else:
        labelled = [_label_source(job) for job in jobs]
    out = {}
    for name, (lo, hi) in bounds.items():
        out[name] = [labelled[i] for i in sorted(perm[lo:hi].tolist())]
    return out["train"], out["validation"], out["test"]


def random_specs(count: int, seed: int, n_range=(10_000, 1_000_000), skews=(1.2, 1.5, 2.0)) -> list[GeneratorSpec]:
    """A mix of zipf (each skew) and uniform columns.

    N is log-uniform on ``n_range`` and the domain size V log-uniform on
    ``[10, N]``.
    """
    rng = np.random.default_rng(seed)
    kinds = [("zipf", s) for s in skews] + [("uniform", 1.0)]
    specs = []
    for i in range(count):
        kind, s = kinds[i % len(kinds)]
        N = int(round(math.exp(rng.uniform(math.log(n_range[0]), math.log(n_range[1])))))
        V = int(round(math.exp(rng.uniform(math.log(10), math.log(N)))))
        specs.append(GeneratorSpec(kind, N, V, s, seed=int(rng.integers(2**31))))
    return specs


def write_manifest(path, splits: dict) -> str:
    """Write JSON Lines, one column per line; returns the file's sha256."""
    lines = []
    for split, cols in splits.items():
        for col in cols:
            lines.append(json.dumps(col.to_record(split), sort_keys=True, separators=(",", ":")))
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode()).hexdigest()


def read_manifest(path) -> dict[str, list[LabeledColumn]]:
    out: dict[str, list[LabeledColumn]] = {"train": [], "validation": [], "test": []}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.setdefault(rec.get("split") or "test", []).append(LabeledColumn.from_record(rec))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def load_spec_file(path) -> tuple[list[GeneratorSpec], float, int]:
    """Parse a JSON generation spec.

    ``{"seed": 0, "rate": 0.01, "columns": [{"kind": "zipf", "N": 100000,
    "V": 10000, "s": 1.5, "count": 10}], "random": {"count": 100}}``
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    seed = int(doc.get("seed", 0))
    rate = float(doc.get("rate", 0.01))
    specs: list[GeneratorSpec] = []
    rng = np.random.default_rng(seed)
    for j, entry in enumerate(doc.get("columns", [])):
        entry = dict(entry)
        count = int(entry.pop("count", 1))
        for c in range(count):
            try:
                specs.append(GeneratorSpec(seed=int(rng.integers(2**31)), **entry))
            except TypeError as exc:
                raise DataError(f"columns[{j}]: {exc}") from None
    if "random" in doc:
        r = doc["random"]
        n_range = tuple(r.get("n_range", (10_000, 1_000_000)))
        specs.extend(random_specs(int(r["count"]), int(r.get("seed", seed)), n_range))
    if not specs:
        raise DataError(f"{path}: spec lists no columns")
    return specs, rate, seed
