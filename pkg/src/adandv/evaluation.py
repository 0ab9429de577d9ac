"""q-error metrics, oracle and ensemble baselines, and the benchmark report."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimators import ALL_ESTIMATORS, ESTIMATOR_NAMES, HYBRID_NAMES, M, EstimateSet
from .fusion import AdaNdvModel, Samples, predict
from .numerics import quantile, softmax
from .selection import over_labels, select_top_k, under_labels

QUANTILES = (0.50, 0.75, 0.90, 0.95, 0.99)


def q_error(estimate: float, truth: float) -> float:
    if not (estimate > 0 and truth > 0):
        raise ValueError("q-error needs positive arguments")
    return max(estimate / truth, truth / estimate)


@dataclass(frozen=True)
class QErrorStats:
    mean: float
    q50: float
    q75: float
    q90: float
    q95: float
    q99: float
    count: int


def aggregate(errors: Sequence[float]) -> QErrorStats:
    arr = np.asarray(errors, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no errors to aggregate")
    with np.errstate(over="ignore"):
        mean = float(np.mean(arr))
    return QErrorStats(mean, *(quantile(arr, p) for p in QUANTILES), count=int(arr.size))


def precision_at_k(selections, labels, K: int) -> tuple[float, int]:
    """Share of cases whose first ``K`` selected indices include a top-labelled one.

    ``selections`` rows are ranked index lists (at least ``K`` long).  Cases
    whose labels are all zero are skipped; their number is returned second.
    """
    hits, used, skipped = 0, 0, 0
    for sel, y in zip(selections, labels):
        y = np.asarray(y)
        top = y.max()
        if top <= 0:
            skipped += 1
            continue
        used += 1
        hits += bool(np.any(y[np.asarray(sel)[:K]] == top))
    return (hits / used if used else math.nan), skipped


def _case_errors(E: np.ndarray, D: np.ndarray) -> np.ndarray:
    return np.maximum(E / D[:, None], D[:, None] / E)


def hypo_optimal(estimate_sets: Sequence, truths: Sequence[float]) -> QErrorStats:
    """Per case, the smallest q-error any base estimator achieved."""
    E = np.stack([e.estimates if isinstance(e, EstimateSet) else np.asarray(e) for e in estimate_sets])
    return aggregate(_case_errors(E, np.asarray(truths, dtype=np.float64)).min(axis=1))


@dataclass
class LeModel:
    """One global weight per base estimator, softmax-normalized at use."""

    w: np.ndarray = field(default_factory=lambda: np.zeros(M))

    @property
    def weights(self) -> np.ndarray:
        return softmax(self.w)


def le_estimate(model: LeModel, estimates) -> np.ndarray:
    E = estimates.estimates if isinstance(estimates, EstimateSet) else np.asarray(estimates)
    return np.exp(np.log(E) @ model.weights)


def train_le(train_set: Samples, steps: int = 2000, lr: float = 0.05, l2: float = 0.0) -> LeModel:
    """Full-batch Adam on the mean squared log error."""
    logs = np.log(train_set.E)
    target = np.log(train_set.D)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    w = np.zeros(logs.shape[1])
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t in range(1, steps + 1):
        lam = softmax(w)
        d_pred = 2.0 * (logs @ lam - target) / target.size
        d_lam = logs.T @ d_pred
        grad = lam * (d_lam - lam @ d_lam)
        norm = np.linalg.norm(w)
        if l2 > 0 and norm > 0:
            grad = grad + l2 * w / norm
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        w = w - lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return LeModel(w)


@dataclass
class Report:
    data: dict
    timing: dict

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = self.data["methods"]
        lines = [f"{'method':<12}" + "".join(f"{h:>12}" for h in ("mean", "50%", "75%", "90%", "95%", "99%"))]
        for name, st in rows.items():
            vals = (st["mean"], st["q50"], st["q75"], st["q90"], st["q95"], st["q99"])
            lines.append(f"{name:<12}" + "".join(f"{v:>12.4g}" for v in vals))
        ada = self.data.get("adandv")
        if ada:
            lines.append("")
            for key in ("p_at_1_over", "p_at_2_over", "p_at_1_under", "p_at_2_under"):
                lines.append(f"{key:<16}{ada[key]:.4f}")
            comp = ada["composition"]
            lines.append("composition     " + "  ".join(f"{k}={v}" for k, v in comp.items()))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(self.to_table(), encoding="utf-8")
        (out / "timing.json").write_text(json.dumps(self.timing, indent=2, sort_keys=True) + "\n")


def _stats_dict(errors) -> dict:
    return asdict(aggregate(errors))


def run_benchmark(
    test_columns: Sequence,
    model: Optional[AdaNdvModel] = None,
    le: Optional[LeModel] = None,
    baselines: Sequence[str] = ("base", "hybrid", "le", "hypo"),
    train_timing: Optional[dict] = None,
) -> Report:
    """Evaluate every requested method on labelled test columns.

    ``test_columns`` items expose ``profile``, ``D`` and ``estimates``.  A
    column that fails is recorded under ``failures`` and skipped.  Wall-clock
    totals go to ``Report.timing`` so ``Report.data`` stays reproducible.
    """
    if not test_columns:
        raise ValueError("empty test set")
    timing: dict = dict(train_timing or {})
    good, failures = [], []
    t0 = time.perf_counter()
    for i, col in enumerate(test_columns):
        try:
            est = col.estimates
            if not np.all(np.isfinite(est.estimates)):
                raise ValueError("non-finite base estimate")
            good.append(col)
        except Exception as exc:  # one bad column must not sink the run
            failures.append({"index": i, "error": f"{type(exc).__name__}: {exc}"})
    timing["base_estimators_s"] = time.perf_counter() - t0
    if not good:
        raise ValueError("every test column failed")

    E = np.stack([c.estimates.estimates for c in good])
    D = np.array([c.D for c in good], dtype=np.float64)
    flags = np.stack([c.estimates.sanitized for c in good])
    errs = _case_errors(E, D)
    methods: dict = {}
    baselines = set(baselines)

    if "base" in baselines:
        for k, name in enumerate(ESTIMATOR_NAMES):
            methods[name] = _stats_dict(errs[:, k])
    if "hybrid" in baselines:
        for name in HYBRID_NAMES:
            vals = np.array([ALL_ESTIMATORS[name](c.profile) for c in good])
            methods[name] = _stats_dict(np.maximum(vals / D, D / vals))
    if "le" in baselines and le is not None:
        t = time.perf_counter()
        pred = np.clip(le_estimate(le, E), 1.0, [c.profile.N for c in good])
        timing["le_infer_s"] = time.perf_counter() - t
        methods["le"] = _stats_dict(np.maximum(pred / D, D / pred))
    if "hypo" in baselines:
        methods["hypo_optimal"] = _stats_dict(errs.min(axis=1))

    data = {
        "count": len(good),
        "failures": failures,
        "methods": methods,
        "sanitized_rate": {n: float(r) for n, r in zip(ESTIMATOR_NAMES, flags.mean(axis=0))},
    }

    if model is not None:
        samples = Samples.from_columns(good, model.config.H)
        t = time.perf_counter()
        pred = predict(model, samples)
        timing["adandv_infer_s"] = time.perf_counter() - t
        methods["adandv"] = _stats_dict(np.maximum(pred.estimate / D, D / pred.estimate))
        data["adandv"] = _ranker_report(model, pred, E, D)
    return Report(data, timing)


def _ranker_report(model: AdaNdvModel, pred, E: np.ndarray, D: np.ndarray) -> dict:
    k = model.config.k
    y_over = [over_labels(e, d) for e, d in zip(E, D)]
    y_under = [under_labels(e, d) for e, d in zip(E, D)]
    rank_over = select_top_k(pred.s_over, M)
    rank_under = select_top_k(pred.s_under, M)
    out: dict = {}
    for K in (1, 2):
        out[f"p_at_{K}_over"], skipped_over = precision_at_k(rank_over, y_over, K)
        out[f"p_at_{K}_under"], skipped_under = precision_at_k(rank_under, y_under, K)
    out["excluded_over"] = skipped_over
    out["excluded_under"] = skipped_under

    sel = pred.selected
    hist_over = np.bincount(sel[:, :k].ravel(), minlength=M)
    hist_under = np.bincount(sel[:, k:].ravel(), minlength=M)
    out["selection_histogram"] = {
        "over": {n: int(c) for n, c in zip(ESTIMATOR_NAMES, hist_over)},
        "under": {n: int(c) for n, c in zip(ESTIMATOR_NAMES, hist_under)},
    }
    is_over = np.take_along_axis(E, sel, axis=1) > D[:, None]
    any_over, any_under = is_over.any(axis=1), (~is_over).any(axis=1)
    out["composition"] = {
        "over_and_under": int(np.sum(any_over & any_under)),
        "only_over": int(np.sum(any_over & ~any_under)),
        "only_under": int(np.sum(~any_over & any_under)),
    }
    return out
