"""Learned estimator fusion: features, weighting, losses, training and inference."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .estimators import ESTIMATOR_NAMES, M, EstimateSet, estimate_all
from .neural import AdamState, CheckpointError, Mlp, adam_step, decode_bundle, encode_bundle
from .numerics import quantile, softmax
from .profile import FrequencyProfile, featurize
from .selection import Selection, over_labels, select_top_k, selection_losses, under_labels

log = logging.getLogger(__name__)

NETWORKS = ("over_ranker", "under_ranker", "weighter")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.5
    k: int = 2
    H: int = 100
    lr: float = 1e-3
    epochs: int = 100
    l2: float = 1e-4
    batch_size: int = 256
    seed: int = 0
    hidden: tuple = (128, 64)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.k < 1 or 2 * self.k > M:
            raise ValueError(f"k must be in [1, {M // 2}]")
        if self.H < 4:
            raise ValueError("H must be at least 4")
        for name in ("alpha", "lr", "epochs", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0 or self.l2 < 0:
            raise ValueError("beta and l2 must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class AdaNdvModel:
    over_ranker: Mlp
    under_ranker: Mlp
    weighter: Mlp
    config: TrainConfig
    meta: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, cfg: TrainConfig) -> "AdaNdvModel":
        rank_dims = (cfg.H, *cfg.hidden, M)
        weight_dims = (cfg.H + 2 * cfg.k, *cfg.hidden, 2 * cfg.k)
        return cls(
            Mlp(rank_dims, seed=cfg.seed),
            Mlp(rank_dims, seed=cfg.seed + 1),
            Mlp(weight_dims, seed=cfg.seed + 2),
            cfg,
        )

    @property
    def networks(self) -> dict[str, Mlp]:
        return {name: getattr(self, name) for name in NETWORKS}

    def copy(self) -> "AdaNdvModel":
        return AdaNdvModel(
            self.over_ranker.copy(), self.under_ranker.copy(), self.weighter.copy(),
            TrainConfig.from_dict(asdict(self.config)), dict(self.meta),
        )

    def to_bytes(self) -> bytes:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        header = {
            "m": M,
            "H": self.config.H,
            "k": self.config.k,
            "estimators": list(ESTIMATOR_NAMES),
            "config": cfg,
            "meta": self.meta,
        }
        return encode_bundle(self.networks, header)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AdaNdvModel":
        nets, head = decode_bundle(data)
        if head.get("m") != M or head.get("estimators") != list(ESTIMATOR_NAMES):
            raise CheckpointError(
                f"checkpoint built for m={head.get('m')} estimators "
                f"{head.get('estimators')}, this build has m={M}"
            )
        if set(nets) != set(NETWORKS):
            raise CheckpointError(f"expected networks {NETWORKS}, found {sorted(nets)}")
        cfg = TrainConfig.from_dict(head["config"])
        H, k = head["H"], head["k"]
        if (cfg.H, cfg.k) != (H, k):
            raise CheckpointError("header H/k disagree with the stored config")
        for name in ("over_ranker", "under_ranker"):
            dims = nets[name].layer_dims
            if dims[0] != H or dims[-1] != M:
                raise CheckpointError(f"{name} has dims {dims}, expected {H} -> ... -> {M}")
        dims = nets["weighter"].layer_dims
        if dims[0] != H + 2 * k or dims[-1] != 2 * k:
            raise CheckpointError(f"weighter has dims {dims}, expected {H + 2 * k} -> ... -> {2 * k}")
        return cls(nets["over_ranker"], nets["under_ranker"], nets["weighter"], cfg, head.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "AdaNdvModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class Samples:
    """Column-level arrays fed to training and batched inference."""

    X: np.ndarray  # (S, H) features
    E: np.ndarray  # (S, m) sanitized base estimates
    N: np.ndarray  # (S,) population sizes
    D: Optional[np.ndarray] = None  # (S,) true NDV, absent at pure inference

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Samples":
        return Samples(self.X[idx], self.E[idx], self.N[idx], None if self.D is None else self.D[idx])

    @classmethod
    def from_columns(cls, columns: Sequence, H: int) -> "Samples":
        """Build from objects exposing ``profile``, ``estimates`` and ``D``."""
        if not columns:
            raise ValueError("no columns")
        X = np.stack([featurize(c.profile, H) for c in columns])
        E = np.stack([c.estimates.estimates for c in columns])
        N = np.array([c.profile.N for c in columns], dtype=np.float64)
        D = np.array([c.D for c in columns], dtype=np.float64)
        return cls(X, E, N, D)


def fusion_features(x: np.ndarray, estimates: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """``[x, ln est[over_1..over_k], ln est[under_1..under_k]]``; batches allowed.

    ``selected`` holds the over indices followed by the under indices.
    """
    logs = np.log(np.take_along_axis(np.asarray(estimates), np.asarray(selected), axis=-1))
    return np.concatenate([x, logs], axis=-1)


def fuse(logits: np.ndarray, estimates: np.ndarray, selected: np.ndarray, N=None):
    """Softmax-weighted mean of log estimates.

    Returns ``(clamped, raw, weights)``; the clamp is to ``[1, N]`` and is only
    applied when ``N`` is given.
    """
    lam = softmax(logits)
    logs = np.log(np.take_along_axis(np.asarray(estimates), np.asarray(selected), axis=-1))
    raw = np.exp((lam * logs).sum(axis=-1))
    clamped = raw if N is None else np.clip(raw, 1.0, N)
    return clamped, raw, lam


def param_norm(net: Mlp) -> float:
    return math.sqrt(sum(float(np.sum(p * p)) for p in net.params))


def est_loss(log_pred, log_true, net: Optional[Mlp] = None, l2: float = 0.0, with_grad: bool = False):
    """Mean squared log gap plus ``l2 * ||W||`` of ``net``'s parameters."""
    resid = np.asarray(log_pred, dtype=np.float64) - np.asarray(log_true, dtype=np.float64)
    norm = param_norm(net) if (net is not None and l2 > 0) else 0.0
    value = float(np.mean(resid ** 2)) + l2 * norm
    if not with_grad:
        return value
    d_pred = 2.0 * resid / resid.size
    if norm > 0:
        d_params = [l2 * p / norm for p in net.params]
    else:
        d_params = [np.zeros_like(p) for p in net.params] if net is not None else []
    return value, d_pred, d_params


@dataclass
class BatchResult:
    loss: float
    l_over: float
    l_under: float
    l_est: float
    grads: dict = field(default_factory=dict)


def _forward_backward(model: AdaNdvModel, batch: Samples, with_grad: bool = True) -> BatchResult:
    cfg = model.config
    E, D = batch.E, batch.D
    y_over = np.stack([over_labels(e, d) for e, d in zip(E, D)])
    y_under = np.stack([under_labels(e, d) for e, d in zip(E, D)])

    s_over, acts_o = model.over_ranker.forward(batch.X, keep=True)
    s_under, acts_u = model.under_ranker.forward(batch.X, keep=True)
    sel_losses = selection_losses(s_over, y_over, s_under, y_under, cfg.alpha, with_grad=with_grad)
    l_over, l_under = sel_losses[0], sel_losses[1]

    selected = np.concatenate([select_top_k(s_over, cfg.k), select_top_k(s_under, cfg.k)], axis=1)
    logs = np.log(np.take_along_axis(E, selected, axis=1))
    xw = np.concatenate([batch.X, logs], axis=1)
    z, acts_w = model.weighter.forward(xw, keep=True)
    lam = softmax(z)
    log_pred = (lam * logs).sum(axis=1)
    est = est_loss(log_pred, np.log(D), model.weighter, cfg.l2, with_grad=with_grad)
    l_est = est[0] if with_grad else est
    loss = l_over + l_under + cfg.beta * l_est
    result = BatchResult(loss, l_over, l_under, l_est)
    if not with_grad:
        return result

    g_over, g_under = sel_losses[2], sel_losses[3]
    _, d_pred, d_pen = est
    d_pred = cfg.beta * d_pred
    dz = lam * (logs - log_pred[:, None]) * d_pred[:, None]
    gw, _ = model.weighter.backward(acts_w, dz)
    gw = [g + cfg.beta * p for g, p in zip(gw, d_pen)]
    go, _ = model.over_ranker.backward(acts_o, g_over)
    gu, _ = model.under_ranker.backward(acts_u, g_under)
    result.grads = {"over_ranker": go, "under_ranker": gu, "weighter": gw}
    return result


def batch_loss(model: AdaNdvModel, batch: Samples) -> BatchResult:
    """Total loss and components on a labelled batch (no gradients)."""
    return _forward_backward(model, batch, with_grad=False)


def batch_gradients(model: AdaNdvModel, batch: Samples) -> BatchResult:
    return _forward_backward(model, batch, with_grad=True)


def total_loss(l_over: float, l_under: float, l_est: float, beta: float) -> float:
    return l_over + l_under + beta * l_est


@dataclass
class Prediction:
    estimate: np.ndarray
    raw: np.ndarray
    selected: np.ndarray
    weights: np.ndarray
    s_over: np.ndarray
    s_under: np.ndarray


def predict(model: AdaNdvModel, samples: Samples) -> Prediction:
    """Batched inference over prepared samples."""
    k = model.config.k
    s_over = model.over_ranker.forward(samples.X)
    s_under = model.under_ranker.forward(samples.X)
    selected = np.concatenate([select_top_k(s_over, k), select_top_k(s_under, k)], axis=-1)
    z = model.weighter.forward(fusion_features(samples.X, samples.E, selected))
    est, raw, lam = fuse(z, samples.E, selected, samples.N)
    return Prediction(est, raw, selected, lam, s_over, s_under)


def infer(model: AdaNdvModel, p: FrequencyProfile, estimates: Optional[EstimateSet] = None):
    """Estimate the NDV of the column behind ``p``.

    Returns ``(estimate, diagnostics)``.
    """
    es = estimate_all(p) if estimates is None else estimates
    x = featurize(p, model.config.H)
    samples = Samples(x[None, :], es.estimates[None, :], np.array([float(p.N)]))
    pred = predict(model, samples)
    k = model.config.k
    sel = pred.selected[0]
    diag = {
        "selection": Selection(sel[:k].copy(), sel[k:].copy()),
        "selected_names": [ESTIMATOR_NAMES[i] for i in sel],
        "weights": pred.weights[0],
        "raw_estimate": float(pred.raw[0]),
        "base_estimates": es,
    }
    return float(pred.estimate[0]), diag


def q_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    return np.maximum(pred / truth, truth / pred)


def train(
    train_set: Samples,
    val_set: Samples,
    cfg: TrainConfig,
    init: Optional[AdaNdvModel] = None,
) -> AdaNdvModel:
    """Train all three networks jointly; return the checkpoint with the best
    validation 99% q-error (earliest epoch wins ties)."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if init is not None:
        if (init.config.H, init.config.k) != (cfg.H, cfg.k):
            raise ValueError(
                f"cannot resume: checkpoint has H={init.config.H} k={init.config.k}, "
                f"config asks for H={cfg.H} k={cfg.k}"
            )
        model = init.copy()
        model.config = cfg
    else:
        model = AdaNdvModel.initialize(cfg)
    opt = {name: AdamState(lr=cfg.lr) for name in NETWORKS}
    rng = np.random.default_rng(cfg.seed)
    log.info(
        "train: alpha=%g beta=%g H=%d k=%d lr=%g epochs=%d l2=%g batch_size=%d seed=%d samples=%d/%d",
        cfg.alpha, cfg.beta, cfg.H, cfg.k, cfg.lr, cfg.epochs, cfg.l2, cfg.batch_size, cfg.seed,
        len(train_set), len(val_set),
    )
    best, best_q99 = None, math.inf
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            res = batch_gradients(model, train_set.subset(idx))
            if not math.isfinite(res.loss):
                _diagnose(model, train_set, idx, res)
            for name in NETWORKS:
                adam_step(getattr(model, name), opt[name], res.grads[name])
            sums += len(idx) * np.array([res.loss, res.l_over, res.l_under, res.l_est])
        means = sums / len(order)
        qe = q_errors(predict(model, val_set).estimate, val_set.D)
        q99 = quantile(qe, 0.99)
        history.append({"epoch": epoch, "loss": means[0], "val_q99": q99})
        log.info(
            "epoch=%d loss=%.6g L_over=%.6g L_under=%.6g L_est=%.6g val_mean=%.6g val_q99=%.6g",
            epoch, *means, float(qe.mean()), q99,
        )
        if q99 < best_q99:
            best_q99 = q99
            best = model.copy()
            best.meta = {"best_epoch": epoch, "val_q99": q99}
    if best is None:
        raise TrainingError("validation q-error was never finite")
    best.meta["history"] = [{k: float(v) for k, v in h.items()} for h in history]
    return best


def _diagnose(model: AdaNdvModel, data: Samples, idx: np.ndarray, res: BatchResult):
    for i in idx:
        one = batch_loss(model, data.subset([i]))
        if not math.isfinite(one.loss):
            raise TrainingError(
                f"non-finite loss at sample {int(i)}: L_over={one.l_over} "
                f"L_under={one.l_under} L_est={one.l_est}"
            )
    raise TrainingError(
        f"non-finite batch loss: L_over={res.l_over} L_under={res.l_under} L_est={res.l_est}"
    )
