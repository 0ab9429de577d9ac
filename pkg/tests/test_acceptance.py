"""Acceptance criteria 1-9, one test each, each recording a PASS/FAIL line.

Criteria 6, 7 and 9 share one desk-scale experiment (2000 synthetic columns,
1% samples, default hyperparameters with batch size 32), run twice from
scratch for the determinism check.
"""
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, end_to_end_grad_error, random_samples

from adandv import estimators as est
from adandv.datagen import GeneratorSpec, gen_column, label_column, make_dataset, random_specs
from adandv.estimators import ESTIMATOR_NAMES, M, estimate_all, skew_u
from adandv.evaluation import run_benchmark, train_le
from adandv.fusion import AdaNdvModel, Samples, TrainConfig, est_loss, fuse, infer, train
from adandv.neural import Mlp, numeric_gradient
from adandv.profile import FrequencyProfile, build_profile, exact_stats, sample_uniform
from adandv.selection import over_labels, rank_loss, under_labels

EXPERIMENT_SEED = 0
EXPERIMENT_COLUMNS = 2000
EXPERIMENT_BATCH = 32


class Criterion:
    """Collects checks for one criterion and records a single verdict line."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.failures, self.notes = [], []
        self.t0 = time.perf_counter()

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)

    def note(self, text):
        self.notes.append(text)

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0

    def finish(self, limit_s=None):
        if limit_s is not None:
            self.check(self.elapsed < limit_s, f"runtime {self.elapsed:.1f}s over {limit_s}s")
        verdict = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.notes + self.failures)
        ACCEPTANCE.append(
            f"criterion {self.number} [{verdict}] {self.title} ({self.elapsed:.1f}s) {detail}".rstrip()
        )
        assert not self.failures, "; ".join(self.failures)


def test_criterion_1_toy_exactness():
    c = Criterion(1, "toy-profile estimator values")
    p = FrequencyProfile.from_counts([1, 1, 2], N=900)
    es = estimate_all(p)
    c.check(es["gee"] == pytest.approx(13, abs=1e-9), f"gee={es['gee']}")
    c.check(es["eb"] == pytest.approx(13, abs=1e-9), f"eb={es['eb']}")
    c.check(es["chao"] == pytest.approx(4.5, abs=1e-12), f"chao={es['chao']}")
    c.check(abs(es["jackknife"] - (4 + 8 / 9)) <= 1e-6, f"jackknife={es['jackknife']}")
    c.check(abs(es["bootstrap"] - 4.503) <= 1e-3, f"bootstrap={es['bootstrap']}")
    c.check(abs(es["shlosser"] - 48.14) <= 0.01, f"shlosser={es['shlosser']}")
    c.check(abs(es["chao_lee"] - 4.5) <= 1e-6, f"chao_lee={es['chao_lee']}")
    sichel = ESTIMATOR_NAMES.index("sichel")
    c.check(es["sichel"] == 4 and es.sanitized[sichel], f"sichel={es['sichel']}")
    u = skew_u(p).u
    c.check(abs(u - 1.222) <= 1e-3, f"u={u}")
    c.finish(limit_s=1.0)


def test_criterion_2_full_sample_consistency():
    c = Criterion(2, "rate-1.0 samples reproduce D")
    rng = np.random.default_rng(2)
    bad = 0
    for i in range(200):
        N = int(rng.integers(1, 10_001))
        V = int(rng.integers(1, N + 1))
        kind = ("uniform", "zipf", "geometric")[i % 3]
        col = gen_column(GeneratorSpec(kind, N, V, 1.3, seed=i))
        p = build_profile(sample_uniform(col, 1.0, i), N)
        D = exact_stats(col).D
        es = estimate_all(p)
        hybrids = [est.hyb_skew(p), est.hyb_gee(p)]
        if not (np.all(es.estimates == D) and hybrids == [D, D]):
            bad += 1
    c.note(f"columns_off={bad}/200")
    c.check(bad == 0, "some estimator missed D on a full sample")
    c.finish(limit_s=30.0)


def test_criterion_3_label_oracle():
    c = Criterion(3, "label construction vs brute-force oracle")
    rng = np.random.default_rng(3)
    mismatches, ties, masked = 0, 0, 0
    for t in range(10_000):
        D = float(rng.integers(1, 10_000))
        mode = t % 4
        if mode == 0:
            e = rng.choice([D / 3, D, 1.5 * D, 4 * D], size=M)
        elif mode == 1:
            e = D * (rng.uniform(1.01, 9, M) if t % 8 == 1 else rng.uniform(0.05, 1.0, M))
        else:
            e = np.exp(rng.normal(math.log(D), 3, M))
        ties += len(set(e.tolist())) < M
        masked += bool((e > D).all() or (e <= D).all())
        want_over, want_under = [0] * M, [0] * M
        over = sorted((i for i in range(M) if e[i] > D), key=lambda i: (e[i] / D, i))
        under = sorted((i for i in range(M) if e[i] <= D), key=lambda i: (D / e[i], i))
        for r, i in enumerate(over):
            want_over[i] = M - r
        for r, i in enumerate(under):
            want_under[i] = M - r
        got_over, got_under = over_labels(e, D).tolist(), under_labels(e, D).tolist()
        mismatches += (got_over != want_over) + (got_under != want_under)
    c.note(f"instances=10000 with_ties={ties} all_masked={masked} mismatches={mismatches}")
    c.check(mismatches == 0 and ties > 0 and masked > 0, "oracle disagreement or missing coverage")
    c.finish(limit_s=10.0)


def test_criterion_4_gradient_fidelity():
    c = Criterion(4, "analytic vs finite-difference gradients")
    rng = np.random.default_rng(4)
    worst = {"rank": 0.0, "est": 0.0, "total": 0.0}
    cfg = TrainConfig(l2=1e-3, seed=4)
    for b in range(20):
        # ranking loss through the score vector
        s = rng.normal(size=(4, M))
        y = np.stack([over_labels(np.exp(rng.normal(size=M)), 1.0) for _ in range(4)])
        _, g = rank_loss(s, y, 1.0, with_grad=True)
        for idx in [(int(rng.integers(4)), int(rng.integers(M))) for _ in range(8)]:
            num = numeric_gradient(lambda: float(rank_loss(s, y).sum()), s, idx)
            worst["rank"] = max(worst["rank"], abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-12))
        # fusion loss with its parameter-norm term
        net = Mlp([6, 5, 4], seed=b)
        pred, truth = rng.normal(size=8), rng.normal(size=8)
        _, d_pred, d_params = est_loss(pred, truth, net, 0.01, with_grad=True)
        for i in range(8):
            num = numeric_gradient(lambda: est_loss(pred, truth, net, 0.01), pred, i)
            worst["est"] = max(worst["est"], abs(num - d_pred[i]) / max(abs(num), abs(d_pred[i]), 1e-12))
        for p, g in zip(net.params, d_params):
            idx = tuple(int(rng.integers(n)) for n in p.shape)
            num = numeric_gradient(lambda: est_loss(pred, truth, net, 0.01), p, idx)
            worst["est"] = max(worst["est"], abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-12))
        # joint objective through both rankers and the weighter
        model = AdaNdvModel.initialize(TrainConfig(l2=1e-3, seed=b))
        batch = random_samples(rng, 8, cfg.H)
        worst["total"] = max(worst["total"], end_to_end_grad_error(model, batch, per_param=4, seed=b))
    c.note(" ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    c.check(max(worst.values()) < 1e-4, "relative error >= 1e-4")
    c.finish(limit_s=60.0)


def test_criterion_5_fusion_bracketing():
    c = Criterion(5, "fused value brackets and exact weights exist")
    rng = np.random.default_rng(5)
    outside, worst_exact, cases = 0, 0.0, 0
    while cases < 1000:
        D = float(np.exp(rng.uniform(0, 13)))
        e = D * np.exp(rng.normal(0, 2, M))
        sel = rng.choice(M, 4, replace=False)
        picked = e[sel]
        if not ((picked > D).any() and (picked < D).any()):
            continue
        cases += 1
        value, _, _ = fuse(rng.normal(0, 3, 4), e, sel)
        outside += not (picked.min() * (1 - 1e-12) <= value <= picked.max() * (1 + 1e-12))
        o, u = int(np.argmax(picked > D)), int(np.argmax(picked < D))
        w = (math.log(D) - math.log(picked[u])) / (math.log(picked[o]) - math.log(picked[u]))
        lam = np.zeros(4)
        lam[o], lam[u] = w, 1.0 - w
        with np.errstate(divide="ignore"):
            exact, _, _ = fuse(np.log(lam), e, sel)
        worst_exact = max(worst_exact, max(exact / D, D / exact) - 1.0)
    c.note(f"outside={outside} worst_solved_qerr-1={worst_exact:.1e}")
    c.check(outside == 0 and worst_exact <= 1e-9, "bracketing or exact-weight check failed")
    c.finish()


def run_experiment(seed):
    t0 = time.perf_counter()
    train_cols, val_cols, test_cols = make_dataset(random_specs(EXPERIMENT_COLUMNS, seed), 0.01, seed)
    cfg = TrainConfig(seed=seed, batch_size=EXPERIMENT_BATCH)
    train_set = Samples.from_columns(train_cols, cfg.H)
    model = train(train_set, Samples.from_columns(val_cols, cfg.H), cfg)
    report = run_benchmark(test_cols, model, train_le(train_set))
    return {
        "sizes": (len(train_cols), len(val_cols), len(test_cols)),
        "model": model,
        "checkpoint": model.to_bytes(),
        "report": report,
        "report_json": report.to_json(),
        "seconds": time.perf_counter() - t0,
    }


@pytest.fixture(scope="session")
def experiment():
    return run_experiment(EXPERIMENT_SEED)


def test_criterion_6_end_to_end(experiment):
    c = Criterion(6, "desk-scale training beats baselines")
    methods = experiment["report"].data["methods"]
    ada = methods["adandv"]["mean"]
    best_name = min(ESTIMATOR_NAMES, key=lambda n: methods[n]["mean"])
    le, hypo = methods["le"]["mean"], methods["hypo_optimal"]["mean"]
    ranks = experiment["report"].data["adandv"]
    p1o, p1u = ranks["p_at_1_over"], ranks["p_at_1_under"]
    c.note(
        f"split={experiment['sizes']} adandv={ada:.4f} best_base={best_name}:{methods[best_name]['mean']:.4f} "
        f"le={le:.4f} hypo={hypo:.4f} P@1_over={p1o:.3f} P@1_under={p1u:.3f} "
        f"best_epoch={experiment['model'].meta['best_epoch']} run={experiment['seconds']:.0f}s"
    )
    c.check(experiment["sizes"] == (1400, 300, 300), "split sizes")
    c.check(all(ada < methods[n]["mean"] for n in ESTIMATOR_NAMES), "(a) a base estimator beats AdaNDV")
    c.check(ada < le, "(a) LE beats AdaNDV")
    c.check(hypo <= ada, "(b) hypo-optimal above AdaNDV")
    c.check(p1o >= 3 / 14 and p1u >= 3 / 14, "(c) P@1 below 3/14")
    c.check(experiment["seconds"] <= 15 * 60, "runtime over 15 minutes")
    c.finish()


def test_criterion_7_selected_set_composition(experiment):
    c = Criterion(7, "selected sets mostly straddle D")
    comp = experiment["report"].data["adandv"]["composition"]
    share = comp["over_and_under"] / sum(comp.values())
    c.note(f"over_and_under={share:.3f} counts={comp}")
    c.check(share > 0.5, "share <= 0.5")
    c.finish()


def test_criterion_8_inference_latency(experiment):
    c = Criterion(8, "end-to-end inference latency at n=1e4")
    model = experiment["model"]
    kinds = [("zipf", 100_000, 1.2), ("zipf", 1_000, 2.0), ("uniform", 5_000, 1.0),
             ("uniform", 900_000, 1.0), ("geometric", 20_000, 1.0)]
    profiles = []
    for i in range(20):
        kind, V, s = kinds[i % len(kinds)]
        col = gen_column(GeneratorSpec(kind, 1_000_000, V, s, seed=i))
        profiles.append(label_column(col, 0.01, i).profile)
    assert all(p.n == 10_000 for p in profiles)
    infer(model, profiles[0])
    times = []
    for p in profiles:
        t = time.perf_counter()
        infer(model, p)
        times.append(time.perf_counter() - t)
    mean_ms = 1e3 * float(np.mean(times))
    c.note(f"mean={mean_ms:.2f}ms max={1e3 * max(times):.2f}ms over {len(times)} columns")
    c.check(mean_ms <= 10.0, "mean latency over 10 ms")
    c.finish()


def test_criterion_9_determinism(experiment):
    c = Criterion(9, "repeat run is byte-identical")
    again = run_experiment(EXPERIMENT_SEED)
    same_ckpt = again["checkpoint"] == experiment["checkpoint"]
    same_report = again["report_json"] == experiment["report_json"]
    c.note(f"checkpoint_bytes={len(experiment['checkpoint'])} same_checkpoint={same_ckpt} same_report={same_report}")
    c.check(same_ckpt and same_report, "outputs differ between runs")
    c.finish()
