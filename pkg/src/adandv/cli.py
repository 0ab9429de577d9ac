"""Command-line entry point: ``adandv <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path


from . import datagen, evaluation
from .estimators import ALL_ESTIMATORS, APPROXIMATIONS, ESTIMATOR_NAMES, HYBRID_NAMES, estimate_all, evaluate
from .fusion import AdaNdvModel, Samples, TrainConfig, TrainingError, infer, predict, train
from .neural import CheckpointError
from .numerics import SolverError
from .profile import build_profile, exact_stats, sample_uniform
from .selection import approx_positions, over_labels, under_labels

log = logging.getLogger("adandv")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

# config-file key -> type; CLI flags with the same dest override these
CONFIG_KEYS = {
    "seed": int,
    "rate": float,
    "threads": int,
    "alpha": float,
    "beta": float,
    "k": int,
    "H": int,
    "lr": float,
    "epochs": int,
    "l2": float,
    "batch_size": int,
}


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            log.warning("%s:%d: unknown config key %r ignored", path, lineno, key)
            continue
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def _resolve(args, key, default):
    """CLI flag, else config file, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return args.file_config.get(key, default)


def _train_config(args) -> TrainConfig:
    base = TrainConfig()
    values = {k: _resolve(args, k, getattr(base, k)) for k in
              ("alpha", "beta", "k", "H", "lr", "epochs", "l2", "batch_size", "seed")}
    return TrainConfig(**values)


def _write_line(text=""):
    sys.stdout.write(text + "\n")


def cmd_gen(args) -> int:
    specs, rate, seed = datagen.load_spec_file(args.spec)
    seed = args.seed if args.seed is not None else args.file_config.get("seed", seed)
    rate = _resolve(args, "rate", rate)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise datagen.DataError(f"cannot create {out}: {exc}") from None
    workers = _resolve(args, "threads", 1) or 1
    train_cols, val_cols, test_cols = datagen.make_dataset(specs, rate, seed, workers=workers)
    path = out / "manifest.jsonl"
    try:
        digest = datagen.write_manifest(path, {"train": train_cols, "validation": val_cols, "test": test_cols})
    except OSError as exc:
        raise datagen.DataError(f"cannot write {path}: {exc}") from None
    log.info("wrote %d columns (%d/%d/%d)", len(specs), len(train_cols), len(val_cols), len(test_cols))
    _write_line(f"{path}\t{digest}")
    return 0


def _load_profile(args):
    col = datagen.ingest_csv(args.csv, _column_arg(args.column), drop_empty=args.drop_empty)
    rate = _resolve(args, "rate", 0.01)
    seed = _resolve(args, "seed", 0)
    return col, build_profile(sample_uniform(col, rate, seed), col.N)


def _column_arg(column: str):
    return int(column) if column.isdigit() else column


def cmd_profile(args) -> int:
    col, p = _load_profile(args)
    stats = exact_stats(col)
    _write_line(f"N={p.N} n={p.n} d={p.d} r={p.r:.6g} D={stats.D}")
    _write_line("f=" + " ".join(f"{j}:{c}" for j, c in zip(range(1, p.f.size + 1), p.f) if c))
    return 0


def cmd_estimate(args) -> int:
    if args.estimator == "adandv" and not args.model:
        raise UsageError("--estimator adandv requires --model")
    _, p = _load_profile(args)
    if args.estimator == "all":
        _write_line(f"{'estimator':<10}{'value':>16}{'raw':>16}  sanitized")
        for name in ESTIMATOR_NAMES:
            value, raw, flagged = evaluate(name, p)
            note = f"  ({APPROXIMATIONS[name]})" if name in APPROXIMATIONS else ""
            _write_line(f"{name:<10}{value:>16.8g}{raw:>16.8g}  {str(bool(flagged)).lower()}{note}")
        return 0
    if args.estimator == "adandv":
        model = AdaNdvModel.load(args.model)
        value, diag = infer(model, p)
        k = model.config.k
        names = diag["selected_names"]
        _write_line(f"over={','.join(names[:k])} under={','.join(names[k:])}")
        _write_line("weights=" + ",".join(f"{w:.6f}" for w in diag["weights"]))
        _write_line(f"raw={diag['raw_estimate']:.8g}")
        _write_line(f"adandv={value:.8g}")
        return 0
    value = ALL_ESTIMATORS[args.estimator](p)
    _write_line(f"{args.estimator}={value:.8g}")
    return 0


def cmd_labels(args) -> int:
    col, p = _load_profile(args)
    D = exact_stats(col).D
    es = estimate_all(p)
    y_over, y_under = over_labels(es.estimates, D), under_labels(es.estimates, D)
    pos_over = pos_under = None
    if args.model:
        model = AdaNdvModel.load(args.model)
        pred = predict(model, Samples.from_columns([datagen.LabeledColumn(p, D)], model.config.H))
        alpha = model.config.alpha
        pos_over = approx_positions(pred.s_over[0], alpha)
        pos_under = approx_positions(pred.s_under[0], alpha)
    _write_line(f"D={D}")
    head = f"{'estimator':<10}{'estimate':>16}{'y_over':>8}{'y_under':>8}"
    if pos_over is not None:
        head += f"{'pi_over':>10}{'pi_under':>10}"
    _write_line(head)
    for i, name in enumerate(ESTIMATOR_NAMES):
        row = f"{name:<10}{es.estimates[i]:>16.8g}{y_over[i]:>8d}{y_under[i]:>8d}"
        if pos_over is not None:
            row += f"{pos_over[i]:>10.4f}{pos_under[i]:>10.4f}"
        _write_line(row)
    return 0


def _read_manifests(paths) -> dict:
    merged: dict = {"train": [], "validation": [], "test": []}
    for path in paths:
        if not Path(path).is_file():
            raise datagen.DataError(f"no such manifest: {path}")
        for split, cols in datagen.read_manifest(path).items():
            merged.setdefault(split, []).extend(cols)
    return merged


def cmd_train(args) -> int:
    data = _read_manifests(args.manifest)
    if not data["train"] or not data["validation"]:
        raise datagen.DataError("manifest needs nonempty train and validation splits")
    cfg = _train_config(args)
    init = AdaNdvModel.load(args.resume) if args.resume else None
    if init is not None and (init.config.H, init.config.k) != (cfg.H, cfg.k):
        raise UsageError(
            f"--resume checkpoint has H={init.config.H} k={init.config.k}, config has H={cfg.H} k={cfg.k}"
        )
    t = time.perf_counter()
    model = train(Samples.from_columns(data["train"], cfg.H), Samples.from_columns(data["validation"], cfg.H), cfg, init)
    log.info("trained in %.2fs, best epoch %s", time.perf_counter() - t, model.meta.get("best_epoch"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_line(str(out))
    return 0


def cmd_bench(args) -> int:
    data = _read_manifests([args.manifest])
    if not data["test"]:
        raise datagen.DataError("manifest has no test split")
    baselines = [] if args.baselines == "none" else [b.strip() for b in args.baselines.split(",")]
    unknown = set(baselines) - {"base", "hybrid", "le", "hypo"}
    if unknown:
        raise UsageError(f"unknown baselines: {sorted(unknown)}")
    timing = {}
    le = None
    if "le" in baselines:
        if not data["train"]:
            raise datagen.DataError("the le baseline needs a train split")
        t = time.perf_counter()
        le = evaluation.train_le(Samples.from_columns(data["train"], 4))
        timing["le_train_s"] = time.perf_counter() - t
    model = AdaNdvModel.load(args.model) if args.model else None
    report = evaluation.run_benchmark(data["test"], model, le, baselines, train_timing=timing)
    report.write(args.out)
    sys.stdout.write(report.to_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--threads", type=int, help="cap on parallel workers (dataset generation)")

    parser = argparse.ArgumentParser(prog="adandv", description="Distinct-value estimation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a labelled synthetic dataset")
    p.add_argument("spec", help="JSON generation spec")
    p.add_argument("--out", required=True, help="output directory for manifest.jsonl")
    p.add_argument("--rate", type=float)
    p.set_defaults(func=cmd_gen)

    def column_args(q):
        q.add_argument("csv")
        q.add_argument("--column", required=True, help="header name or 0-based index")
        q.add_argument("--rate", type=float, help="sampling rate (default 0.01)")
        q.add_argument("--drop-empty", action="store_true", help="skip empty cells instead of counting them")

    p = sub.add_parser("profile", parents=[common], help="print the sample frequency profile of a CSV column")
    column_args(p)
    p.set_defaults(func=cmd_profile)

    choices = ["all", *ESTIMATOR_NAMES, *HYBRID_NAMES, "adandv"]
    p = sub.add_parser("estimate", parents=[common], help="estimate the NDV of a CSV column")
    column_args(p)
    p.add_argument(
        "--estimator", default="all", choices=choices, metavar="NAME",
        help="one of: " + ", ".join(choices) + " (default: all)",
    )
    p.add_argument("--model", help="AdaNDV checkpoint (required for adandv)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("labels", parents=[common], help="show ranking labels (and smooth positions) for a column")
    column_args(p)
    p.add_argument("--model")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("train", parents=[common], help="train an AdaNDV model from manifests")
    p.add_argument("manifest", nargs="+")
    p.add_argument("--out", default="model.adandv")
    p.add_argument("--resume", help="initialize from an existing checkpoint")
    for key in ("alpha", "beta", "lr", "l2"):
        p.add_argument(f"--{key}", type=float)
    for key in ("k", "H", "epochs"):
        p.add_argument(f"--{key}", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", parents=[common], help="benchmark methods on a manifest's test split")
    p.add_argument("manifest")
    p.add_argument("--model")
    p.add_argument("--baselines", default="base,hybrid,le,hypo", help="comma list or 'none'")
    p.add_argument("--out", default="bench")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "train":
        logging.getLogger("adandv").setLevel(min(level, logging.INFO))
    stage = args.command
    try:
        args.file_config = read_config(args.config) if args.config else {}
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"adandv {stage}: usage error: {exc}\n")
        return EXIT_USAGE
    except (datagen.DataError, CheckpointError, OSError) as exc:
        sys.stderr.write(f"adandv {stage}: data error: {exc}\n")
        return EXIT_DATA
    except (TrainingError, SolverError, FloatingPointError, ValueError) as exc:
        sys.stderr.write(f"adandv {stage}: numeric failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
