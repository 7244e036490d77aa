"""Command-line interface: gen-data, train, evaluate, ablate, report.

Every command takes --seed and produces byte-deterministic CSV/JSON
outputs for identical flags and seeds.  Session work fans out over a
worker pool sized by the LOBCLONE_WORKERS environment variable (default
1); outputs do not depend on the worker count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .features import CORE_SIX, FEATURE_NAMES, SnapshotDataset
from .network import TrainConfig, save_model
from .session import ScheduleSpec, SessionConfig
from .traders import STRATEGY_TAGS
from . import experiments as xp


def parse_population(text: str) -> list:
    """"ZIP:20,ZIC:10" -> [("ZIP", 20, 20), ("ZIC", 10, 10)]."""
    population = []
    for part in text.split(","):
        tag, _, count = part.partition(":")
        tag = tag.strip().upper()
        if tag not in STRATEGY_TAGS:
            raise argparse.ArgumentTypeError("unknown strategy tag %r" % tag)
        population.append((tag, int(count), int(count)))
    return population


def parse_scale(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def parse_mask(text: str) -> tuple:
    if text == "all13":
        return FEATURE_NAMES
    if text == "core6":
        return CORE_SIX
    mask = tuple(part.strip() for part in text.split(","))
    unknown = set(mask) - set(FEATURE_NAMES)
    if unknown:
        raise argparse.ArgumentTypeError("unknown features: %s" % sorted(unknown))
    return mask


def session_kw_from_args(args) -> dict:
    kw = {}
    if args.duration is not None:
        kw["duration"] = args.duration
    if getattr(args, "interval", None) is not None:
        kw["supply"] = ScheduleSpec(60, 150, replenish_interval=args.interval)
        kw["demand"] = ScheduleSpec(50, 140, replenish_interval=args.interval)
    return kw


def cmd_gen_data(args) -> int:
    session_kw = session_kw_from_args(args)
    if args.capture_mode:
        session_kw["capture_mode"] = args.capture_mode
    if args.capture_filter:
        session_kw["capture_filter"] = args.capture_filter
    if args.mode == "grid":
        pool = tuple(args.pool.split(",")) if args.pool else xp.DEFAULT_POOL
        templates = xp.enumerate_grid(pool=pool)
        configs = xp.grid_corpus_configs(templates, n_seeds=args.seeds,
                                         scale=args.scale, base_seed=args.seed,
                                         session_kw=session_kw)
    else:
        if not args.population or not args.sessions:
            print("--mode fixed requires --population and --sessions", file=sys.stderr)
            return 2
        configs = xp.fixed_corpus_configs(args.population, args.sessions,
                                          base_seed=args.seed, session_kw=session_kw)
    info = xp.generate_corpus(args.out, configs, workers=args.workers)
    print("planned=%d executed=%d failed=%d" % (info.n_planned, info.n_executed,
                                                info.n_failed))
    print("dataset=%s" % info.dataset_path)
    print("sessions=%s" % info.sessions_path)
    return 0


def cmd_train(args) -> int:
    dataset = SnapshotDataset.load_csv(args.dataset)
    cfg = TrainConfig(batch_size=args.batch, epochs=args.epochs,
                      sequence_length=args.seq_len, seed=args.seed,
                      val_fraction=args.val_fraction, lr=args.lr)
    result, bundle = xp.train_on_dataset(dataset, cfg, mask=args.mask)
    save_model(args.model_out, bundle)
    print("model=%s" % args.model_out)
    if result.degenerate_target:
        print("warning: constant training target (degenerate dataset)")
    if args.history_out:
        result.save_history_csv(args.history_out)
        print("history=%s" % args.history_out)
    if args.norm_out:
        bundle.normalization.save(args.norm_out)
        print("normalization=%s" % args.norm_out)
    last = result.history[-1]
    print("final train_mse=%r val_mse=%r" % (last.train_mse, last.val_mse))
    return 0


def cmd_evaluate(args) -> int:
    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    if args.tag_a == "DTR" and not args.model:
        print("evaluating DTR requires --model", file=sys.stderr)
        return 2
    session_kw = session_kw_from_args(args)
    if args.mode == "bgt":
        trialset = xp.run_bgt(args.tag_a, args.opponent, n_trials=args.trials,
                              base_seed=args.seed, model_path=args.model,
                              session_kw=session_kw, workers=args.workers)
    else:
        trialset = xp.run_omt(args.tag_a, args.opponent, n_trials=args.trials,
                              base_seed=args.seed, model_path=args.model,
                              single_side=args.single_side,
                              session_kw=session_kw, workers=args.workers)
    stem = "%s_%s_vs_%s" % (trialset.kind.lower(), trialset.tag_a, trialset.tag_b)
    samples = report_dir / ("%s_samples.csv" % stem)
    summary = report_dir / ("%s_summary.json" % stem)
    trialset.save_csv(samples)
    trialset.save_summary_json(summary)
    doc = trialset.summary()
    print("samples=%s" % samples)
    print("summary=%s" % summary)
    print("mean_appt %s=%r %s=%r significant=%s"
          % (trialset.tag_a, doc["a"]["mean"], trialset.tag_b, doc["b"]["mean"],
             doc["significant"]))
    return 0


def cmd_ablate(args) -> int:
    dataset = SnapshotDataset.load_csv(args.dataset)
    cfg = TrainConfig(batch_size=args.batch, epochs=args.epochs,
                      seed=args.seed, lr=args.lr)
    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        results = xp.ablation_sweep(dataset, cfg, mask=args.mask,
                                    shuffle_seed=args.shuffle_seed)
    elif args.feature:
        results = [xp.ablate_feature(dataset, args.feature, cfg, mask=args.mask,
                                     shuffle_seed=args.shuffle_seed)]
    else:
        print("ablate requires --sweep or --feature", file=sys.stderr)
        return 2
    path = xp.save_ablation_report(results, report_dir)
    print("report=%s" % path)
    for r in results:
        print("%s hit=%r" % (r.feature, r.performance_hit))
    return 0


def cmd_report(args) -> int:
    trialset = xp.TrialSet.load_csv(args.samples, kind=args.kind)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "summary.json"
    trialset.save_summary_json(summary_path)
    doc = trialset.summary()
    csv_path = out_dir / "summary.csv"
    with open(csv_path, "w", newline="") as f:
        f.write("strategy,n,mean,median,q1,q3,iqr,ci90_half_width,n_outliers\n")
        for tag, stats in ((trialset.tag_a, doc["a"]), (trialset.tag_b, doc["b"])):
            f.write("%s,%d,%r,%r,%r,%r,%r,%r,%d\n"
                    % (tag, stats["n"], stats["mean"], stats["median"], stats["q1"],
                       stats["q3"], stats["iqr"], stats["ci90_half_width"],
                       len(stats["outliers"])))
    print("summary=%s" % summary_path)
    print("table=%s" % csv_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lobclone",
        description="LOB market simulator with behavioral cloning of traders")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="run sessions and collect a snapshot corpus")
    p.add_argument("--mode", choices=("grid", "fixed"), default="grid")
    p.add_argument("--pool", help="comma list of strategy tags (grid mode)")
    p.add_argument("--seeds", type=int, default=32, help="seeds per grid config")
    p.add_argument("--scale", type=parse_scale, default=1.0,
                   help="subsample fraction of the grid plan, e.g. 1/64")
    p.add_argument("--population", type=parse_population,
                   help='fixed mode population, e.g. "ZIP:20,ZIC:20"')
    p.add_argument("--sessions", type=int, help="fixed mode session count")
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float)
    p.add_argument("--interval", type=float, help="replenish interval override")
    p.add_argument("--capture-mode", choices=("trade", "quote"))
    p.add_argument("--capture-filter", help="keep only rows from this strategy tag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a clone network on a corpus")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--mask", type=parse_mask, default=FEATURE_NAMES,
                   help="all13, core6, or a comma list like f2,f3")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=16_384)
    p.add_argument("--seq-len", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--history-out")
    p.add_argument("--norm-out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run BGT/OMT trials against an opponent")
    p.add_argument("--model", help="model file for DTR")
    p.add_argument("--mode", choices=("bgt", "omt"), required=True)
    p.add_argument("--opponent", required=True)
    p.add_argument("--tag-a", default="DTR", help="first strategy (default DTR)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--duration", type=float)
    p.add_argument("--interval", type=float)
    p.add_argument("--single-side", action="store_true",
                   help="OMT: insert a lone buyer instead of a buyer+seller pair")
    p.add_argument("--report-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="feature-ablation study on a corpus")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--feature")
    p.add_argument("--mask", type=parse_mask, default=FEATURE_NAMES)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=16_384)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--report-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="summary statistics from a samples CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--kind", default="BGT")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
