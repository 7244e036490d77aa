"""Experiment harness: config grids, corpus generation, head-to-head tests,
confidence intervals, and feature-ablation studies.

The training grid crosses every 4-strategy subset of the 7-strategy pool
with every distinct assignment of the five proportion groups, giving
35 x 35 = 1225 session templates; at 32 seeds each that plans 39,200
sessions.  Evaluation uses balanced-group tests (the two strategies split
the 80-trader population evenly, with matched limit prices) and
one-in-many tests (a lone pair of clone traders inside a uniform field).
Significance follows 90% confidence-interval non-overlap.  All outputs are
byte-deterministic given the seeds, independent of worker count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, permutations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import (FEATURE_NAMES, NormalizationSpec, SnapshotDataset,
                       TARGET_NAME)
from .network import ModelBundle, TrainConfig, TrainResult, train
from .session import ScheduleSpec, SessionConfig, SessionResult, run_session

DEFAULT_POOL = ("ZIC", "ZIP", "AA", "GDX", "SNPR", "GVWY", "SHVR")
PROPORTION_GROUPS = ((20, 10, 5, 5), (10, 10, 10, 10), (15, 10, 10, 5),
                     (15, 15, 5, 5), (25, 5, 5, 5))
WORKERS_ENV = "LOBCLONE_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def session_seed(*parts: int) -> int:
    """Stable 64-bit seed derived from an integer path (config idx, trial idx...)."""
    state = np.random.SeedSequence(list(parts)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


# -- grid enumeration ---------------------------------------------------


@dataclass(frozen=True)
class GridTemplate:
    config_id: str
    strategies: tuple
    counts: tuple

    def population(self) -> list:
        return [(tag, c, c) for tag, c in zip(self.strategies, self.counts)]


def proportion_assignments(groups: Sequence[tuple] = PROPORTION_GROUPS) -> list:
    """Distinct orderings of each proportion group over 4 strategy slots."""
    out = []
    for group in groups:
        out.extend(sorted(set(permutations(group)), reverse=True))
    return out


def enumerate_grid(pool: Sequence[str] = DEFAULT_POOL,
                   groups: Sequence[tuple] = PROPORTION_GROUPS) -> list:
    """All (strategy subset, proportion assignment) session templates."""
    assignments = proportion_assignments(groups)
    templates = []
    for combo in combinations(pool, 4):
        for counts in assignments:
            templates.append(GridTemplate(config_id="cfg%04d" % len(templates),
                                          strategies=combo, counts=counts))
    return templates


def plan_sessions(templates: Sequence[GridTemplate], n_seeds: int) -> list:
    return [(tpl.config_id, seed) for tpl in templates for seed in range(n_seeds)]


def scale_plan(plan: list, scale: float) -> list:
    """Deterministic stride subsample: scale=1/64 keeps every 64th session."""
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    stride = max(1, int(round(1.0 / scale)))
    return plan[::stride]


# -- corpus generation ---------------------------------------------------


class CorpusError(RuntimeError):
    """Too many sessions failed while generating a training corpus."""


def _corpus_session(args) -> tuple:
    """Worker: run one session, return (key, rows, summary, error)."""
    key, config_json, config_id = args
    try:
        result = run_session(SessionConfig.from_json(config_json))
        rows = result.snapshots.rows if result.snapshots is not None else np.empty((0, 14))
        return (key, rows.tolist(), result.summary_rows(config_id), None)
    except Exception as exc:  # recorded in the manifest, re-raised in bulk
        return (key, None, None, "%s: %s" % (type(exc).__name__, exc))


@dataclass
class CorpusInfo:
    n_planned: int
    n_executed: int
    n_failed: int
    dataset_path: Path
    sessions_path: Path
    manifest_path: Path


def generate_corpus(out_dir, configs: Sequence[tuple], workers: Optional[int] = None,
                    max_failure_rate: float = 0.01) -> CorpusInfo:
    """Run (config_id, SessionConfig) pairs, merging snapshots deterministically.

    A manifest in the output directory records completed sessions; rerunning
    with the same directory skips them.  Shards merge in plan order, so the
    merged dataset bytes do not depend on the worker count.
    """
    out = Path(out_dir)
    shards = out / "shards"
    shards.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {"completed": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())

    pending = []
    for config_id, config in configs:
        key = "%s:%d" % (config_id, config.seed)
        status = manifest["completed"].get(key)
        if status is not None and not str(status).startswith("failed"):
            continue
        pending.append((key, config.to_json(), config_id))

    workers = workers or worker_count()
    results = {}
    if pending:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for out_tuple in pool.map(_corpus_session, pending, chunksize=4):
                    results[out_tuple[0]] = out_tuple
        else:
            for args in pending:
                out_tuple = _corpus_session(args)
                results[out_tuple[0]] = out_tuple

    n_failed = 0
    for key, rows, summary, error in results.values():
        if error is not None:
            manifest["completed"][key] = "failed: %s" % error
            n_failed += 1
            continue
        shard = SnapshotDataset(rows=np.array(rows, dtype=np.float64).reshape(-1, 14))
        shard.save_csv(shards / ("%s.csv" % key.replace(":", "_")))
        (shards / ("%s.meta.json" % key.replace(":", "_"))).write_text(
            json.dumps({"summary": summary}, sort_keys=True))
        manifest["completed"][key] = shard.rows.shape[0]
    manifest_path.write_text(json.dumps(manifest, sort_keys=True))

    failed_total = sum(1 for v in manifest["completed"].values()
                       if str(v).startswith("failed"))
    if failed_total > max_failure_rate * max(len(configs), 1):
        raise CorpusError("%d of %d sessions failed" % (failed_total, len(configs)))

    # deterministic merge in plan order
    merged = []
    summary_rows = []
    provenance = []
    for config_id, config in configs:
        key = "%s:%d" % (config_id, config.seed)
        status = manifest["completed"].get(key)
        if status is None or str(status).startswith("failed"):
            continue
        stem = key.replace(":", "_")
        shard = SnapshotDataset.load_csv(shards / ("%s.csv" % stem))
        merged.append(shard.rows)
        provenance.append((config_id, config.seed, shard.rows.shape[0]))
        meta = json.loads((shards / ("%s.meta.json" % stem)).read_text())
        summary_rows.extend(meta["summary"])

    dataset = SnapshotDataset(
        rows=np.concatenate(merged) if merged else np.empty((0, 14)),
        provenance=provenance)
    dataset_path = out / "dataset.csv"
    dataset.save_csv(dataset_path)
    sessions_path = out / "sessions.csv"
    with open(sessions_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config_id", "seed", "strategy", "appt",
                         "efficiency", "n_trades", "mean_alpha"])
        writer.writerows(summary_rows)
    return CorpusInfo(n_planned=len(configs), n_executed=len(results),
                      n_failed=n_failed, dataset_path=dataset_path,
                      sessions_path=sessions_path, manifest_path=manifest_path)


def grid_corpus_configs(templates: Sequence[GridTemplate], n_seeds: int,
                        scale: float = 1.0, base_seed: int = 0,
                        session_kw: Optional[dict] = None) -> list:
    """(config_id, SessionConfig) pairs for a (possibly subsampled) grid run."""
    session_kw = session_kw or {}
    by_id = {tpl.config_id: tpl for tpl in templates}
    plan = scale_plan(plan_sessions(templates, n_seeds), scale)
    configs = []
    for config_id, seed_idx in plan:
        tpl = by_id[config_id]
        idx = int(config_id[3:])
        configs.append((config_id, SessionConfig(
            population=tpl.population(),
            seed=session_seed(base_seed, idx, seed_idx), **session_kw)))
    return configs


def fixed_corpus_configs(population: list, n_sessions: int, base_seed: int = 0,
                         session_kw: Optional[dict] = None) -> list:
    """(config_id, SessionConfig) pairs for a fixed-population corpus."""
    session_kw = session_kw or {}
    return [("fixed%04d" % i, SessionConfig(
        population=population, seed=session_seed(base_seed, i), **session_kw))
        for i in range(n_sessions)]


# -- statistics ----------------------------------------------------------

CI90_Z = 1.645


def ci90(samples: Sequence[float]) -> tuple:
    """(mean, half_width) of the 90% normal-approximation CI around the mean."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    half = CI90_Z * samples.std(ddof=1) / np.sqrt(samples.size)
    return (float(samples.mean()), float(half))


def ci_overlap(a: tuple, b: tuple) -> bool:
    """Whether two (mean, half_width) intervals intersect."""
    return (a[0] - a[1]) <= (b[0] + b[1]) and (b[0] - b[1]) <= (a[0] + a[1])


def summary_stats(samples: Sequence[float]) -> dict:
    """Mean, median, quartiles, IQR, CI90 and 1.5*IQR outliers."""
    samples = np.asarray(samples, dtype=np.float64)
    q1, median, q3 = np.percentile(samples, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    mean, half = ci90(samples)
    return {
        "n": int(samples.size),
        "mean": float(samples.mean()),
        "median": float(median),
        "q1": float(q1),
        "q3": float(q3),
        "iqr": float(iqr),
        "ci90_mean": mean,
        "ci90_half_width": half,
        "outliers": sorted(float(x) for x in samples[(samples < lo) | (samples > hi)]),
    }


# -- head-to-head trials ---------------------------------------------------


@dataclass
class TrialSet:
    """APPT samples for two strategies over n independent trials."""

    kind: str                      # "BGT" or "OMT"
    tag_a: str
    tag_b: str
    seeds: list
    samples_a: list
    samples_b: list

    @property
    def n_trials(self) -> int:
        return len(self.seeds)

    def summary(self) -> dict:
        a, b = summary_stats(self.samples_a), summary_stats(self.samples_b)
        return {
            "kind": self.kind,
            "strategy_a": self.tag_a,
            "strategy_b": self.tag_b,
            "n_trials": self.n_trials,
            "a": a,
            "b": b,
            "significant": not ci_overlap((a["ci90_mean"], a["ci90_half_width"]),
                                          (b["ci90_mean"], b["ci90_half_width"])),
        }

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["trial", "seed", "strategy", "appt"])
            for i, seed in enumerate(self.seeds):
                writer.writerow([i, seed, self.tag_a, repr(float(self.samples_a[i]))])
                writer.writerow([i, seed, self.tag_b, repr(float(self.samples_b[i]))])

    @classmethod
    def load_csv(cls, path, kind="?") -> "TrialSet":
        rows = {}
        tags = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            for trial, seed, tag, appt in reader:
                rows.setdefault(int(trial), {})[tag] = float(appt)
                rows[int(trial)]["seed"] = int(seed)
                if tag not in tags:
                    tags.append(tag)
        seeds, sa, sb = [], [], []
        for trial in sorted(rows):
            seeds.append(rows[trial]["seed"])
            sa.append(rows[trial][tags[0]])
            sb.append(rows[trial][tags[1]])
        return cls(kind=kind, tag_a=tags[0], tag_b=tags[1], seeds=seeds,
                   samples_a=sa, samples_b=sb)

    def save_summary_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, sort_keys=True, indent=1)


def _trial_session(args) -> tuple:
    idx, config_json = args
    result = run_session(SessionConfig.from_json(config_json))
    return (idx, result.appt)


def _run_trials(kind: str, tag_a: str, tag_b: str, configs: list,
                workers: Optional[int] = None) -> TrialSet:
    workers = workers or worker_count()
    jobs = [(i, cfg.to_json()) for i, cfg in enumerate(configs)]
    appts = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, appt in pool.map(_trial_session, jobs, chunksize=2):
                appts[idx] = appt
    else:
        for job in jobs:
            idx, appt = _trial_session(job)
            appts[idx] = appt
    return TrialSet(kind=kind, tag_a=tag_a, tag_b=tag_b,
                    seeds=[cfg.seed for cfg in configs],
                    samples_a=[appts[i][tag_a] for i in range(len(configs))],
                    samples_b=[appts[i][tag_b] for i in range(len(configs))])


def run_bgt(tag_a: str, tag_b: str, n_trials: int = 100, base_seed: int = 0,
            model_path: Optional[str] = None, session_kw: Optional[dict] = None,
            workers: Optional[int] = None) -> TrialSet:
    """Balanced-group test: 20+20 of each strategy, matched limit prices."""
    session_kw = dict(session_kw or {})
    session_kw.setdefault("capture", False)
    configs = [SessionConfig(population=[(tag_a, 20, 20), (tag_b, 20, 20)],
                             paired_limits=True, model_path=model_path,
                             seed=session_seed(base_seed, 1, i), **session_kw)
               for i in range(n_trials)]
    return _run_trials("BGT", tag_a, tag_b, configs, workers)


def run_omt(singleton_tag: str, field_tag: str, n_trials: int = 100,
            base_seed: int = 0, model_path: Optional[str] = None,
            single_side: bool = False, session_kw: Optional[dict] = None,
            workers: Optional[int] = None) -> TrialSet:
    """One-in-many test: a lone singleton inside an otherwise uniform field.

    By default one singleton buyer and one singleton seller are inserted
    (preserving the per-strategy buyer/seller symmetry); single_side=True
    inserts a single buyer only.
    """
    session_kw = dict(session_kw or {})
    session_kw.setdefault("capture", False)
    if single_side:
        population = [(singleton_tag, 1, 0), (field_tag, 39, 40)]
    else:
        population = [(singleton_tag, 1, 1), (field_tag, 39, 39)]
    configs = [SessionConfig(population=population, model_path=model_path,
                             seed=session_seed(base_seed, 2, i), **session_kw)
               for i in range(n_trials)]
    return _run_trials("OMT", singleton_tag, field_tag, configs, workers)


# -- training + ablation ---------------------------------------------------


def train_on_dataset(dataset: SnapshotDataset, cfg: TrainConfig,
                     mask: Sequence[str] = FEATURE_NAMES) -> tuple:
    """Fit normalization, train, and wrap the result as a ModelBundle."""
    norm = NormalizationSpec.fit(dataset, mask=mask)
    x = norm.apply(dataset.features)
    y = norm.apply_target(dataset.targets)
    result = train(x, y, cfg)
    bundle = ModelBundle(params=result.params, normalization=norm,
                         sequence_length=cfg.sequence_length)
    return result, bundle


@dataclass
class AblationResult:
    feature: str
    baseline_val_mse: float
    ablated_val_mse: float

    @property
    def performance_hit(self) -> float:
        return self.ablated_val_mse - self.baseline_val_mse


def ablate_feature(dataset: SnapshotDataset, feature: str, cfg: TrainConfig,
                   mask: Sequence[str] = FEATURE_NAMES,
                   baseline_val_mse: Optional[float] = None,
                   shuffle_seed: int = 0) -> AblationResult:
    """Shuffle one feature column (multiset preserved), retrain identically,
    and report the validation-MSE increase."""
    if feature not in mask:
        raise ValueError("feature %r not in active mask" % (feature,))
    if baseline_val_mse is None:
        base_result, _ = train_on_dataset(dataset, cfg, mask)
        baseline_val_mse = base_result.history[-1].val_mse
    rng = np.random.default_rng(shuffle_seed)
    rows = dataset.rows.copy()
    col = FEATURE_NAMES.index(feature)
    rows[:, col] = rows[rng.permutation(len(rows)), col]
    ablated = SnapshotDataset(rows=rows)
    result, _ = train_on_dataset(ablated, cfg, mask)
    return AblationResult(feature=feature,
                          baseline_val_mse=baseline_val_mse,
                          ablated_val_mse=result.history[-1].val_mse)


def ablation_sweep(dataset: SnapshotDataset, cfg: TrainConfig,
                   mask: Sequence[str] = FEATURE_NAMES,
                   shuffle_seed: int = 0) -> list:
    """Ablate every active feature; results sorted by descending hit."""
    base_result, _ = train_on_dataset(dataset, cfg, mask)
    baseline = base_result.history[-1].val_mse
    results = [ablate_feature(dataset, name, cfg, mask,
                              baseline_val_mse=baseline, shuffle_seed=shuffle_seed)
               for name in mask]
    return sorted(results, key=lambda r: -r.performance_hit)


def save_ablation_report(results: Sequence[AblationResult], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablation.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "feature", "baseline_val_mse",
                         "ablated_val_mse", "performance_hit"])
        for rank, r in enumerate(results, start=1):
            writer.writerow([rank, r.feature, repr(r.baseline_val_mse),
                             repr(r.ablated_val_mse), repr(r.performance_hit)])
    return path


def reduce_and_retrain(dataset: SnapshotDataset, keep_mask: Sequence[str],
                       cfg: TrainConfig,
                       full_mask: Sequence[str] = FEATURE_NAMES) -> dict:
    """Retrain with a reduced input mask; report both validation losses."""
    keep_mask = tuple(keep_mask)
    if not keep_mask:
        raise ValueError("keep mask must not be empty")
    if not set(keep_mask) <= set(full_mask):
        raise ValueError("keep mask must be a subset of the active features")
    base_result, base_bundle = train_on_dataset(dataset, cfg, full_mask)
    red_result, red_bundle = train_on_dataset(dataset, cfg, keep_mask)
    return {
        "baseline_val_mse": base_result.history[-1].val_mse,
        "reduced_val_mse": red_result.history[-1].val_mse,
        "baseline_bundle": base_bundle,
        "reduced_bundle": red_bundle,
        "keep_mask": keep_mask,
    }
