"""Per-seed experiment pipeline: train, filter, attack, measure, report."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import metrics
from .attack import AttackSpec, run_attack, standard_adv_baseline, relevance_sets
from .data import DatasetSplit, synth_blob_dataset, load_concept_mnist, split_dataset
from .defense import RclConfig, rcl_train
from .model import (Architecture, BLOB_ARCH, CMNIST_ARCH, CbmModel, TrainConfig,
                    evaluate, train)


@dataclass
class ExperimentConfig:
    dataset_preset: str = "blob"  # blob | cmnist
    blob_n: int = 2500
    data_root: str = ""
    model_preset: str = "blob"
    train: TrainConfig = field(default_factory=lambda: replace(BLOB_TRAIN))
    rcl: RclConfig = field(default_factory=lambda: _blob_rcl())
    attack: AttackSpec = field(default_factory=lambda: replace(BLOB_ATTACK))
    beta_introduction: float = 5.0
    beta_confounding: float = 10.0
    goals: tuple = ("erasure", "introduction", "confounding")
    models: tuple = ("joint", "rcl-hybrid", "adv-baseline")
    n_attack_samples: int = 500
    seeds: tuple = (0, 1, 2)
    out_dir: str = "runs/experiment"
    workers: int = 1

    def validate(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.dataset_preset not in ("blob", "cmnist"):
            raise ValueError(f"unknown dataset preset {self.dataset_preset!r}")
        self.train.validate()
        self.rcl.validate()
        self.attack.validate()


# Presets follow the published C-MNIST settings with the budget converted to
# [0,1] pixel units (30 on the 0-255 byte scale -> 0.12). The blob preset
# rescales step count / weights for the 12x12 corpus, where concept margins
# are larger relative to the budget.
CMNIST_ATTACK = AttackSpec(step_size=1e-3, n_steps=200, budget=0.12)
BLOB_ATTACK = AttackSpec(step_size=2e-3, n_steps=70, budget=0.12, beta=5.0)

BLOB_TRAIN = TrainConfig(paradigm="joint", epochs=14)
BLOB_RCL = RclConfig(
    inner_step=0.03,
    inner_iters=7,
    inner_budget=0.12,
    adv_weight=2.0,
    train=TrainConfig(paradigm="hybrid", epochs=24, concept_weight=2.0),
)


def _blob_rcl():
    # fresh nested TrainConfig so instances never share mutable state
    return replace(BLOB_RCL, train=replace(BLOB_RCL.train))


def build_dataset(cfg: ExperimentConfig, seed) -> DatasetSplit:
    if cfg.dataset_preset == "blob":
        return synth_blob_dataset(cfg.blob_n, seed=seed)
    root = cfg.data_root or os.environ.get("CBMLAB_DATA_ROOT", "")
    if not root:
        raise FileNotFoundError(
            "cmnist preset needs data_root or CBMLAB_DATA_ROOT set"
        )
    samples = load_concept_mnist(
        os.path.join(root, "train-images-idx3-ubyte"),
        os.path.join(root, "train-labels-idx1-ubyte"),
    )
    return split_dataset(samples, seed=seed)


def build_arch(cfg: ExperimentConfig) -> Architecture:
    return CMNIST_ARCH if cfg.model_preset == "cmnist" else BLOB_ARCH


def train_model(cfg: ExperimentConfig, split, seed, robust=False):
    arch = build_arch(cfg)
    model = CbmModel(arch, split.spec, seed=seed)
    if robust:
        rcl = replace(cfg.rcl, train=replace(cfg.rcl.train, seed=seed))
        rcl_train(model, split, rcl)
    else:
        tcfg = replace(cfg.train, seed=seed)
        train(model, split, tcfg)
    return model


def filtered_samples(model, samples, n_wanted, seed):
    """Seeded draw of up to n_wanted filter-passing samples."""
    rng = np.random.default_rng((seed, 0xA77))
    order = rng.permutation(len(samples))
    kept = []
    for i in order:
        if metrics.sample_filter(model, samples[i]).keep:
            kept.append((int(i), samples[i]))
            if len(kept) >= n_wanted:
                break
    return kept


def _goal_spec(cfg: ExperimentConfig, goal):
    spec = replace(cfg.attack, goal=goal, targets=None)
    if goal == "introduction":
        spec = replace(spec, beta=cfg.beta_introduction)
    elif goal == "confounding":
        spec = replace(spec, beta=cfg.beta_confounding)
    return spec


def attack_sample(model, sample, spec: AttackSpec, baseline=False):
    """Attack one sample; erasure runs one attack per relevant concept.

    Returns a list of metric records {metric: value} plus raw outcomes.
    """
    runner = standard_adv_baseline if baseline else run_attack
    x = sample.image[None, :, :]
    records = {}
    outcomes = []
    thr = spec.relevance_threshold
    if spec.goal == "erasure":
        scores0 = model.concept_scores(ad.Tensor(x[None])).data[0]
        rel = relevance_sets(scores0, thr).relevant
        flips = []
        sample_flip_pcts = []
        for j in rel:
            out = runner(model, x, replace(spec, targets=(j,)))
            outcomes.append(out)
            flips.append(bool(out.flipped[j]))
            sample_flip_pcts.append(
                metrics.pct_flipped(out.scores_before, out.scores_after,
                                    model.spec.kind, spec.flip_threshold, thr)
            )
        records["flip_rate"] = 100.0 * float(np.mean(flips)) if flips else 0.0
        records["flip_pct_sample"] = (
            float(np.mean(sample_flip_pcts)) if sample_flip_pcts else 0.0
        )
        records["n_targets"] = float(len(rel))
    else:
        out = runner(model, x, spec)
        outcomes.append(out)
        before = metrics.presence_set(out.scores_before, thr)
        after = metrics.presence_set(out.scores_after, thr)
        if spec.goal == "introduction":
            records["introduced_pct"] = metrics.pct_introduced(before, after)
            records["retained_pct"] = metrics.pct_retained(before, after)
        else:
            records["jsi"] = metrics.jaccard(before, after)
            if model.spec.kind == "continuous":
                avg_d, min_d = metrics.delta_stats(out.scores_before,
                                                   out.scores_after)
                records["avg_delta"] = avg_d
                records["min_delta"] = min_d
        records["linf"] = out.linf
    return records, outcomes


def run_goal(model, kept, spec, baseline=False, workers=1):
    """Attack every kept (sample_id, sample) pair; order-fixed reduction."""
    def work(item):
        sid, sample = item
        recs, outs = attack_sample(model, sample, spec, baseline=baseline)
        return sid, recs, outs

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, kept))
    else:
        results = [work(item) for item in kept]
    return results


def run_seed(cfg: ExperimentConfig, seed, out_dir=None, keep_outcomes=False):
    """Full single-seed pipeline; returns nested result dict.

    With keep_outcomes the raw AttackOutcome lists are returned under
    result["_outcomes"] keyed by (model, goal), for constraint audits.
    """
    split = build_dataset(cfg, seed)
    result = {"seed": seed, "models": {}, "_outcomes": {}}
    models = {}
    if any(m in cfg.models for m in ("joint", "adv-baseline")):
        models["joint"] = train_model(cfg, split, seed, robust=False)
    if "rcl-hybrid" in cfg.models:
        models["rcl-hybrid"] = train_model(cfg, split, seed, robust=True)

    rows = []
    for name in cfg.models:
        baseline = name == "adv-baseline"
        model = models["joint"] if baseline else models[name]
        task_err, concept_err = evaluate(model, split.test)
        kept = filtered_samples(model, split.test, cfg.n_attack_samples, seed)
        per_goal = {}
        goals = ("erasure",) if baseline else cfg.goals
        for goal in goals:
            spec = _goal_spec(cfg, goal)
            results = run_goal(model, kept, spec, baseline=baseline,
                               workers=cfg.workers)
            if keep_outcomes:
                result["_outcomes"][(name, goal)] = [
                    (sid, outs) for sid, _, outs in results
                ]
            agg = {}
            for sid, recs, _ in results:
                for metric, value in recs.items():
                    agg.setdefault(metric, []).append(value)
                    rows.append((f"{name}/{sid}", goal, metric, value))
            per_goal[goal] = {
                m: float(np.mean(v)) for m, v in agg.items() if v
            }
            # per-target flip aggregation weights each target equally
            if goal == "erasure":
                flips = []
                for sid, recs, outs in results:
                    for out in outs:
                        flips.extend(bool(v) for v in out.flipped.values())
                per_goal[goal]["flip_rate_per_target"] = (
                    100.0 * float(np.mean(flips)) if flips else 0.0
                )
        result["models"][name] = {
            "task_error": task_err,
            "concept_error": concept_err,
            "n_filtered": len(kept),
            "goals": per_goal,
        }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, f"seed{seed}.csv"), rows)
    result["_rows"] = rows
    return result


def write_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "attack", "metric", "value"])
        for sid, goal, metric, value in rows:
            w.writerow([sid, goal, metric, f"{value:.10g}"])


def config_hash(cfg: ExperimentConfig) -> str:
    def enc(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {k: enc(getattr(obj, k)) for k in obj.__dataclass_fields__}
        if isinstance(obj, (list, tuple)):
            return [enc(v) for v in obj]
        return obj

    blob = json.dumps(enc(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def aggregate_seeds(per_seed):
    """mean +/- population std of every per-model per-goal metric."""
    table = {}
    for res in per_seed:
        for name, mres in res["models"].items():
            for goal, gm in mres["goals"].items():
                for metric, value in gm.items():
                    table.setdefault((name, goal, metric), []).append(value)
    return {
        key: metrics.aggregate(vals) for key, vals in sorted(table.items())
    }


def run_experiment(cfg: ExperimentConfig):
    """Per-seed pipelines + aggregate summary + manifest on disk."""
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    start = time.time()
    per_seed = []
    failures = {}
    for seed in cfg.seeds:
        try:
            per_seed.append(run_seed(cfg, seed, out_dir=cfg.out_dir))
        except Exception as exc:  # record per-seed failures, keep going
            failures[seed] = f"{type(exc).__name__}: {exc}"
    if not per_seed:
        raise RuntimeError(f"all seeds failed: {failures}")
    summary = aggregate_seeds(per_seed)
    summary_rows = [
        (f"{name}", goal, f"{metric}_mean", mean)
        for (name, goal, metric), (mean, _) in summary.items()
    ] + [
        (f"{name}", goal, f"{metric}_std", std)
        for (name, goal, metric), (_, std) in summary.items()
    ]
    write_csv(os.path.join(cfg.out_dir, "summary.csv"), sorted(summary_rows))
    manifest = {
        "config_hash": config_hash(cfg),
        "seeds": list(cfg.seeds),
        "failed_seeds": failures,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": round(time.time() - start, 3),
        "n_filtered": {
            str(r["seed"]): {m: v["n_filtered"] for m, v in r["models"].items()}
            for r in per_seed
        },
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return per_seed, summary
