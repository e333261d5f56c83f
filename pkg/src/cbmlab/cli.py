"""Command-line front end: synth-data, train, rcl-train, attack, report, selfcheck.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, REFERENCE_CONFIG, load_config
from .data import stack
from .experiment import (ExperimentConfig, aggregate_seeds, build_dataset,
                         config_hash, run_experiment, run_seed, train_model)
from .model import evaluate, load_checkpoint, save_checkpoint


def _add_common(p):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="override the first config seed")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--preset", choices=("cmnist", "blob"),
                   help="dataset/model preset override")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.preset:
        cfg = replace(cfg, dataset_preset=args.preset, model_preset=args.preset)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,) + tuple(cfg.seeds[1:]))
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    cfg.validate()
    return cfg


def cmd_synth_data(args):
    cfg = _load(args)
    split = build_dataset(cfg, cfg.seeds[0])
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "dataset.npz")
    arrays = {}
    for name, part in (("train", split.train), ("val", split.val),
                       ("test", split.test)):
        x, c, y = stack(part)
        arrays[f"{name}_x"], arrays[f"{name}_c"], arrays[f"{name}_y"] = x, c, y
    np.savez(path, **arrays)
    print(f"wrote {path} "
          f"({len(split.train)}/{len(split.val)}/{len(split.test)} samples)")
    return 0


def _train_cmd(args, robust):
    cfg = _load(args)
    seed = cfg.seeds[0]
    split = build_dataset(cfg, seed)
    model = train_model(cfg, split, seed, robust=robust)
    task_err, concept_err = evaluate(model, split.test)
    os.makedirs(cfg.out_dir, exist_ok=True)
    tag = "rcl-hybrid" if robust else cfg.train.paradigm
    path = os.path.join(cfg.out_dir, f"{tag}-seed{seed}.ckpt")
    save_checkpoint(path, model, cfg.train,
                    extra={"defense": "rcl" if robust else "none",
                           "task_error": task_err,
                           "concept_error": concept_err})
    print(f"wrote {path} task_error={task_err:.4f} "
          f"concept_error={concept_err:.4f}")
    return 0


def cmd_train(args):
    return _train_cmd(args, robust=False)


def cmd_rcl_train(args):
    return _train_cmd(args, robust=True)


def cmd_attack(args):
    cfg = _load(args)
    if args.checkpoint:
        return _attack_checkpoint(cfg, args.checkpoint)
    per_seed, summary = run_experiment(cfg)
    for (name, goal, metric), (mean, std) in summary.items():
        print(f"{name:12s} {goal:13s} {metric:22s} {mean:10.4f} +/- {std:.4f}")
    return 0


def _attack_checkpoint(cfg, ckpt_path):
    """Attack one saved model over the configured goals instead of running
    the full train-everything experiment."""
    from .experiment import _goal_spec, filtered_samples, run_goal, write_csv

    if not os.path.exists(ckpt_path):
        raise FileNotFoundError(f"missing checkpoint: {ckpt_path}")
    model, _ = load_checkpoint(ckpt_path)
    seed = cfg.seeds[0]
    split = build_dataset(cfg, seed)
    kept = filtered_samples(model, split.test, cfg.n_attack_samples, seed)
    name = os.path.splitext(os.path.basename(ckpt_path))[0]
    rows = []
    for goal in cfg.goals:
        spec = _goal_spec(cfg, goal)
        for sid, recs, _ in run_goal(model, kept, spec, workers=cfg.workers):
            for metric, value in recs.items():
                rows.append((f"{name}/{sid}", goal, metric, value))
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, f"attack-{name}.csv")
    write_csv(out_path, rows)
    print(f"wrote {out_path} ({len(rows)} records from {len(kept)} samples)")
    return 0


def cmd_report(args):
    cfg = _load(args)
    import csv as _csv
    import glob

    rows = []
    for path in sorted(glob.glob(os.path.join(cfg.out_dir, "seed*.csv"))):
        with open(path) as f:
            rows.extend(list(_csv.DictReader(f)))
    if not rows:
        raise FileNotFoundError(f"no per-seed CSVs under {cfg.out_dir}")
    table = {}
    for r in rows:
        model = r["sample_id"].split("/")[0]
        key = (model, r["attack"], r["metric"])
        table.setdefault(key, []).append(float(r["value"]))
    summary_path = os.path.join(cfg.out_dir, "report.json")
    report = {
        "config_hash": config_hash(cfg),
        "metrics": {
            "/".join(k): {"mean": float(np.mean(v)), "std": float(np.std(v)),
                          "n": len(v)}
            for k, v in sorted(table.items())
        },
    }
    with open(summary_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print(f"wrote {summary_path} ({len(rows)} records)")
    return 0


def cmd_selfcheck(args):
    from .selfcheck import run_all

    results = run_all()
    for name, ok in results.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    return 0 if all(results.values()) else 2


def cmd_print_config(args):
    sys.stdout.write(REFERENCE_CONFIG)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cbmlab",
        description="Concept-bottleneck robustness lab: train, attack, defend.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("synth-data", cmd_synth_data),
        ("train", cmd_train),
        ("rcl-train", cmd_rcl_train),
        ("attack", cmd_attack),
        ("report", cmd_report),
        ("selfcheck", cmd_selfcheck),
        ("print-config", cmd_print_config),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "attack":
            p.add_argument("--checkpoint", help="attack this checkpoint")
        p.set_defaults(fn=fn)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; map to the config-error code
        raise SystemExit(1 if exc.code else 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
