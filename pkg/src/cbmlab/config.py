"""Flat `key = value` experiment config files with section headers."""

from __future__ import annotations

import configparser

from .attack import AttackSpec
from .defense import RclConfig
from .experiment import BLOB_ATTACK, CMNIST_ATTACK, ExperimentConfig
from .model import TrainConfig

REFERENCE_CONFIG = """\
# cbmlab experiment configuration (INI syntax, all keys optional)

[dataset]
preset = blob            # blob | cmnist
blob_n = 2500            # blob corpus size
data_root =              # IDX file directory for the cmnist preset

[model]
preset = blob            # blob | cmnist architecture preset

[train]
paradigm = joint         # sequential | joint | hybrid
epochs = 14
batch_size = 64
task_weight = 1.0
concept_weight = 0.5
lr = 0.01
lr_finetune = 0.005
momentum = 0.9

[rcl]
inner_step = 0.03
inner_iters = 7
inner_budget = 0.12
adv_weight = 2.0
adv_mode = concept       # concept | prediction
epochs = 24              # rcl-hybrid outer epochs
concept_weight = 2.0     # lambda during the rcl finetune phase

[attack]
step_size = 0.002
n_steps = 70
budget = 0.12
alpha = 1.0
beta = 5.0
beta_introduction = 5.0
beta_confounding = 10.0
gamma_conf = 5.0
relevance_threshold = 0.5
flip_threshold = 2.0
n_samples = 500
goals = erasure,introduction,confounding

[experiment]
models = joint,rcl-hybrid,adv-baseline
seeds = 0,1,2
out_dir = runs/experiment
workers = 1
"""


class ConfigError(ValueError):
    pass


def _get(section, key, cast, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    if raw == "":
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _csv_tuple(raw):
    return tuple(v.strip() for v in raw.split(",") if v.strip())


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    known = {"dataset", "model", "train", "rcl", "attack", "experiment"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def sec(name):
        return parser[name] if parser.has_section(name) else None

    ds, mo, tr, rc, at, ex = (sec(n) for n in
                              ("dataset", "model", "train", "rcl", "attack",
                               "experiment"))
    dataset_preset = _get(ds, "preset", str, "blob")
    model_preset = _get(mo, "preset", str, dataset_preset)
    base_attack = CMNIST_ATTACK if model_preset == "cmnist" else BLOB_ATTACK

    train_cfg = TrainConfig(
        paradigm=_get(tr, "paradigm", str, "joint"),
        epochs=_get(tr, "epochs", int, 14),
        batch_size=_get(tr, "batch_size", int, 64),
        task_weight=_get(tr, "task_weight", float, 1.0),
        concept_weight=_get(tr, "concept_weight", float, 0.5),
        lr=_get(tr, "lr", float, 0.01),
        lr_finetune=_get(tr, "lr_finetune", float, 0.005),
        momentum=_get(tr, "momentum", float, 0.9),
    )
    rcl_cfg = RclConfig(
        inner_step=_get(rc, "inner_step", float, 0.03),
        inner_iters=_get(rc, "inner_iters", int, 7),
        inner_budget=_get(rc, "inner_budget", float, base_attack.budget),
        adv_weight=_get(rc, "adv_weight", float, 2.0),
        adv_mode=_get(rc, "adv_mode", str, "concept"),
        train=TrainConfig(
            paradigm="hybrid",
            epochs=_get(rc, "epochs", int, 24),
            batch_size=train_cfg.batch_size,
            concept_weight=_get(rc, "concept_weight", float, 2.0),
            lr=train_cfg.lr,
            lr_finetune=train_cfg.lr_finetune,
            momentum=train_cfg.momentum,
        ),
    )
    attack_cfg = AttackSpec(
        step_size=_get(at, "step_size", float, base_attack.step_size),
        n_steps=_get(at, "n_steps", int, base_attack.n_steps),
        budget=_get(at, "budget", float, base_attack.budget),
        alpha=_get(at, "alpha", float, 1.0),
        beta=_get(at, "beta", float, base_attack.beta),
        gamma_conf=_get(at, "gamma_conf", float, 5.0),
        relevance_threshold=_get(at, "relevance_threshold", float, 0.5),
        flip_threshold=_get(at, "flip_threshold", float, 2.0),
    )
    cfg = ExperimentConfig(
        dataset_preset=dataset_preset,
        blob_n=_get(ds, "blob_n", int, 2500),
        data_root=_get(ds, "data_root", str, ""),
        model_preset=model_preset,
        train=train_cfg,
        rcl=rcl_cfg,
        attack=attack_cfg,
        beta_introduction=_get(at, "beta_introduction", float, 5.0),
        beta_confounding=_get(at, "beta_confounding", float, 10.0),
        goals=_get(at, "goals", _csv_tuple,
                   ("erasure", "introduction", "confounding")),
        models=_get(ex, "models", _csv_tuple,
                    ("joint", "rcl-hybrid", "adv-baseline")),
        n_attack_samples=_get(at, "n_samples", int, 500),
        seeds=_get(ex, "seeds", lambda s: tuple(int(v) for v in _csv_tuple(s)),
                   (0, 1, 2)),
        out_dir=_get(ex, "out_dir", str, "runs/experiment"),
        workers=_get(ex, "workers", int, 1),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
