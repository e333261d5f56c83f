"""Robust Concept Learning: adversarial augmentation in concept space
inside a hybrid training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import batches
from .model import TrainConfig, batch_loss


@dataclass
class RclConfig:
    inner_step: float = 0.02
    inner_iters: int = 7
    inner_budget: float = 0.12  # matches the attack-evaluation budget
    adv_weight: float = 1.0  # alpha
    adv_mode: str = "concept"  # concept | prediction
    train: TrainConfig = field(default_factory=lambda: TrainConfig(paradigm="hybrid"))

    def validate(self):
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")
        if self.adv_weight < 0:
            raise ValueError("adv_weight must be >= 0")
        if self.adv_mode not in ("concept", "prediction"):
            raise ValueError(f"unknown adv-loss mode {self.adv_mode!r}")
        self.train.validate()


def _concept_loss_on(model, xt, c):
    logits = model.concept_logits(xt)
    if model.spec.kind == "binary":
        return ad.scale(ad.bce_loss(logits, c), model.arch.n_concepts)
    return ad.scale(ad.mse_loss(logits, c), model.arch.n_concepts)


def adversarial_augment(model, x, c, cfg: RclConfig):
    """Inner maximization: sign-ascend the concept loss of g, then clamp to
    [0,1] and project onto the L-inf ball around x. Never consults labels."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = x.copy()
    for _ in range(cfg.inner_iters):
        xt = ad.Tensor(x_adv, requires_grad=True)
        loss = _concept_loss_on(model, xt, c)
        loss.backward()
        grad = xt.grad if xt.grad is not None else np.zeros_like(x_adv)
        x_adv = x_adv + cfg.inner_step * np.sign(grad)
        x_adv = np.clip(x_adv, x - cfg.inner_budget, x + cfg.inner_budget)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv


def _adv_loss(model, x_adv, c, y, mode):
    xt = ad.Tensor(x_adv)
    if mode == "concept":
        return _concept_loss_on(model, xt, c)
    scores = model.concept_scores(xt)
    return model.task_loss_from_scores(scores, y)


def rcl_train(model, split, cfg: RclConfig):
    """Hybrid training with the per-batch adversarial term; returns history."""
    cfg.validate()
    tc = cfg.train
    if tc.paradigm != "hybrid":
        raise ValueError("rcl_train uses the hybrid schedule")
    history = []
    n = tc.epochs
    first = (n + 1) // 2
    phases = [
        (range(0, first), model.g_params(), 0.0, 1.0, tc.lr),
        (range(first, n), model.params(), 1.0, tc.concept_weight, tc.lr_finetune),
    ]
    for epoch_range, params, task_w, concept_w, lr in phases:
        opt = ad.SgdMomentum(params, lr=lr, momentum=tc.momentum)
        for epoch in epoch_range:
            task_sum = concept_sum = adv_sum = 0.0
            nb = 0
            for x, c, y in batches(split.train, tc.batch_size, tc.seed, epoch=epoch):
                loss, parts = batch_loss(model, x, c, y, task_w, concept_w)
                if cfg.adv_weight != 0.0:
                    x_adv = adversarial_augment(model, x, c, cfg)
                    adv = _adv_loss(model, x_adv, c, y, cfg.adv_mode)
                    parts["adv"] = float(adv.data)
                    loss = ad.add(loss, ad.scale(adv, cfg.adv_weight))
                else:
                    parts["adv"] = 0.0
                if not np.isfinite(loss.data):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}: {parts}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                task_sum += parts["task"]
                concept_sum += parts["concept"]
                adv_sum += parts["adv"]
                nb += 1
            history.append({
                "task": task_sum / nb,
                "concept": concept_sum / nb,
                "adv": adv_sum / nb,
            })
    return history
