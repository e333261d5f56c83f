"""4-input linear toy CBM whose attack objective is exactly linear in the
input, so exhaustive grid search over the perturbation box is a valid
oracle for the sign-ascent attack.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attack import AttackSpec, relevance_sets
from .data import ConceptSpec


@dataclass
class _ToyArch:
    task_kind: str = "classification"


class LinearToyCbm:
    """g(x) = x @ Wg (continuous scores), f(s) = s @ Wf."""

    def __init__(self, wg, wf, bf=None, threshold=0.0):
        self.wg = np.asarray(wg, dtype=np.float64)  # [4, 2]
        self.wf = np.asarray(wf, dtype=np.float64)  # [2, K]
        self.bf = (np.zeros(self.wf.shape[1]) if bf is None
                   else np.asarray(bf, dtype=np.float64))
        self.arch = _ToyArch()
        self.spec = ConceptSpec(
            names=tuple(f"c{i}" for i in range(self.wg.shape[1])),
            kind="continuous",
            relevance_threshold=threshold,
        )
        self._wg_t = ad.Tensor(self.wg)
        self._wf_t = ad.Tensor(self.wf)
        self._bg = ad.Tensor(np.zeros(self.wg.shape[1]))
        self._bf = ad.Tensor(self.bf)

    def concept_scores(self, x: ad.Tensor) -> ad.Tensor:
        flat = ad.reshape(x, (x.shape[0], self.wg.shape[0]))
        return ad.dense(flat, self._wg_t, self._bg)

    def class_logits_from_scores(self, scores: ad.Tensor) -> ad.Tensor:
        return ad.dense(scores, self._wf_t, self._bf)

    def forward(self, x: ad.Tensor):
        s = self.concept_scores(x)
        return s, self.class_logits_from_scores(s)

    def objective_value(self, x, spec: AttackSpec, x_ref=None):
        """Direct numpy evaluation of alpha*P + beta*D (no autodiff)."""
        x0 = np.asarray(x_ref if x_ref is not None else x, dtype=np.float64)
        s0 = x0.reshape(-1) @ self.wg
        sets = relevance_sets(s0, spec.relevance_threshold)
        s = np.asarray(x, dtype=np.float64).reshape(-1) @ self.wg
        ksign = 1.0 if spec.literal_signs else -1.0
        if spec.goal == "erasure":
            d = ksign * spec.beta * s[list(spec.targets)].sum()
        elif spec.goal == "introduction":
            d = spec.beta * s[list(sets.nonrelevant)].sum()
        else:
            d = spec.beta * s[list(sets.nonrelevant)].sum()
            d += ksign * spec.gamma_conf * s[list(sets.relevant)].sum()
        logits = s @ self.wf + self.bf
        pred = int((s0 @ self.wf + self.bf).argmax())
        return float(d + spec.alpha * logits[pred])


def toy_instance(seed):
    """Seeded (model, x, spec) with generous prediction margins and no
    clamp interaction, so the grid corner optimum is reachable."""
    rng = np.random.default_rng(seed)
    wg = rng.uniform(-1.0, 1.0, size=(4, 2))
    # f bias gives class 0 a margin no in-box perturbation can overcome,
    # so the prediction constraint is never binding
    wf = rng.uniform(-0.05, 0.05, size=(2, 2))
    bf = np.array([10.0, 0.0])
    model = LinearToyCbm(wg, wf, bf)
    x = rng.uniform(0.35, 0.65, size=(1, 2, 2))  # 4 inputs as a 2x2 image
    budget = 0.2
    goal = ("confounding", "introduction", "erasure")[seed % 3]
    spec = AttackSpec(
        goal=goal,
        step_size=budget / 2,
        n_steps=8,
        budget=budget,
        alpha=1.0,
        beta=1.5,
        gamma_conf=0.7,
        relevance_threshold=0.0,
        flip_threshold=100.0,  # large: no per-target freezing in the toy
    )
    if goal == "erasure":
        s0 = x.reshape(-1) @ wg
        rel = relevance_sets(s0, 0.0).relevant
        if not rel:  # keep the instance well-posed
            wg[:, 0] = np.abs(wg[:, 0])
            model = LinearToyCbm(wg, wf, bf)
            rel = relevance_sets(x.reshape(-1) @ wg, 0.0).relevant
        spec.targets = rel
    return model, x, spec


def grid_best_objective(model: LinearToyCbm, x, spec: AttackSpec):
    """Best feasible objective over delta in {-b,-b/2,0,b/2,b}^4."""
    x = np.asarray(x, dtype=np.float64)
    b = spec.budget
    pred0 = int((x.reshape(-1) @ model.wg @ model.wf + model.bf).argmax())
    best = -np.inf
    for delta in itertools.product((-b, -b / 2, 0.0, b / 2, b), repeat=x.size):
        cand = x.reshape(-1) + np.array(delta)
        if cand.min() < 0.0 or cand.max() > 1.0:
            continue
        pred = int((cand @ model.wg @ model.wf + model.bf).argmax())
        if pred != pred0:
            continue
        val = model.objective_value(cand.reshape(x.shape), spec, x_ref=x)
        best = max(best, val)
    return best
