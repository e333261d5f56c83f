"""Concept attacks: sign-gradient ascent on L = alpha*P + beta*D under an
L-inf budget, with pixel clamping and prediction preservation.

Three goals: erasure (drive targeted relevant concept scores below the
threshold), introduction (push non-relevant scores above it), confounding
(both at once).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad

GOALS = ("erasure", "introduction", "confounding")


@dataclass(frozen=True)
class RelevanceSets:
    relevant: tuple
    nonrelevant: tuple


@dataclass
class AttackSpec:
    goal: str = "erasure"
    targets: tuple = None  # erasure target indices; None = all relevant
    step_size: float = 1e-3
    n_steps: int = 200
    budget: float = 0.12  # L-inf, [0,1] pixel units
    alpha: float = 1.0  # prediction-keeping weight
    beta: float = 1.0  # concept-disruption weight
    gamma_conf: float = 5.0  # confounding erasure weight
    relevance_threshold: float = 0.5
    flip_threshold: float = 2.0  # continuous kind only
    # replication flags: keep the literal published-pseudocode signs,
    # which ascend rather than descend the scores meant to be erased
    literal_signs: bool = False

    def validate(self):
        if self.goal not in GOALS:
            raise ValueError(f"unknown attack goal {self.goal!r}")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if min(self.alpha, self.beta, self.gamma_conf) < 0:
            raise ValueError("weights must be >= 0")


@dataclass
class AttackOutcome:
    x_perturbed: np.ndarray
    steps: int
    flipped: dict  # target index -> bool (erasure); {} otherwise
    scores_before: np.ndarray
    scores_after: np.ndarray
    pred_before: int
    pred_after: int
    linf: float
    trace: list = field(default_factory=list)


def relevance_sets(scores, threshold):
    """Partition concept indices; score exactly at threshold counts relevant."""
    scores = np.asarray(scores)
    rel = tuple(int(j) for j in np.nonzero(scores >= threshold)[0])
    non = tuple(int(j) for j in np.nonzero(scores < threshold)[0])
    return RelevanceSets(relevant=rel, nonrelevant=non)

def attack_objective(model, xt, spec: AttackSpec, sets: RelevanceSets,
                     y_pred, active_targets=None):
    """Scalar objective L = alpha*P + beta*D on a single-sample tensor xt."""
    scores = model.concept_scores(xt)
    ksign = 1.0 if spec.literal_signs else -1.0  # erasure direction
    if spec.goal == "erasure":
        targets = spec.targets if active_targets is None else active_targets
        if not targets:
            raise ValueError("erasure attack has no target concepts")
        terms = [ad.gather_sum(scores, targets, sign=ksign * spec.beta)]
    elif spec.goal == "introduction":
        terms = []
        if sets.nonrelevant:
            terms.append(ad.gather_sum(scores, sets.nonrelevant, sign=spec.beta))
    else:  # confounding
        terms = []
        if sets.nonrelevant and spec.beta != 0.0:
            terms.append(ad.gather_sum(scores, sets.nonrelevant, sign=spec.beta))
        if sets.relevant and spec.gamma_conf != 0.0:
            terms.append(
                ad.gather_sum(scores, sets.relevant, sign=ksign * spec.gamma_conf)
            )
    if spec.alpha != 0.0:
        logits = model.class_logits_from_scores(scores)
        if model.arch.task_kind == "classification":
            # confidence-preserving term: ascend the predicted class logit
            terms.append(ad.gather_sum(logits, [y_pred], sign=spec.alpha))
        else:
            pred = ad.gather_sum(logits, [0], sign=1.0)
            diff = ad.add(pred, ad.Tensor(-float(y_pred)))
            sgn = 1.0 if float(diff.data) < 0 else -1.0  # -alpha*|f - y_pred|
            terms.append(ad.scale(diff, sgn * spec.alpha))
    if not terms:
        return ad.Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def _predict_one(model, x):
    scores, logits = model.forward(ad.Tensor(x[None]))
    if model.arch.task_kind == "classification":
        return int(logits.data[0].argmax()), scores.data[0]
    return float(logits.data[0, 0]), scores.data[0]


def _score_one(model, x):
    return model.concept_scores(ad.Tensor(x[None])).data[0]


def _is_flipped(spec, kind, before, after):
    if kind == "binary":
        return after < spec.relevance_threshold
    return abs(after - before) > spec.flip_threshold


def run_attack(model, x, spec: AttackSpec, record_trace=False):
    """Sign-gradient ascent per the attack loop; returns a feasible outcome.

    Steps are reverted (and the attack stopped) when they would exceed the
    budget or change the prediction. Erasure freezes each target's
    contribution once it flips so the rest keep optimizing.
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    pred0, scores0 = _predict_one(model, x)
    sets = relevance_sets(scores0, spec.relevance_threshold)
    if spec.goal == "erasure":
        targets = tuple(spec.targets) if spec.targets is not None else sets.relevant
        if not targets:
            raise ValueError("erasure attack has no target concepts")
        if not set(targets) <= set(sets.relevant):
            raise ValueError("erasure targets must be initially relevant")
        spec = replace(spec, targets=targets)
        flipped = {t: False for t in targets}
    else:
        flipped = {}

    x_cur = x.copy()
    steps = 0
    trace = []
    for _ in range(spec.n_steps):
        active = None
        if spec.goal == "erasure":
            active = tuple(t for t in flipped if not flipped[t])
            if not active:
                break
        xt = ad.Tensor(x_cur[None], requires_grad=True)
        obj = attack_objective(model, xt, spec, sets, pred0, active_targets=active)
        if obj._parents:
            obj.backward()
            grad = xt.grad[0] if xt.grad is not None else np.zeros_like(x_cur)
        else:
            grad = np.zeros_like(x_cur)
        if not np.any(grad):
            break  # no gradient signal: failed attack, not an error
        x_next = np.clip(x_cur + spec.step_size * np.sign(grad), 0.0, 1.0)
        if np.max(np.abs(x_next - x)) > spec.budget + 1e-12:
            break  # revert: budget would be exceeded
        pred_next, scores_next = _predict_one(model, x_next)
        if pred_changed(model, pred0, pred_next):
            break  # revert: prediction would change
        x_cur = x_next
        steps += 1
        for t in flipped:
            if not flipped[t] and _is_flipped(spec, model.spec.kind,
                                              scores0[t], scores_next[t]):
                flipped[t] = True
        if record_trace:
            trace.append({
                "step": steps,
                "objective": float(obj.data),
                "linf": float(np.max(np.abs(x_cur - x))),
                "prediction": pred_next,
            })

    pred1, scores1 = _predict_one(model, x_cur)
    return AttackOutcome(
        x_perturbed=x_cur,
        steps=steps,
        flipped=flipped,
        scores_before=scores0,
        scores_after=scores1,
        pred_before=pred0,
        pred_after=pred1,
        linf=float(np.max(np.abs(x_cur - x))),
        trace=trace,
    )


def pred_changed(model, before, after):
    if model.arch.task_kind == "classification":
        return after != before
    return False  # regression has no discrete prediction constraint


def standard_adv_baseline(model, x, spec: AttackSpec, record_trace=False):
    """Same machinery with beta = gamma_conf = 0 (prediction term only)."""
    base = replace(spec, beta=0.0, gamma_conf=0.0)
    if base.goal == "erasure" and base.targets is None:
        _, scores0 = _predict_one(model, np.asarray(x, dtype=np.float64))
        sets = relevance_sets(scores0, base.relevance_threshold)
        base = replace(base, targets=sets.relevant)
    return run_attack(model, x, base, record_trace=record_trace)


def export_trace(outcome: AttackOutcome, path):
    """Line-delimited step records for plotting."""
    import json

    with open(path, "w") as f:
        for rec in outcome.trace:
            f.write(json.dumps(rec) + "\n")
