"""Concept explanation diffing metrics and the evaluation sample filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class FilterResult:
    keep: bool
    reason: str = ""


def sample_filter(model, sample):
    """Skip samples the model gets wrong or explains poorly.

    Binary concepts: keep only if concept accuracy > 60%. Continuous:
    keep only if concept RMSE < 0.6.
    """
    x = sample.image[None, None, :, :]
    scores, logits = model.forward(ad.Tensor(x))
    if model.arch.task_kind == "classification":
        if int(logits.data[0].argmax()) != sample.label:
            return FilterResult(False, "wrong-prediction")
    s = scores.data[0]
    if model.spec.kind == "binary":
        pred = s >= model.spec.relevance_threshold
        acc = (pred == (sample.concepts >= 0.5)).mean()
        if acc <= 0.6:
            return FilterResult(False, "low-concept-accuracy")
    else:
        rmse = float(np.sqrt(((s - sample.concepts) ** 2).mean()))
        if rmse >= 0.6:
            return FilterResult(False, "high-concept-rmse")
    return FilterResult(True)


def presence_set(scores, threshold=0.5):
    scores = np.asarray(scores)
    return frozenset(int(j) for j in np.nonzero(scores >= threshold)[0])


def pct_flipped(c_orig, c_pert, kind="binary", flip_threshold=None,
                relevance_threshold=0.5):
    """Percentage of concepts whose presence flipped (binary) or whose value
    moved more than flip_threshold (continuous)."""
    c_orig = np.asarray(c_orig, dtype=np.float64)
    c_pert = np.asarray(c_pert, dtype=np.float64)
    if c_orig.shape != c_pert.shape:
        raise ValueError("concept vectors must have equal length")
    if kind == "binary":
        a = c_orig >= relevance_threshold
        b = c_pert >= relevance_threshold
        return 100.0 * int(np.abs(a.astype(int) - b.astype(int)).sum()) / a.size
    if flip_threshold is None:
        raise ValueError("continuous flips need a flip_threshold")
    return 100.0 * int((np.abs(c_orig - c_pert) > flip_threshold).sum()) / c_orig.size


def pct_introduced(orig_set, pert_set):
    """|pert \\ orig| / |orig| * 100; may exceed 100."""
    orig_set, pert_set = frozenset(orig_set), frozenset(pert_set)
    if not orig_set:
        raise ValueError("introduced%% undefined for an empty original set")
    return 100.0 * len(pert_set - orig_set) / len(orig_set)


def pct_retained(orig_set, pert_set):
    """|orig & pert| / |orig| * 100."""
    orig_set, pert_set = frozenset(orig_set), frozenset(pert_set)
    if not orig_set:
        raise ValueError("retained%% undefined for an empty original set")
    return 100.0 * len(orig_set & pert_set) / len(orig_set)


def jaccard(orig_set, pert_set):
    """Intersection over union; both sets empty means identical -> 1."""
    orig_set, pert_set = frozenset(orig_set), frozenset(pert_set)
    union = orig_set | pert_set
    if not union:
        return 1.0
    return len(orig_set & pert_set) / len(union)


def delta_stats(c_orig, c_pert):
    """(mean, min) absolute per-concept change, for continuous concepts."""
    c_orig = np.asarray(c_orig, dtype=np.float64)
    c_pert = np.asarray(c_pert, dtype=np.float64)
    if c_orig.shape != c_pert.shape:
        raise ValueError("concept vectors must have equal length")
    d = np.abs(c_orig - c_pert)
    return float(d.mean()), float(d.min())


def aggregate(values):
    """mean +/- population standard deviation across seeds."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
