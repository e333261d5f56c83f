"""cbmlab: a desk-scale laboratory for concept-bottleneck-model robustness.

Train CBMs (sequential / joint / hybrid), attack their concept explanations
with erasure, introduction, and confounding perturbations under an L-inf
budget while preserving the class prediction, and harden them with
adversarial-augmentation training (RCL).
"""

from .attack import AttackOutcome, AttackSpec, relevance_sets, run_attack, \
    standard_adv_baseline
from .data import ConceptSample, ConceptSpec, DatasetSplit, \
    annotate_concept_mnist, parse_idx, synth_blob_dataset
from .defense import RclConfig, adversarial_augment, rcl_train
from .model import Architecture, CbmModel, TrainConfig, evaluate, \
    load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AttackOutcome", "AttackSpec", "Architecture", "CbmModel",
    "ConceptSample", "ConceptSpec", "DatasetSplit", "RclConfig",
    "TrainConfig", "adversarial_augment", "annotate_concept_mnist",
    "evaluate", "load_checkpoint", "parse_idx", "relevance_sets",
    "rcl_train", "run_attack", "save_checkpoint", "standard_adv_baseline",
    "synth_blob_dataset", "train",
]
