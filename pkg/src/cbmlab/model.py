"""Concept bottleneck model: concept net g, predictor f, three training paradigms."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .data import ConceptSpec, CMNIST_SPEC, batches, stack


@dataclass
class TrainConfig:
    paradigm: str = "joint"  # sequential | joint | hybrid
    epochs: int = 20
    batch_size: int = 64
    task_weight: float = 1.0  # gamma in the two-term objective
    concept_weight: float = 0.5  # lambda
    lr: float = 0.01  # omega
    lr_finetune: float = 0.005  # omega', hybrid second phase
    momentum: float = 0.9
    seed: int = 0

    def validate(self):
        if self.paradigm not in ("sequential", "joint", "hybrid"):
            raise ValueError(f"unknown paradigm {self.paradigm!r}")
        if self.epochs < 2:
            raise ValueError("epochs must be >= 2")
        if self.lr <= 0 or self.lr_finetune <= 0:
            raise ValueError("learning rates must be positive")
        if self.concept_weight < 0:
            raise ValueError("concept weight must be >= 0")


@dataclass
class Architecture:
    """Shape of g (conv stack + fc to concepts) and f (dense on concepts)."""

    input_hw: tuple = (12, 12)
    conv_channels: int = 16
    n_concepts: int = 12
    n_classes: int = 10
    concept_kind: str = "binary"  # binary | continuous
    task_kind: str = "classification"  # classification | regression

    @property
    def flat_dim(self):
        h, w = self.input_hw
        return self.conv_channels * (h // 2) * (w // 2)


CMNIST_ARCH = Architecture(input_hw=(28, 28), conv_channels=32)
BLOB_ARCH = Architecture(input_hw=(12, 12), conv_channels=16)


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class CbmModel:
    """f(g(x)): conv32-pool-conv32-fc concept net, single dense predictor."""

    def __init__(self, arch: Architecture, spec: ConceptSpec = CMNIST_SPEC,
                 seed=0, f_seed=None):
        if len(spec) != arch.n_concepts:
            raise ValueError("concept spec length must match architecture")
        self.arch = arch
        self.spec = spec
        self.seed = seed
        self.f_seed = seed if f_seed is None else f_seed
        rng = np.random.default_rng(seed)
        c = arch.conv_channels
        self.conv1_w = _uniform_init(rng, (c, 1, 3, 3), 9)
        self.conv1_b = _uniform_init(rng, (c,), 9)
        self.conv2_w = _uniform_init(rng, (c, c, 3, 3), 9 * c)
        self.conv2_b = _uniform_init(rng, (c,), 9 * c)
        self.gfc_w = _uniform_init(rng, (arch.flat_dim, arch.n_concepts), arch.flat_dim)
        self.gfc_b = _uniform_init(rng, (arch.n_concepts,), arch.flat_dim)
        rng_f = np.random.default_rng((self.f_seed, 0xF))
        out_dim = arch.n_classes if arch.task_kind == "classification" else 1
        self.f_w = _uniform_init(rng_f, (arch.n_concepts, out_dim), arch.n_concepts)
        self.f_b = _uniform_init(rng_f, (out_dim,), arch.n_concepts)

    def g_params(self):
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
                self.gfc_w, self.gfc_b]

    def f_params(self):
        return [self.f_w, self.f_b]

    def params(self):
        return self.g_params() + self.f_params()

    def concept_logits(self, x: ad.Tensor) -> ad.Tensor:
        h = ad.relu(ad.conv2d(x, self.conv1_w, self.conv1_b))
        h = ad.maxpool2(h)
        h = ad.relu(ad.conv2d(h, self.conv2_w, self.conv2_b))
        h = ad.reshape(h, (x.shape[0], self.arch.flat_dim))
        return ad.dense(h, self.gfc_w, self.gfc_b)

    def concept_scores(self, x: ad.Tensor) -> ad.Tensor:
        """Binary kind: sigmoid of g logits. Continuous: raw g outputs."""
        logits = self.concept_logits(x)
        if self.spec.kind == "binary":
            return ad.sigmoid(logits)
        return logits

    def class_logits_from_scores(self, scores: ad.Tensor) -> ad.Tensor:
        return ad.dense(scores, self.f_w, self.f_b)

    def forward(self, x: ad.Tensor):
        """Returns (concept scores, class logits)."""
        scores = self.concept_scores(x)
        return scores, self.class_logits_from_scores(scores)

    def predict(self, x_array):
        """Class indices (argmax, ties to lowest index) or regression values."""
        _, logits = self.forward(ad.Tensor(x_array))
        if self.arch.task_kind == "classification":
            return logits.data.argmax(axis=1)
        return logits.data[:, 0]

    def concept_loss(self, x: ad.Tensor, c_true) -> ad.Tensor:
        logits = self.concept_logits(x)
        if self.spec.kind == "binary":
            # sum over concepts, mean over batch
            return ad.scale(ad.bce_loss(logits, c_true), self.arch.n_concepts)
        return ad.scale(ad.mse_loss(logits, c_true), self.arch.n_concepts)

    def task_loss_from_scores(self, scores: ad.Tensor, y) -> ad.Tensor:
        logits = self.class_logits_from_scores(scores)
        if self.arch.task_kind == "classification":
            return ad.softmax_ce_loss(logits, y)
        return ad.mse_loss(logits, np.asarray(y, dtype=np.float64).reshape(-1, 1))


def batch_loss(model, x, c, y, task_weight, concept_weight):
    """gamma * task + lambda * concept on one batch; returns (loss, parts)."""
    xt = ad.Tensor(x)
    parts = {}
    terms = []
    scores = model.concept_scores(xt)
    task = model.task_loss_from_scores(scores, y)
    concept = model.concept_loss(xt, c)
    parts["task"] = float(task.data)
    parts["concept"] = float(concept.data)
    if task_weight != 0.0:
        terms.append(ad.scale(task, task_weight))
    if concept_weight != 0.0:
        terms.append(ad.scale(concept, concept_weight))
    if not terms:
        raise ValueError("objective has no active terms")
    loss = terms[0]
    for t in terms[1:]:
        loss = ad.add(loss, t)
    return loss, parts


def _run_epochs(model, samples, cfg, n_epochs, params, task_weight,
                concept_weight, lr, history, epoch_offset=0):
    opt = ad.SgdMomentum(params, lr=lr, momentum=cfg.momentum)
    for epoch in range(n_epochs):
        task_sum = concept_sum = 0.0
        nb = 0
        for x, c, y in batches(samples, cfg.batch_size, cfg.seed,
                               epoch=epoch_offset + epoch):
            loss, parts = batch_loss(model, x, c, y, task_weight, concept_weight)
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch_offset + epoch}: {parts}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            task_sum += parts["task"]
            concept_sum += parts["concept"]
            nb += 1
        history.append({"task": task_sum / nb, "concept": concept_sum / nb})
    return epoch_offset + n_epochs


def train(model: CbmModel, split, cfg: TrainConfig):
    """Train in place per paradigm; returns per-epoch loss history."""
    cfg.validate()
    history = []
    n = cfg.epochs
    if cfg.paradigm == "sequential":
        # concept stage (g only), then freeze g and fit f on the task loss
        _run_epochs(model, split.train, cfg, n, model.g_params(),
                    task_weight=0.0, concept_weight=1.0, lr=cfg.lr,
                    history=history)
        _run_epochs(model, split.train, cfg, n, model.f_params(),
                    task_weight=1.0, concept_weight=0.0, lr=cfg.lr_finetune,
                    history=history, epoch_offset=n)
    elif cfg.paradigm == "joint":
        _run_epochs(model, split.train, cfg, n, model.params(),
                    task_weight=cfg.task_weight, concept_weight=cfg.concept_weight,
                    lr=cfg.lr, history=history)
    else:  # hybrid: concept-only first half, full model at the lower lr after
        first = (n + 1) // 2
        _run_epochs(model, split.train, cfg, first, model.g_params(),
                    task_weight=0.0, concept_weight=1.0, lr=cfg.lr,
                    history=history)
        _run_epochs(model, split.train, cfg, n - first, model.params(),
                    task_weight=1.0, concept_weight=cfg.concept_weight,
                    lr=cfg.lr_finetune, history=history, epoch_offset=first)
    return history


def evaluate(model: CbmModel, samples):
    """(task_error, concept_error): 0-1 rates for classification/binary, RMSE else."""
    if not samples:
        raise ValueError("cannot evaluate on an empty split")
    x, c, y = stack(samples)
    scores, logits = model.forward(ad.Tensor(x))
    if model.arch.task_kind == "classification":
        task_err = float((logits.data.argmax(axis=1) != y).mean())
    else:
        task_err = float(np.sqrt(((logits.data[:, 0] - y) ** 2).mean()))
    if model.spec.kind == "binary":
        pred = scores.data >= model.spec.relevance_threshold
        concept_err = float((pred != (c >= 0.5)).mean())
    else:
        concept_err = float(np.sqrt(((scores.data - c) ** 2).mean()))
    return task_err, concept_err


CHECKPOINT_MAGIC = b"CBMCKPT1"


def save_checkpoint(path, model: CbmModel, cfg: TrainConfig = None, extra=None):
    """Versioned binary container; little-endian doubles; bit-exact round-trip."""
    params = model.params()
    header = {
        "arch": asdict(model.arch),
        "spec": {
            "names": list(model.spec.names),
            "kind": model.spec.kind,
            "relevance_threshold": model.spec.relevance_threshold,
        },
        "train_config": asdict(cfg) if cfg is not None else None,
        "seed": model.seed,
        "f_seed": model.f_seed,
        "shapes": [list(p.shape) for p in params],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, header dict)."""
    with open(path, "rb") as f:
        if f.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        arch = Architecture(**{**header["arch"],
                               "input_hw": tuple(header["arch"]["input_hw"])})
        spec = ConceptSpec(
            names=tuple(header["spec"]["names"]),
            kind=header["spec"]["kind"],
            relevance_threshold=header["spec"]["relevance_threshold"],
        )
        model = CbmModel(arch, spec, seed=header["seed"],
                         f_seed=header.get("f_seed"))
        for p, shape in zip(model.params(), header["shapes"]):
            n = int(np.prod(shape))
            raw = f.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated parameter payload")
            p.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return model, header
