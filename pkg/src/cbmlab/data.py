"""Datasets: MNIST IDX ingestion, ConceptMNIST annotation, blob fallback corpus."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Per-digit (curved, straight) flags, read off standard typeset glyphs.
# Overridable via load_concept_table.
DEFAULT_CURVED_STRAIGHT = {
    0: (1, 0),
    1: (0, 1),
    2: (1, 1),
    3: (1, 0),
    4: (0, 1),
    5: (1, 1),
    6: (1, 0),
    7: (0, 1),
    8: (1, 0),
    9: (1, 1),
}

CONCEPT_NAMES = [f"isNum_{d}" for d in range(10)] + [
    "CurvedLine:present",
    "StraightLine:present",
]


class IdxError(ValueError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class ConceptSpec:
    names: tuple
    kind: str = "binary"  # binary | continuous
    relevance_threshold: float = 0.5

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("concept names must be unique")
        if self.kind not in ("binary", "continuous"):
            raise ValueError(f"unknown concept kind {self.kind!r}")
        if self.kind == "binary" and not 0 < self.relevance_threshold < 1:
            raise ValueError("binary relevance threshold must be in (0,1)")

    def __len__(self):
        return len(self.names)


CMNIST_SPEC = ConceptSpec(names=tuple(CONCEPT_NAMES))


@dataclass
class ConceptSample:
    image: np.ndarray  # H x W in [0,1]
    label: int
    concepts: np.ndarray  # length T


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    spec: ConceptSpec = field(default=CMNIST_SPEC)


def _read_be_u32(buf, off, path):
    if off + 4 > len(buf):
        raise IdxTruncatedError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, off)[0]


def parse_idx(images_path, labels_path):
    """Decode an MNIST IDX image/label file pair into [0,1] float images."""
    with open(images_path, "rb") as f:
        ibuf = f.read()
    with open(labels_path, "rb") as f:
        lbuf = f.read()

    magic = _read_be_u32(ibuf, 0, images_path)
    if magic != IMAGE_MAGIC:
        raise IdxMagicError(f"{images_path}: bad image magic 0x{magic:08x}")
    n = _read_be_u32(ibuf, 4, images_path)
    h = _read_be_u32(ibuf, 8, images_path)
    w = _read_be_u32(ibuf, 12, images_path)
    if len(ibuf) < 16 + n * h * w:
        raise IdxTruncatedError(f"{images_path}: truncated pixel payload")
    images = np.frombuffer(ibuf, dtype=np.uint8, count=n * h * w, offset=16)
    images = images.reshape(n, h, w).astype(np.float64) / 255.0

    magic = _read_be_u32(lbuf, 0, labels_path)
    if magic != LABEL_MAGIC:
        raise IdxMagicError(f"{labels_path}: bad label magic 0x{magic:08x}")
    m = _read_be_u32(lbuf, 4, labels_path)
    if len(lbuf) < 8 + m:
        raise IdxTruncatedError(f"{labels_path}: truncated label payload")
    if m != n:
        raise IdxCountMismatchError(f"image count {n} != label count {m}")
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=m, offset=8)

    return [(images[i], int(labels[i])) for i in range(n)]


def load_concept_table(path):
    """Read a curved/straight override file: one `digit curved straight` per line."""
    table = dict(DEFAULT_CURVED_STRAIGHT)
    with open(path) as f:
        for line in f:
            line = line.split("#")[0].strip()
            if not line:
                continue
            d, cur, st = line.split()
            table[int(d)] = (int(cur), int(st))
    return table


def annotate_concept_mnist(label, table=None):
    """12-entry concept vector: one-hot digit ++ [curved, straight]."""
    if not 0 <= label <= 9:
        raise ValueError(f"digit label out of range: {label}")
    table = DEFAULT_CURVED_STRAIGHT if table is None else table
    vec = np.zeros(12)
    vec[label] = 1.0
    vec[10], vec[11] = table[label]
    return vec


def load_concept_mnist(images_path, labels_path, table=None):
    return [
        ConceptSample(img, lab, annotate_concept_mnist(lab, table))
        for img, lab in parse_idx(images_path, labels_path)
    ]


# Blob centers for the 10 classes on the 12x12 canvas.
_BLOB_CENTERS = [
    (2, 2), (2, 6), (2, 9), (5, 3), (5, 8),
    (8, 2), (8, 6), (8, 9), (10, 4), (10, 8),
]


def synth_blob_dataset(n, seed, table=None, noise=0.18, amp_range=(0.45, 0.95),
                       jitter=1.2, width_range=(1.0, 1.8), distractor=0.3):
    """Seeded fallback corpus: 12x12 Gaussian blobs at class-keyed positions.

    Class labels cycle 0..9 so every class appears; concepts use the
    ConceptMNIST 12-concept schema keyed on class. Position jitter, a random
    low-amplitude distractor blob, and pixel noise keep the task non-trivial
    so small perturbations can plausibly move concept scores.
    """
    if n < 30:
        raise ValueError("blob corpus needs n >= 30")
    rng = np.random.default_rng(seed)
    samples = []
    yy, xx = np.mgrid[0:12, 0:12]
    for i in range(n):
        label = i % 10
        cy, cx = _BLOB_CENTERS[label]
        cy = cy + rng.uniform(-jitter, jitter)
        cx = cx + rng.uniform(-jitter, jitter)
        amp = rng.uniform(*amp_range)
        width = rng.uniform(*width_range)
        img = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        if distractor > 0:
            d = int(rng.integers(0, 10))
            dy, dx = _BLOB_CENTERS[d]
            dy = dy + rng.uniform(-jitter, jitter)
            dx = dx + rng.uniform(-jitter, jitter)
            damp = rng.uniform(0.0, distractor)
            dw = rng.uniform(*width_range)
            img += damp * np.exp(
                -((yy - dy) ** 2 + (xx - dx) ** 2) / (2 * dw**2)
            )
        img += rng.normal(0.0, noise, size=(12, 12))
        img = np.clip(img, 0.0, 1.0)
        samples.append(
            ConceptSample(img, label, annotate_concept_mnist(label, table))
        )
    order = rng.permutation(n)
    samples = [samples[i] for i in order]
    return split_dataset(samples, seed=seed)


def split_dataset(samples, seed, fractions=(0.8, 0.1, 0.1), spec=CMNIST_SPEC):
    """Seeded disjoint 80/10/10 split by default."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_train = int(round(fractions[0] * len(samples)))
    n_val = int(round(fractions[1] * len(samples)))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return DatasetSplit(train=train, val=val, test=test, seed=seed, spec=spec)


def stack(samples):
    """Samples -> (X[B,1,H,W], C[B,T], Y[B]) arrays."""
    x = np.stack([s.image for s in samples])[:, None, :, :]
    c = np.stack([s.concepts for s in samples])
    y = np.array([s.label for s in samples], dtype=np.intp)
    return x, c, y


def batches(samples, batch_size, seed, epoch=0):
    """Seeded per-epoch shuffle; the last short batch is included."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng((seed, epoch))
    order = rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        idx = order[start:start + batch_size]
        yield stack([samples[i] for i in idx])
