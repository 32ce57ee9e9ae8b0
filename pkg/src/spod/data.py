"""Datasets: binary file format, synthetic benchmark data, loaders.

The on-disk format is little-endian: magic ``SPDT0001``, then four
uint32 fields (N, input_dim, num_classes, flags; flag bit 0 marks a
labeled set), then row-major float64 inputs, then uint32 labels when
present. Identical content always serializes to identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    EmptyClassError,
    FormatError,
    ValidationError,
)
from .nn import as_tensor

DATASET_MAGIC = b"SPDT0001"

OOD_MODES = ("shifted_means", "uniform_box", "orthogonal_subspace")


@dataclass
class LabeledDataset:
    """Inputs with optional integer labels.

    ``labels`` is None for unlabeled (OOD) sets; ``num_classes`` always
    records the class count of the matching ID task.
    """

    inputs: np.ndarray
    labels: np.ndarray | None
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.inputs = as_tensor(self.inputs, "inputs")
        if self.inputs.ndim != 2:
            raise DimensionError("inputs must be a (N, input_dim) matrix")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint32)
            if self.labels.shape != (self.inputs.shape[0],):
                raise DimensionError("labels must be one per input row")
            if self.labels.size and int(self.labels.max()) >= self.num_classes:
                raise ValidationError("label out of range")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None


def save_dataset(ds: LabeledDataset, path) -> None:
    flags = 1 if ds.labeled else 0
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIII", ds.n, ds.input_dim, ds.num_classes, flags))
        fh.write(ds.inputs.astype("<f8").tobytes())
        if ds.labeled:
            fh.write(ds.labels.astype("<u4").tobytes())


def load_dataset(path, name: str | None = None) -> LabeledDataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic {magic!r}")
        raw = fh.read(16)
        if len(raw) != 16:
            raise FormatError("truncated dataset header")
        n, input_dim, num_classes, flags = struct.unpack("<IIII", raw)
        body = fh.read()
    need = n * input_dim * 8 + (n * 4 if flags & 1 else 0)
    if len(body) != need:
        raise FormatError("dataset payload has wrong length")
    inputs = np.frombuffer(body, dtype="<f8", count=n * input_dim).reshape(n, input_dim)
    labels = None
    if flags & 1:
        labels = np.frombuffer(body, dtype="<u4", offset=n * input_dim * 8)
    if name is None:
        name = str(path)
    return LabeledDataset(np.array(inputs), None if labels is None else np.array(labels),
                          num_classes, name)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian class blobs plus a matched OOD set.

    ID classes are balanced: ``samples_per_class`` points per class for
    both the train and test splits. ``ood_mode`` picks the OOD geometry:
    shifted_means (new blobs at 4x the mean scale), uniform_box (box of
    half-width 3x the mean scale), or orthogonal_subspace (draws in the
    orthogonal complement of the span of the ID class means).
    """

    num_classes: int = 5
    input_dim: int = 32
    samples_per_class: int = 100
    mean_scale: float = 3.0
    noise_sigma: float = 1.0
    ood_mode: str = "shifted_means"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.input_dim < 1 or self.samples_per_class < 1:
            raise ValidationError("input_dim and samples_per_class must be >= 1")
        if self.mean_scale <= 0 or self.noise_sigma < 0:
            raise ValidationError("mean_scale must be > 0 and noise_sigma >= 0")
        if self.ood_mode not in OOD_MODES:
            raise ValidationError(f"ood_mode must be one of {OOD_MODES}")
        if self.ood_mode == "orthogonal_subspace" and self.input_dim <= self.num_classes:
            raise ValidationError("orthogonal_subspace needs input_dim > num_classes")


@dataclass
class SyntheticData:
    id_train: LabeledDataset
    id_test: LabeledDataset
    ood: LabeledDataset
    class_means: np.ndarray


def _blob_split(rng, means, m, sigma, num_classes, name) -> LabeledDataset:
    C, d = means.shape
    inputs = np.empty((C * m, d))
    labels = np.repeat(np.arange(C, dtype=np.uint32), m)
    for c in range(C):
        inputs[c * m:(c + 1) * m] = means[c] + sigma * rng.standard_normal((m, d))
    return LabeledDataset(inputs, labels, num_classes, name)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Draw ID train/test blobs and one OOD set, deterministically in seed."""
    rng = np.random.default_rng(spec.seed)
    C, d, m = spec.num_classes, spec.input_dim, spec.samples_per_class
    means = rng.standard_normal((C, d)) * spec.mean_scale
    id_train = _blob_split(rng, means, m, spec.noise_sigma, C, "id_train")
    id_test = _blob_split(rng, means, m, spec.noise_sigma, C, "id_test")
    n_ood = C * m
    if spec.ood_mode == "shifted_means":
        ood_means = rng.standard_normal((C, d)) * (4.0 * spec.mean_scale)
        ood_inputs = np.empty((n_ood, d))
        for c in range(C):
            ood_inputs[c * m:(c + 1) * m] = (
                ood_means[c] + spec.noise_sigma * rng.standard_normal((m, d)))
    elif spec.ood_mode == "uniform_box":
        half = 3.0 * spec.mean_scale
        ood_inputs = rng.uniform(-half, half, size=(n_ood, d))
    else:
        # complement of the span of the ID class means
        r = np.linalg.matrix_rank(means.T)
        basis = np.linalg.svd(means.T, full_matrices=True)[0][:, r:]
        z = rng.standard_normal((n_ood, basis.shape[1])) * spec.mean_scale
        ood_inputs = z @ basis.T
    ood = LabeledDataset(ood_inputs, None, C, f"ood_{spec.ood_mode}")
    return SyntheticData(id_train, id_test, ood, means)


def per_class_loader(data: LabeledDataset, class_id: int, batch_size: int):
    """Yield input batches for one class, in original row order.

    The last batch may be short. Raises EmptyClassError when the class
    has no samples and ValidationError for unlabeled data or a bad id.
    """
    if not data.labeled:
        raise ValidationError("per-class loading needs a labeled dataset")
    if not 0 <= class_id < data.num_classes:
        raise ValidationError(f"class_id {class_id} out of range")
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    idx = np.flatnonzero(data.labels == class_id)
    if idx.size == 0:
        raise EmptyClassError(f"class {class_id} has no samples")
    for start in range(0, idx.size, batch_size):
        yield data.inputs[idx[start:start + batch_size]]


@dataclass(frozen=True)
class LabelNoiseSpec:
    fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValidationError("noise fraction must lie in [0, 1]")


def inject_label_noise(data: LabeledDataset, spec: LabelNoiseSpec) -> LabeledDataset:
    """Return a copy with exactly round(fraction * N) labels flipped.

    Flipped labels are drawn uniformly over the other classes, so no
    selected label keeps its original value. Deterministic in the noise
    seed; corruption is applied once, before any training.
    """
    if not data.labeled:
        raise ValidationError("cannot corrupt labels of an unlabeled dataset")
    if data.num_classes < 2 and spec.fraction > 0:
        raise ValidationError("label noise needs at least 2 classes")
    n_flip = int(np.floor(spec.fraction * data.n + 0.5))
    labels = data.labels.copy()
    if n_flip:
        rng = np.random.default_rng(spec.seed)
        picked = rng.choice(data.n, size=n_flip, replace=False)
        draw = rng.integers(0, data.num_classes - 1, size=n_flip)
        old = labels[picked].astype(np.int64)
        labels[picked] = (draw + (draw >= old)).astype(np.uint32)
    return LabeledDataset(data.inputs.copy(), labels, data.num_classes,
                          data.name + "+noise" if data.name else "noisy")
