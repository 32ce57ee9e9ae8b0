"""Empirical kernel of per-sample gradients and its block decomposition.

For a batch x_1..x_N the kernel matrix has entries
K_ij = <grad(x_i), grad(x_j)> over a parameter subset. Rows are ordered
by class, then original index, so a class-balanced batch exposes the
block pattern K = kron(Gram(class means), ones(m, m)) + residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlockStructureUndefinedError, DimensionError, ValidationError
from .nn import (
    Network,
    ParamSubset,
    per_sample_gradient_batch,
)

POWER_ITERS = 200
POWER_TOL = 1e-10


def spectral_norm(A: np.ndarray, iters: int = POWER_ITERS, tol: float = POWER_TOL) -> float:
    """Largest singular value by power iteration on A^T A.

    Deterministic start vector; converges for symmetric indefinite
    matrices too (the Gram trick squares the spectrum).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError("spectral_norm expects a matrix")
    if A.size == 0:
        return 0.0
    n = A.shape[1]
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        cur = float(v @ (A.T @ (A @ v)))
        if abs(cur - last) <= tol * max(1.0, abs(cur)):
            last = cur
            break
        last = cur
    return float(np.sqrt(max(last, 0.0)))


@dataclass
class NtkMatrix:
    """Gradient inner-product kernel over a batch, class-sorted."""

    values: np.ndarray
    labels: np.ndarray | None
    order: np.ndarray
    head: object
    per_head_sum: bool

    @property
    def n(self) -> int:
        return self.values.shape[0]


def empirical_ntk(net: Network, batch, head="max", subset: ParamSubset | None = None,
                  per_head_sum: bool = False) -> NtkMatrix:
    """Assemble the kernel for a batch (a LabeledDataset or input matrix).

    ``per_head_sum=True`` sums the C single-head kernels instead of
    using one aggregated head (the construction behind the class-block
    heatmaps); ``head`` is ignored in that mode.
    """
    if hasattr(batch, "inputs"):
        X = batch.inputs
        labels = batch.labels
    else:
        X = np.asarray(batch, dtype=np.float64)
        labels = None
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionError("batch must be a nonempty (N, input_dim) matrix")
    if labels is not None:
        order = np.argsort(labels, kind="stable")
        labels = np.asarray(labels)[order]
    else:
        order = np.arange(X.shape[0])
    X = X[order]
    if per_head_sum:
        values = np.zeros((X.shape[0], X.shape[0]))
        for c in range(net.num_classes):
            G = per_sample_gradient_batch(net, X, head=c, subset=subset)
            values += G @ G.T
    else:
        G = per_sample_gradient_batch(net, X, head=head, subset=subset)
        values = G @ G.T
    return NtkMatrix(values=values, labels=labels, order=order, head=head,
                     per_head_sum=per_head_sum)


@dataclass
class BlockStructureReport:
    """Decomposition of a balanced kernel into class blocks plus residual.

    alignment_ratio excludes the diagonal from the within-class mean;
    alignment_ratio_with_diagonal keeps it. The heatmap is the kernel
    clipped below at zero and divided by its maximum entry.
    """

    gram_means: np.ndarray
    samples_per_class: int
    leading_norm: float
    residual_norm: float
    alignment_ratio: float
    alignment_ratio_with_diagonal: float
    heatmap: np.ndarray


def _alignment_ratios(values: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    same = labels[:, None] == labels[None, :]
    diag = np.eye(labels.size, dtype=bool)
    within_no_diag = values[same & ~diag]
    within_diag = values[same]
    between = values[~same]
    if between.size == 0 or within_no_diag.size == 0:
        raise ValidationError("alignment ratio needs at least 2 classes with 2 samples")
    denom = float(np.mean(between))
    if denom == 0.0:
        return float("inf"), float("inf")
    return (float(np.mean(within_no_diag)) / denom,
            float(np.mean(within_diag)) / denom)


def block_structure(ntk: NtkMatrix, class_means: np.ndarray,
                    samples_per_class: int) -> BlockStructureReport:
    """Split a balanced kernel into kron(Gram(means), ones(m, m)) + residual.

    ``class_means`` holds one gradient class mean per column. Raises
    BlockStructureUndefinedError unless every class contributes exactly
    ``samples_per_class`` rows.
    """
    if ntk.labels is None:
        raise BlockStructureUndefinedError("block structure needs a labeled batch")
    m = int(samples_per_class)
    if m < 1:
        raise ValidationError("samples_per_class must be >= 1")
    class_means = np.asarray(class_means, dtype=np.float64)
    if class_means.ndim != 2:
        raise DimensionError("class_means must be a (dim, C) matrix")
    C = class_means.shape[1]
    present, counts = np.unique(ntk.labels, return_counts=True)
    if present.size != C or not np.all(counts == m):
        raise BlockStructureUndefinedError(
            f"expected {C} classes with {m} samples each, got counts {counts.tolist()}")
    if ntk.n != C * m:
        raise DimensionError("kernel size disagrees with C * samples_per_class")
    gram = class_means.T @ class_means
    leading = np.kron(gram, np.ones((m, m)))
    residual = ntk.values - leading
    ratio, ratio_diag = _alignment_ratios(ntk.values, ntk.labels)
    vmax = float(ntk.values.max())
    if vmax > 0.0:
        heatmap = np.clip(ntk.values / vmax, 0.0, 1.0)
    else:
        heatmap = np.zeros_like(ntk.values)
    return BlockStructureReport(
        gram_means=gram,
        samples_per_class=m,
        leading_norm=spectral_norm(leading),
        residual_norm=spectral_norm(residual),
        alignment_ratio=ratio,
        alignment_ratio_with_diagonal=ratio_diag,
        heatmap=heatmap,
    )
