"""Baseline OOD scorers sharing the nn core.

Every score is oriented so that higher means more in-distribution.
Stateless scorers act on logits; fitted detectors are built once from
ID data (features, labels, or the network itself) and are immutable
afterwards. Hyperparameter defaults follow the common reference
settings for each method.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DimensionError, EmptyClassError, ValidationError
from .nn import Network, forward_batch, softmax


def _check_logits(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise DimensionError("logits must be a (N, C) matrix")
    return logits


def _check_features(features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise DimensionError("features must be a nonempty (N, d) matrix")
    return features


def max_logit_score(logits) -> np.ndarray:
    return _check_logits(logits).max(axis=1)


def msp_score(logits) -> np.ndarray:
    """Maximum softmax probability."""
    return softmax(_check_logits(logits)).max(axis=1)


def odin_score(logits, temperature: float = 1000.0) -> np.ndarray:
    """Temperature-scaled maximum softmax (no input perturbation)."""
    if temperature <= 0.0:
        raise ValidationError("temperature must be > 0")
    return softmax(_check_logits(logits) / temperature).max(axis=1)


def energy_score(logits, temperature: float = 1.0) -> np.ndarray:
    """T * logsumexp(logits / T); adding c to all logits adds c."""
    if temperature <= 0.0:
        raise ValidationError("temperature must be > 0")
    z = _check_logits(logits) / temperature
    m = z.max(axis=1)
    return temperature * (m + np.log(np.exp(z - m[:, None]).sum(axis=1)))


def _magnitude_mask_matrix(W: np.ndarray, p: float) -> np.ndarray:
    """Zero the fraction p of smallest-magnitude entries of one matrix."""
    if not 0.0 <= p < 1.0:
        raise ValidationError("sparsification fraction must lie in [0, 1)")
    mask = np.ones(W.size)
    n_zero = int(round(p * W.size))
    if n_zero:
        order = np.argsort(np.abs(W.ravel()), kind="stable")
        mask[order[:n_zero]] = 0.0
    return mask.reshape(W.shape)


def _last_layer(net: Network) -> tuple[np.ndarray, np.ndarray]:
    W, b = net.group_params(net.groups[-1])
    return W.copy(), b.copy()


class DiceDetector:
    """Sparsified last layer (smallest-magnitude weights dropped) + energy."""

    name = "dice"

    def __init__(self, net: Network, p: float = 0.7):
        W, b = _last_layer(net)
        self.mask = _magnitude_mask_matrix(W, p)
        self.W = W * self.mask
        self.b = b
        self.p = p

    def score_batch(self, net: Network, X) -> np.ndarray:
        _, penult = forward_batch(net, X)
        if penult.shape[1] != self.W.shape[1]:
            raise DimensionError("feature width does not match the fitted layer")
        return energy_score(penult @ self.W.T + self.b)


class MahalanobisDetector:
    """Class-conditional Gaussians with a shared (ridged) covariance."""

    name = "mahalanobis"

    def __init__(self, features, labels, num_classes: int, ridge_scale: float = 1e-6):
        features = _check_features(features)
        labels = np.asarray(labels)
        if labels.shape != (features.shape[0],):
            raise DimensionError("labels must be one per feature row")
        if num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        d = features.shape[1]
        self.means = np.empty((num_classes, d))
        cov = np.zeros((d, d))
        for c in range(num_classes):
            rows = features[labels == c]
            if rows.shape[0] == 0:
                raise EmptyClassError(f"class {c} has no feature rows")
            self.means[c] = rows.mean(axis=0)
            centered = rows - self.means[c]
            cov += centered.T @ centered
        cov /= features.shape[0]
        ridge = ridge_scale * np.trace(cov) / d
        if ridge <= 0.0:
            ridge = ridge_scale
        self.precision = np.linalg.inv(cov + ridge * np.eye(d))

    def score_features(self, features) -> np.ndarray:
        features = _check_features(features)
        if features.shape[1] != self.means.shape[1]:
            raise DimensionError("feature width does not match the fitted model")
        d2 = np.empty((features.shape[0], self.means.shape[0]))
        for c in range(self.means.shape[0]):
            diff = features - self.means[c]
            d2[:, c] = np.einsum("nd,dk,nk->n", diff, self.precision, diff)
        return -d2.min(axis=1)

    def score_batch(self, net: Network, X) -> np.ndarray:
        _, penult = forward_batch(net, X)
        return self.score_features(penult)


def _normalize_rows(Z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return Z / norms


class KnnDetector:
    """Negative distance to the k-th nearest normalized ID feature."""

    name = "knn"

    def __init__(self, features, k: int = 10):
        features = _check_features(features)
        if not 1 <= k <= features.shape[0]:
            raise ValidationError(f"k must lie in [1, {features.shape[0]}]")
        self.bank = _normalize_rows(features)
        self.k = k

    def score_features(self, features) -> np.ndarray:
        Z = _normalize_rows(_check_features(features))
        if Z.shape[1] != self.bank.shape[1]:
            raise DimensionError("feature width does not match the fitted bank")
        sq = (np.sum(Z * Z, axis=1)[:, None] + np.sum(self.bank * self.bank, axis=1)[None, :]
              - 2.0 * Z @ self.bank.T)
        np.maximum(sq, 0.0, out=sq)
        kth = np.partition(sq, self.k - 1, axis=1)[:, self.k - 1]
        return -np.sqrt(kth)

    def score_batch(self, net: Network, X) -> np.ndarray:
        _, penult = forward_batch(net, X)
        return self.score_features(penult)


class ReactDetector:
    """Penultimate activations clipped at an ID quantile, then energy."""

    name = "react"

    def __init__(self, net: Network, features, quantile: float = 0.9):
        features = _check_features(features)
        if not 0.0 < quantile <= 1.0:
            raise ValidationError("quantile must lie in (0, 1]")
        self.clip = float(np.quantile(features, quantile))
        self.W, self.b = _last_layer(net)
        if features.shape[1] != self.W.shape[1]:
            raise DimensionError("feature width does not match the final layer")

    def score_batch(self, net: Network, X) -> np.ndarray:
        _, penult = forward_batch(net, X)
        if penult.shape[1] != self.W.shape[1]:
            raise DimensionError("feature width does not match the fitted layer")
        clipped = np.minimum(penult, self.clip)
        return energy_score(clipped @ self.W.T + self.b)


class NciDetector:
    """Signed projection of the centered feature onto the predicted
    class's last-layer weight vector."""

    name = "nci"

    def __init__(self, net: Network, features):
        features = _check_features(features)
        self.mu = features.mean(axis=0)
        self.W, self.b = _last_layer(net)
        if features.shape[1] != self.W.shape[1]:
            raise DimensionError("feature width does not match the final layer")

    def score_batch(self, net: Network, X) -> np.ndarray:
        logits, penult = forward_batch(net, X)
        if penult.shape[1] != self.mu.shape[0]:
            raise DimensionError("feature width does not match the fitted model")
        predicted = np.argmax(logits, axis=1)
        w = self.W[predicted]
        w_norms = np.linalg.norm(w, axis=1)
        w_norms[w_norms == 0.0] = 1.0
        return np.sum(w * (penult - self.mu), axis=1) / w_norms


class RevisitedPcaDetector:
    """Feature-space PCA with an angular reconstruction error plus energy.

    The reconstruction error is normalized by the centered feature norm
    (a pure angle in [0, 1]); the energy part is standardized on the
    fit set so the two terms share scale. Score = -error + std_energy.
    """

    name = "rpca"

    def __init__(self, net: Network, inputs, retained: float = 0.9):
        if not 0.0 < retained <= 1.0:
            raise ValidationError("retained variance must lie in (0, 1]")
        logits, penult = forward_batch(net, np.asarray(inputs, dtype=np.float64))
        self.mu = penult.mean(axis=0)
        centered = penult - self.mu
        cov = centered.T @ centered / penult.shape[0]
        w, V = np.linalg.eigh(cov)
        w = w[::-1].copy()
        V = V[:, ::-1]
        w[w < 0.0] = 0.0
        if w.sum() > 0.0:
            cum = np.cumsum(w) / w.sum()
            k = int(np.searchsorted(cum, retained - 1e-12, side="left")) + 1
            k = min(k, int(np.count_nonzero(w)))
        else:
            k = 0
        self.components = V[:, :k]
        energies = energy_score(logits)
        self.energy_mean = float(energies.mean())
        std = float(energies.std())
        self.energy_std = std if std > 0.0 else 1.0

    def relative_reconstruction_error(self, features) -> np.ndarray:
        features = _check_features(features)
        if features.shape[1] != self.mu.shape[0]:
            raise DimensionError("feature width does not match the fitted model")
        centered = features - self.mu
        norms = np.linalg.norm(centered, axis=1)
        resid = centered - (centered @ self.components) @ self.components.T
        safe = np.where(norms == 0.0, 1.0, norms)
        err = np.linalg.norm(resid, axis=1) / safe
        return np.where(norms == 0.0, 0.0, err)

    def score_batch(self, net: Network, X) -> np.ndarray:
        logits, penult = forward_batch(net, X)
        err = self.relative_reconstruction_error(penult)
        energy = (energy_score(logits) - self.energy_mean) / self.energy_std
        return -err + energy


class CorpDetector:
    """Kernel PCA reconstruction on cosine-normalized random Fourier features.

    Features are L2-normalized, embedded with random Fourier features of
    a Gaussian kernel (bandwidth ``gamma``), and scored by the negative
    reconstruction error against the principal subspace of the embedded
    ID bank.
    """

    name = "corp"

    def __init__(self, features, n_features: int = 4096, gamma: float = 0.5,
                 retained: float = 0.9, seed: int = 0):
        features = _check_features(features)
        if n_features < 1:
            raise ValidationError("n_features must be >= 1")
        if gamma <= 0.0:
            raise ValidationError("gamma must be > 0")
        if not 0.0 < retained <= 1.0:
            raise ValidationError("retained variance must lie in (0, 1]")
        if gamma < 1e-6:
            warnings.warn("gamma below 1e-6 makes the embedding nearly constant",
                          RuntimeWarning, stacklevel=2)
        rng = np.random.default_rng(seed)
        d = features.shape[1]
        self.freqs = rng.normal(0.0, np.sqrt(2.0 * gamma), size=(d, n_features))
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
        self.n_features = n_features
        phi = self._embed(features)
        self.mu = phi.mean(axis=0)
        centered = phi - self.mu
        # dual route: the bank is far smaller than the embedding width
        gram = centered @ centered.T
        w, V = np.linalg.eigh(gram)
        w = w[::-1].copy()
        V = V[:, ::-1]
        w[w < 0.0] = 0.0
        if w[0] <= 0.0:
            self.components = np.zeros((n_features, 0))
        else:
            w[w < 1e-12 * w[0]] = 0.0
            cum = np.cumsum(w) / w.sum()
            k = int(np.searchsorted(cum, retained - 1e-12, side="left")) + 1
            k = min(k, int(np.count_nonzero(w)))
            self.components = centered.T @ (V[:, :k] / np.sqrt(w[:k]))

    def _embed(self, Z: np.ndarray) -> np.ndarray:
        U = _normalize_rows(Z)
        return np.sqrt(2.0 / self.n_features) * np.cos(U @ self.freqs + self.phases)

    def score_features(self, features) -> np.ndarray:
        features = _check_features(features)
        if features.shape[1] != self.freqs.shape[0]:
            raise DimensionError("feature width does not match the fitted embedding")
        centered = self._embed(features) - self.mu
        resid = centered - (centered @ self.components) @ self.components.T
        return -np.linalg.norm(resid, axis=1)

    def score_batch(self, net: Network, X) -> np.ndarray:
        _, penult = forward_batch(net, X)
        return self.score_features(penult)
