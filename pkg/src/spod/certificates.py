"""Certificates for subspace detectors.

All certificates operate on the squared projection ratio
s = ||P h||^2 / ||h||^2 of a feature vector h against the range of a
covariance model (the detector's cosine score squares to exactly this
quantity). The exact certificate says: if h leaves the range of the
in-distribution second moment at all (s < 1), the point cannot be
in-distribution. The robust certificate tolerates a covariance estimate
within spectral distance eps of the truth, at the price of a threshold
below 1. Strictness is enforced with margin > 1e-9 so float-level
residue never certifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    GapCollapsedError,
    UndefinedCertificateError,
    ValidationError,
)
from .ntk import spectral_norm

# margins at or below this never certify
STRICTNESS_TOL = 1e-9


@dataclass(frozen=True)
class Certificate:
    kind: str
    holds: bool
    margin: float
    threshold_used: float
    vacuous: bool = False


@dataclass
class CovarianceModel:
    """Symmetric PSD second-moment model with an explicit rank cut.

    ``basis`` spans the top-``rank`` eigenspace; ``lambda_min`` is the
    smallest retained eigenvalue.
    """

    matrix: np.ndarray
    rank: int
    eigenvalues: np.ndarray
    basis: np.ndarray

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[self.rank - 1])


def covariance_model(S, rank: int | None = None, rel_tol: float = 1e-10) -> CovarianceModel:
    """Eigendecompose a symmetric PSD matrix; infer rank when not given."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError("covariance model needs a square matrix")
    if not np.allclose(S, S.T, atol=1e-10):
        raise ValidationError("covariance matrix must be symmetric")
    w, V = np.linalg.eigh(S)
    w = w[::-1].copy()
    V = V[:, ::-1]
    if w[0] < -1e-10:
        raise ValidationError("covariance matrix must be PSD")
    w[w < 0.0] = 0.0
    if rank is None:
        rank = int(np.count_nonzero(w > rel_tol * max(w[0], 1.0)))
    if not 1 <= rank <= S.shape[0]:
        raise ValidationError("rank must lie in [1, dim]")
    return CovarianceModel(matrix=S, rank=rank, eigenvalues=w, basis=V[:, :rank])


def projection_ratio_sq(h, basis) -> float:
    """Squared ratio ||Q Q^T h||^2 / ||h||^2 for an orthonormal basis Q."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1:
        raise DimensionError("feature must be a vector")
    basis = np.asarray(basis, dtype=np.float64)
    nrm2 = float(h @ h)
    if nrm2 <= 0.0:
        raise UndefinedCertificateError("zero feature vector has no projection ratio")
    p = basis.T @ h
    return min(float(p @ p) / nrm2, 1.0)


def certify_exact(h, model_or_basis) -> Certificate:
    """OOD certificate against the exact covariance range.

    Holds when the squared projection ratio sits strictly below 1
    (margin beyond 1e-9). A holding certificate is sound: no point of a
    distribution with that second moment can produce this feature.
    """
    basis = model_or_basis.basis if isinstance(model_or_basis, CovarianceModel) else model_or_basis
    s_sq = projection_ratio_sq(h, basis)
    margin = 1.0 - s_sq
    return Certificate(kind="exact", holds=bool(margin > STRICTNESS_TOL),
                       margin=margin, threshold_used=1.0)


def certify_robust(s_sq: float, lambda_min: float, eps: float) -> Certificate:
    """OOD certificate under covariance uncertainty.

    ``s_sq`` is the squared projection ratio measured against an
    estimated rank-C covariance whose spectral distance to the truth is
    at most ``eps``; ``lambda_min`` is the smallest considered
    eigenvalue. Certifies when s_sq < 1 - 2*eps/(lambda_min - eps).
    Vacuous (never holds) when lambda_min <= eps.
    """
    if eps < 0.0:
        raise ValidationError("perturbation bound eps must be >= 0")
    if not 0.0 <= s_sq <= 1.0 + 1e-12:
        raise ValidationError("squared projection ratio must lie in [0, 1]")
    if lambda_min <= eps:
        return Certificate(kind="robust", holds=False, margin=float("nan"),
                           threshold_used=float("nan"), vacuous=True)
    threshold = 1.0 - 2.0 * eps / (lambda_min - eps)
    margin = threshold - s_sq
    return Certificate(kind="robust", holds=bool(margin > STRICTNESS_TOL),
                       margin=margin, threshold_used=threshold)


def necessary_condition(model: CovarianceModel, feature_image_dim: int) -> bool:
    """Whether nontrivial detection is possible at all: the covariance
    rank must fall short of the dimension spanned by reachable features."""
    if feature_image_dim < 1:
        raise ValidationError("feature_image_dim must be >= 1")
    return model.rank < feature_image_dim


def davis_kahan_bound(A, B, k: int) -> tuple[float, float]:
    """Top-k eigenspace stability: returns (bound, actual).

    ``bound`` is 2 ||B - A||_2 / gap with gap = lambda_k(A) -
    lambda_{k+1}(B); ``actual`` is the measured spectral distance
    between the top-k eigenprojectors. Raises GapCollapsedError when
    the gap is not positive.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("A and B must be square matrices of equal shape")
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}]")
    if not (np.allclose(A, A.T, atol=1e-10) and np.allclose(B, B.T, atol=1e-10)):
        raise ValidationError("A and B must be symmetric")
    wa, Va = np.linalg.eigh(A)
    wb, Vb = np.linalg.eigh(B)
    wa, Va = wa[::-1], Va[:, ::-1]
    wb, Vb = wb[::-1], Vb[:, ::-1]
    Pa = Va[:, :k] @ Va[:, :k].T
    Pb = Vb[:, :k] @ Vb[:, :k].T
    actual = spectral_norm(Pb - Pa)
    if k == n:
        return 0.0, actual
    gap = float(wa[k - 1] - wb[k])
    if gap <= 0.0:
        raise GapCollapsedError(f"spectral gap {gap} is not positive")
    bound = 2.0 * spectral_norm(B - A) / gap
    return bound, actual


def sample_complexity_eps(R: float, N: int, delta: float, Delta: float) -> float:
    """Concentration radius for an empirical second moment.

    Features bounded by ``R`` in norm, ``N`` samples, failure
    probability ``delta``, spectral gap ``Delta`` between the retained
    and discarded eigenvalues. The score drift obeys
    |s - s_hat| <= 2*eps/(Delta - eps) whenever eps < Delta.
    """
    if N < 2:
        raise ValidationError("N must be >= 2")
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    if R <= 0.0 or Delta <= 0.0:
        raise ValidationError("R and Delta must be > 0")
    return (2.0 * R * R / Delta) * math.sqrt(math.log(N / delta) / N)


def score_drift_bound(eps: float, Delta: float) -> float:
    """The certified score drift 2*eps/(Delta - eps); requires eps < Delta."""
    if eps < 0.0 or Delta <= 0.0:
        raise ValidationError("need eps >= 0 and Delta > 0")
    if eps >= Delta:
        raise GapCollapsedError("drift bound undefined: eps >= Delta")
    return 2.0 * eps / (Delta - eps)
