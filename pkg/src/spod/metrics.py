"""Detection metrics over scored ID/OOD sets.

AUROC uses the rank formulation with ties counted as half; the
numerator is assembled in integer arithmetic so results agree exactly
with exhaustive pair counting. FPR-at-TPR follows the inclusive
convention: the threshold is the largest value that still classifies at
least the requested fraction of ID as ID, and a score >= threshold
counts as an ID prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ScoredSet:
    """ID and OOD scores plus their orientation."""

    id_scores: np.ndarray
    ood_scores: np.ndarray
    higher_is_id: bool = True

    def __post_init__(self):
        for name in ("id_scores", "ood_scores"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if arr.size == 0:
                raise ValidationError(f"{name} must be nonempty")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    def oriented(self) -> tuple[np.ndarray, np.ndarray]:
        """Scores flipped so that higher always means more ID."""
        if self.higher_is_id:
            return self.id_scores, self.ood_scores
        return -self.id_scores, -self.ood_scores


def auroc(scored: ScoredSet) -> float:
    """Probability a random ID point outranks a random OOD point (ties half)."""
    id_s, ood_s = scored.oriented()
    ood_sorted = np.sort(ood_s)
    below = np.searchsorted(ood_sorted, id_s, side="left").sum()
    below_or_equal = np.searchsorted(ood_sorted, id_s, side="right").sum()
    # 2*(# ood < id) + (# ood == id), exact in integers
    numerator = int(below) + int(below_or_equal)
    return numerator / (2.0 * id_s.size * ood_s.size)


def fpr_at_tpr(scored: ScoredSet, tpr: float = 0.95) -> float:
    """Fraction of OOD classified ID at the loosest threshold keeping
    at least ``tpr`` of ID classified ID (score >= threshold -> ID)."""
    if not 0.0 < tpr <= 1.0:
        raise ValidationError("tpr must lie in (0, 1]")
    id_s, ood_s = scored.oriented()
    need = int(np.ceil(tpr * id_s.size))
    threshold = np.sort(id_s)[id_s.size - need]
    return float(np.mean(ood_s >= threshold))
