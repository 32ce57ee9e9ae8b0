"""Gradient-subspace OOD detector.

Offline, per class k the mean gradient of the aggregated head over that
class's training samples is accumulated (compensated summation). The
class-mean columns are centered by the global mean and the principal
subspace of the centered matrix is found through the small dual
eigenproblem (C x C), then lifted back to parameter space. Online, a
test point's centered gradient is scored by the cosine between itself
and its projection onto that subspace; scores near 1 look in-dist,
scores below the threshold are flagged OOD.

Variants: ``means`` (class means, the default), ``batch`` (PCA over raw
per-sample gradients of one batch), ``gradorth`` (subspace transferred
from penultimate-activation principal directions to last-layer gradient
space, scored with uniform-target loss gradients), ``vec`` (one
subspace per logit head, scores reduced post hoc). Optional magnitude
sparsification (``dice_p``) zeroes the smallest-magnitude fraction of
each weight matrix, chosen once at fit time from the parameters and
applied identically to class means and online gradients.

Fitted states are immutable; scoring is read-only and thread-safe.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import kahan_add
from .data import LabeledDataset, per_class_loader
from .errors import (
    CapacityError,
    DegenerateFitError,
    DimensionError,
    FormatError,
    ValidationError,
    ZeroGradientError,
)
from .nn import (
    Network,
    forward_batch,
    per_sample_gradient_batch,
    per_sample_loss_gradient_batch,
)

STATE_MAGIC = b"SPPC0001"

VARIANTS = ("means", "batch", "gradorth", "vec")
GLOBAL_MEAN_MODES = ("class_weighted", "sample_weighted")
REDUCERS = ("max", "mean")

# relative floor below which eigenvalues are treated as zero
EIG_FLOOR = 1e-12
# centered gradients below this norm have no defined score
ZERO_GRAD_TOL = 1e-12

_STREAM_BATCH = 256


@dataclass(frozen=True)
class DetectorConfig:
    """Fit and scoring options.

    ``epsilon`` is the retained spectral-mass fraction; ``None`` picks
    the variant default (0.99, or 0.97 for the batch variant).
    ``aggregation`` is the gradient head ("max", "sum", or a class
    index); the vec variant fits one head per class and requires
    ``aggregation=None``. ``subset_groups=None`` selects the final
    dense layer's group.
    """

    variant: str = "means"
    epsilon: float | None = None
    aggregation: object = "max"
    subset_groups: tuple | None = None
    dice_p: float | None = None
    threshold_delta: float = 0.5
    global_mean_mode: str = "class_weighted"
    batch_cap: int = 4096
    vec_reduce: str = "max"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if self.epsilon is not None and not 0.0 < self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in (0, 1]")
        if self.variant == "vec":
            if self.aggregation is not None:
                raise ValidationError("vec variant fits every head; aggregation must be None")
        elif self.aggregation is None:
            raise ValidationError("aggregation is required outside the vec variant")
        if self.dice_p is not None and not 0.0 <= self.dice_p < 1.0:
            raise ValidationError("dice_p must lie in [0, 1)")
        if not 0.0 < self.threshold_delta <= 1.0:
            raise ValidationError("threshold_delta must lie in (0, 1]")
        if self.global_mean_mode not in GLOBAL_MEAN_MODES:
            raise ValidationError(f"global_mean_mode must be one of {GLOBAL_MEAN_MODES}")
        if self.batch_cap < 2:
            raise ValidationError("batch_cap must be >= 2")
        if self.vec_reduce not in REDUCERS:
            raise ValidationError(f"vec_reduce must be one of {REDUCERS}")
        agg = self.aggregation
        if agg is not None and agg not in ("max", "sum"):
            if isinstance(agg, bool) or not isinstance(agg, (int, np.integer)):
                raise ValidationError(
                    "aggregation must be 'max', 'sum', None, or a class index")
            if agg < 0:
                raise ValidationError("aggregation class index must be >= 0")
        if self.subset_groups is not None:
            object.__setattr__(self, "subset_groups", tuple(self.subset_groups))

    @property
    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 0.97 if self.variant == "batch" else 0.99

    def to_dict(self) -> dict:
        agg = self.aggregation
        if isinstance(agg, np.integer):
            agg = int(agg)
        return {
            "variant": self.variant,
            "epsilon": self.epsilon,
            "aggregation": agg,
            "subset_groups": list(self.subset_groups) if self.subset_groups else None,
            "dice_p": self.dice_p,
            "threshold_delta": self.threshold_delta,
            "global_mean_mode": self.global_mean_mode,
            "batch_cap": self.batch_cap,
            "vec_reduce": self.vec_reduce,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        if d.get("subset_groups") is not None:
            d["subset_groups"] = tuple(d["subset_groups"])
        return cls(**d)


@dataclass
class ClassMeanMatrix:
    """Per-class mean gradients (one column per class) and their global mean."""

    means: np.ndarray
    counts: np.ndarray
    global_mean: np.ndarray


@dataclass
class PrincipalSubspace:
    """A fitted detector state.

    ``components`` has orthonormal columns spanning the retained
    subspace in flat-parameter space; ``eigenvalues`` are the matching
    spectral masses in descending order. ``grad_kind`` selects the
    online gradient ("head" for an aggregated logit head,
    "uniform_loss" for the uniform-target loss gradient).
    """

    components: np.ndarray
    eigenvalues: np.ndarray
    global_mean: np.ndarray
    retained_fraction: float
    subset_groups: tuple
    grad_kind: str
    aggregation: object
    config: DetectorConfig
    mask: np.ndarray | None = None
    activation_components: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.components.shape[1]

    @property
    def dim(self) -> int:
        return self.components.shape[0]


@dataclass
class PerHeadSubspace:
    """One fitted subspace per logit head plus the score reducer."""

    states: tuple
    reduce: str

    @property
    def num_heads(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class Score:
    value: float
    gradient_norm: float


@dataclass(frozen=True)
class Decision:
    score: float
    delta: float
    is_ood: bool


def _resolve_subset(net: Network, cfg: DetectorConfig):
    groups = cfg.subset_groups if cfg.subset_groups is not None else (net.groups[-1],)
    return net.subset(groups)


def magnitude_mask(net: Network, groups, p: float) -> np.ndarray:
    """Sparsification mask over a flat subset: per weight matrix, the
    fraction ``p`` of smallest-magnitude entries is zeroed (stable ties);
    bias entries are kept. Built from parameter magnitudes only.
    """
    if not 0.0 <= p < 1.0:
        raise ValidationError("mask fraction must lie in [0, 1)")
    parts = []
    for g in groups:
        W, b = net.group_params(g)
        mask_w = np.ones(W.size)
        n_zero = int(round(p * W.size))
        if n_zero > 0:
            order = np.argsort(np.abs(W.ravel()), kind="stable")
            mask_w[order[:n_zero]] = 0.0
        parts.append(mask_w)
        parts.append(np.ones(b.size))
    return np.concatenate(parts)


def fit_class_means(net: Network, train: LabeledDataset,
                    cfg: DetectorConfig | None = None) -> ClassMeanMatrix:
    """Stream per-class mean gradients with compensated summation.

    Raw means: any sparsification or centering happens in ``fit``.
    """
    cfg = cfg or DetectorConfig()
    if not train.labeled:
        raise ValidationError("class means need a labeled dataset")
    if train.num_classes != net.num_classes:
        raise ValidationError("dataset and network disagree on the class count")
    subset = _resolve_subset(net, cfg)
    C = net.num_classes
    means = np.empty((subset.dim, C))
    counts = np.zeros(C, dtype=np.int64)
    agg = cfg.aggregation if cfg.variant != "vec" else "max"
    for c in range(C):
        total = np.zeros(subset.dim)
        comp = np.zeros(subset.dim)
        seen = 0
        for xb in per_class_loader(train, c, _STREAM_BATCH):
            grads = per_sample_gradient_batch(net, xb, agg, subset)
            kahan_add(total, comp, grads)
            seen += xb.shape[0]
        means[:, c] = total / seen
        counts[c] = seen
    return ClassMeanMatrix(means=means, counts=counts,
                           global_mean=_global_mean(means, counts, cfg.global_mean_mode))


def _global_mean(means: np.ndarray, counts: np.ndarray, mode: str) -> np.ndarray:
    if mode == "class_weighted":
        return means.mean(axis=1)
    return (means * counts).sum(axis=1) / counts.sum()


def principal_subspace_from_columns(cols: np.ndarray, epsilon: float,
                                    eig_floor: float = EIG_FLOOR,
                                    ref_scale_sq: float | None = None):
    """PCA of centered columns through the dual eigenproblem.

    Returns (components, eigenvalues, retained_fraction). Eigenvalues
    below ``eig_floor`` times the largest are zeroed before the
    smallest rank reaching the ``epsilon`` mass fraction is retained.
    The result is invariant to a common positive rescaling of ``cols``.

    ``ref_scale_sq`` is the squared Frobenius norm of the uncentered
    source matrix; when given, a top eigenvalue at roundoff level
    relative to it means centering cancelled everything, which is a
    degenerate fit rather than a one-dimensional one.
    """
    cols = np.asarray(cols, dtype=np.float64)
    if cols.ndim != 2:
        raise DimensionError("expected a (dim, n) column matrix")
    dual = cols.T @ cols
    w, V = np.linalg.eigh(dual)
    w = w[::-1].copy()
    V = V[:, ::-1]
    w[w < 0.0] = 0.0
    if w.size == 0 or w[0] <= 0.0:
        raise DegenerateFitError("no spectral mass in the centered columns")
    if ref_scale_sq is not None and w[0] <= 1e-24 * ref_scale_sq:
        raise DegenerateFitError(
            "centered columns carry only roundoff-level spectral mass")
    w[w < eig_floor * w[0]] = 0.0
    total = float(w.sum())
    cum = np.cumsum(w)
    target = epsilon * total - 1e-12 * total
    k = int(np.searchsorted(cum, target, side="left")) + 1
    k = min(k, int(np.count_nonzero(w)))
    U = cols @ (V[:, :k] / np.sqrt(w[:k]))
    return U, w[:k].copy(), float(cum[k - 1] / total)


def fit(net: Network, train, cfg: DetectorConfig | None = None):
    """Fit the configured variant; returns a PrincipalSubspace
    (or PerHeadSubspace for ``vec``)."""
    cfg = cfg or DetectorConfig()
    if cfg.variant == "means":
        return _fit_means(net, train, cfg)
    if cfg.variant == "batch":
        return fit_batch_subspace(net, train, cfg)
    if cfg.variant == "gradorth":
        return fit_gradorth_subspace(net, train, cfg)
    return fit_per_head(net, train, cfg)


def _fit_means(net: Network, train: LabeledDataset, cfg: DetectorConfig,
               aggregation=None) -> PrincipalSubspace:
    agg = aggregation if aggregation is not None else cfg.aggregation
    sub_cfg = replace(cfg, variant="means", aggregation=agg)
    cmm = fit_class_means(net, train, sub_cfg)
    subset = _resolve_subset(net, cfg)
    mask = None
    means = cmm.means
    if cfg.dice_p is not None:
        mask = magnitude_mask(net, subset.groups, cfg.dice_p)
        means = means * mask[:, None]
    gbar = _global_mean(means, cmm.counts, cfg.global_mean_mode)
    cols = means - gbar[:, None]
    U, w, retained = principal_subspace_from_columns(
        cols, cfg.resolved_epsilon, ref_scale_sq=float(np.sum(means ** 2)))
    return PrincipalSubspace(
        components=U, eigenvalues=w, global_mean=gbar, retained_fraction=retained,
        subset_groups=subset.groups, grad_kind="head", aggregation=agg,
        config=cfg, mask=mask)


def fit_batch_subspace(net: Network, batch, cfg: DetectorConfig | None = None) -> PrincipalSubspace:
    """PCA over the raw per-sample gradients of one batch (no labels)."""
    cfg = cfg or DetectorConfig(variant="batch")
    inputs = batch.inputs if hasattr(batch, "inputs") else np.asarray(batch, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] < 2:
        raise ValidationError("batch variant needs at least 2 samples")
    if inputs.shape[0] > cfg.batch_cap:
        raise CapacityError(
            f"batch of {inputs.shape[0]} exceeds batch_cap={cfg.batch_cap}")
    subset = _resolve_subset(net, cfg)
    grads = per_sample_gradient_batch(net, inputs, cfg.aggregation, subset)
    mask = None
    if cfg.dice_p is not None:
        mask = magnitude_mask(net, subset.groups, cfg.dice_p)
        grads = grads * mask
    gbar = grads.mean(axis=0)
    cols = (grads - gbar).T
    eps = cfg.epsilon if cfg.epsilon is not None else 0.97
    U, w, retained = principal_subspace_from_columns(
        cols, eps, ref_scale_sq=float(np.sum(grads ** 2)))
    return PrincipalSubspace(
        components=U, eigenvalues=w, global_mean=gbar, retained_fraction=retained,
        subset_groups=subset.groups, grad_kind="head", aggregation=cfg.aggregation,
        config=cfg, mask=mask)


def fit_gradorth_subspace(net: Network, train, cfg: DetectorConfig | None = None) -> PrincipalSubspace:
    """Subspace transferred from penultimate-activation directions.

    Principal directions M of the uncentered second moment of
    penultimate activations are lifted to last-layer gradient space as
    one copy of M per logit row (bias rows stay zero). Scoring uses the
    uniform-target loss gradient, uncentered.
    """
    cfg = cfg or DetectorConfig(variant="gradorth", aggregation="max")
    last = net.groups[-1]
    if cfg.subset_groups is not None and tuple(cfg.subset_groups) != (last,):
        raise ValidationError("gradorth variant is defined on the final dense group only")
    inputs = train.inputs if hasattr(train, "inputs") else np.asarray(train, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] < 1:
        raise ValidationError("gradorth variant needs a nonempty dataset")
    d_pen = net.layers[-1].in_dim
    C = net.num_classes
    moment = np.zeros((d_pen, d_pen))
    for start in range(0, inputs.shape[0], _STREAM_BATCH):
        _, penult = forward_batch(net, inputs[start:start + _STREAM_BATCH])
        moment += penult.T @ penult
    moment /= inputs.shape[0]
    w, V = np.linalg.eigh(moment)
    w = w[::-1].copy()
    V = V[:, ::-1]
    w[w < 0.0] = 0.0
    if w[0] <= 0.0:
        raise DegenerateFitError("penultimate activations carry no energy")
    w[w < EIG_FLOOR * w[0]] = 0.0
    total = float(w.sum())
    cum = np.cumsum(w)
    target = cfg.resolved_epsilon * total - 1e-12 * total
    k_act = int(np.searchsorted(cum, target, side="left")) + 1
    k_act = min(k_act, int(np.count_nonzero(w)))
    M = V[:, :k_act]
    dim = C * d_pen + C
    U = np.zeros((dim, C * k_act))
    for c in range(C):
        U[c * d_pen:(c + 1) * d_pen, c * k_act:(c + 1) * k_act] = M
    return PrincipalSubspace(
        components=U,
        eigenvalues=np.tile(w[:k_act], C),
        global_mean=np.zeros(dim),
        retained_fraction=float(cum[k_act - 1] / total),
        subset_groups=(last,),
        grad_kind="uniform_loss",
        aggregation=None,
        config=cfg,
        mask=None,
        activation_components=M,
    )


def fit_per_head(net: Network, train: LabeledDataset,
                 cfg: DetectorConfig | None = None) -> PerHeadSubspace:
    """Fit one class-mean subspace per logit head (vec variant)."""
    cfg = cfg or DetectorConfig(variant="vec", aggregation=None)
    if cfg.aggregation is not None:
        raise ValidationError("vec variant fits every head; aggregation must be None")
    states = tuple(_fit_means(net, train, cfg, aggregation=c)
                   for c in range(net.num_classes))
    return PerHeadSubspace(states=states, reduce=cfg.vec_reduce)


def _online_gradients(state: PrincipalSubspace, net: Network, X: np.ndarray) -> np.ndarray:
    subset = net.subset(state.subset_groups)
    if subset.dim != state.dim:
        raise DimensionError("network parameter subset does not match the fitted state")
    if state.grad_kind == "head":
        grads = per_sample_gradient_batch(net, X, state.aggregation, subset)
    else:
        targets = np.full((X.shape[0], net.num_classes), 1.0 / net.num_classes)
        grads = per_sample_loss_gradient_batch(net, X, targets, subset)
    if state.mask is not None:
        grads = grads * state.mask
    return grads


def score_batch(state: PrincipalSubspace, net: Network, X) -> np.ndarray:
    """Cosine scores in [0, 1] for a batch; 1 means fully inside the subspace."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("score_batch expects a (N, input_dim) matrix")
    grads = _online_gradients(state, net, X)
    centered = grads - state.global_mean
    norms = np.linalg.norm(centered, axis=1)
    bad = np.flatnonzero(norms < ZERO_GRAD_TOL)
    if bad.size:
        raise ZeroGradientError(
            f"centered gradient norm below {ZERO_GRAD_TOL} for sample {int(bad[0])}")
    proj = centered @ state.components
    vals = np.linalg.norm(proj, axis=1) / norms
    return np.clip(vals, 0.0, 1.0)


def score(state: PrincipalSubspace, net: Network, x) -> Score:
    """Score one input; see :func:`score_batch`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("score expects a single input vector")
    grads = _online_gradients(state, net, x[None, :])
    centered = grads[0] - state.global_mean
    norm = float(np.linalg.norm(centered))
    if norm < ZERO_GRAD_TOL:
        raise ZeroGradientError(f"centered gradient norm below {ZERO_GRAD_TOL}")
    val = float(np.linalg.norm(centered @ state.components)) / norm
    return Score(value=min(max(val, 0.0), 1.0), gradient_norm=norm)


def detect(state: PrincipalSubspace, net: Network, x, delta: float | None = None) -> Decision:
    """Flag OOD when the score falls below ``delta`` (default from config)."""
    d = state.config.threshold_delta if delta is None else float(delta)
    if not 0.0 < d <= 1.0:
        raise ValidationError("delta must lie in (0, 1]")
    s = score(state, net, x)
    return Decision(score=s.value, delta=d, is_ood=bool(s.value < d))


def detect_batch(state: PrincipalSubspace, net: Network, X,
                 delta: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    d = state.config.threshold_delta if delta is None else float(delta)
    if not 0.0 < d <= 1.0:
        raise ValidationError("delta must lie in (0, 1]")
    vals = score_batch(state, net, X)
    return vals, vals < d


def score_per_head_batch(ph: PerHeadSubspace, net: Network, X) -> np.ndarray:
    """Per-head scores reduced by max or mean across heads."""
    if ph.reduce not in REDUCERS:
        raise ValidationError(f"reduce must be one of {REDUCERS}")
    per_head = np.stack([score_batch(s, net, X) for s in ph.states], axis=0)
    if ph.reduce == "max":
        return per_head.max(axis=0)
    return per_head.mean(axis=0)


def score_per_head(ph: PerHeadSubspace, net: Network, x) -> Score:
    x = np.asarray(x, dtype=np.float64)
    vals = score_per_head_batch(ph, net, x[None, :])
    return Score(value=float(vals[0]), gradient_norm=float("nan"))


def threshold_from_id_scores(scores, target_tpr: float = 0.95) -> float:
    """Threshold keeping at least ``target_tpr`` of the given ID scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValidationError("need at least one ID score")
    if not 0.0 < target_tpr <= 1.0:
        raise ValidationError("target_tpr must lie in (0, 1]")
    return float(np.quantile(scores, 1.0 - target_tpr, method="lower"))


def projector(state: PrincipalSubspace) -> np.ndarray:
    """Dense orthogonal projector onto the fitted subspace."""
    return state.components @ state.components.T


def _state_meta(state: PrincipalSubspace) -> dict:
    agg = state.aggregation
    if isinstance(agg, np.integer):
        agg = int(agg)
    return {
        "subset_groups": list(state.subset_groups),
        "dim": state.dim,
        "k": state.k,
        "grad_kind": state.grad_kind,
        "aggregation": agg,
        "retained_fraction": state.retained_fraction,
        "has_mask": state.mask is not None,
        "act_shape": (list(state.activation_components.shape)
                      if state.activation_components is not None else None),
        "config": state.config.to_dict(),
    }


def _state_blobs(state: PrincipalSubspace) -> bytes:
    parts = [
        state.global_mean.astype("<f8").tobytes(),
        state.components.astype("<f8").tobytes(),
        state.eigenvalues.astype("<f8").tobytes(),
    ]
    if state.mask is not None:
        parts.append(state.mask.astype("<f8").tobytes())
    if state.activation_components is not None:
        parts.append(state.activation_components.astype("<f8").tobytes())
    return b"".join(parts)


def save_state(state, path) -> None:
    """Serialize a fitted state (single or per-head) with config echo."""
    if isinstance(state, PerHeadSubspace):
        header = {"kind": "per_head", "reduce": state.reduce,
                  "states": [_state_meta(s) for s in state.states]}
        blobs = b"".join(_state_blobs(s) for s in state.states)
    else:
        header = {"kind": "single", "states": [_state_meta(state)]}
        blobs = _state_blobs(state)
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(blobs)


def _read_state(meta: dict, buf: memoryview, off: int):
    dim, k = meta["dim"], meta["k"]
    gm = np.frombuffer(buf, "<f8", count=dim, offset=off).copy()
    off += dim * 8
    comps = np.frombuffer(buf, "<f8", count=dim * k, offset=off).reshape(dim, k).copy()
    off += dim * k * 8
    eig = np.frombuffer(buf, "<f8", count=k, offset=off).copy()
    off += k * 8
    mask = None
    if meta["has_mask"]:
        mask = np.frombuffer(buf, "<f8", count=dim, offset=off).copy()
        off += dim * 8
    act = None
    if meta["act_shape"] is not None:
        r, c = meta["act_shape"]
        act = np.frombuffer(buf, "<f8", count=r * c, offset=off).reshape(r, c).copy()
        off += r * c * 8
    agg = meta["aggregation"]
    state = PrincipalSubspace(
        components=comps, eigenvalues=eig, global_mean=gm,
        retained_fraction=meta["retained_fraction"],
        subset_groups=tuple(meta["subset_groups"]),
        grad_kind=meta["grad_kind"], aggregation=agg,
        config=DetectorConfig.from_dict(meta["config"]),
        mask=mask, activation_components=act)
    return state, off


def _blob_floats(meta: dict) -> int:
    dim, k = meta["dim"], meta["k"]
    n = dim + dim * k + k
    if meta["has_mask"]:
        n += dim
    if meta["act_shape"] is not None:
        r, c = meta["act_shape"]
        n += r * c
    return n


def load_state(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != STATE_MAGIC:
            raise FormatError(f"bad detector state magic {magic!r}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError("truncated detector state header")
        (hlen,) = struct.unpack("<I", raw)
        hraw = fh.read(hlen)
        if len(hraw) != hlen:
            raise FormatError("truncated detector state header")
        blob = memoryview(fh.read())
    try:
        header = json.loads(hraw.decode())
        expected = sum(_blob_floats(meta) for meta in header["states"])
        if len(blob) != expected * 8:
            raise FormatError("detector state payload has wrong length")
        states = []
        off = 0
        for meta in header["states"]:
            state, off = _read_state(meta, blob, off)
            states.append(state)
        if header["kind"] == "per_head":
            return PerHeadSubspace(states=tuple(states), reduce=header["reduce"])
        return states[0]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"unreadable detector state: {exc}") from exc
