"""Minimal dense-network core with per-sample gradient extraction.

Everything runs in float64. A network is an ordered list of layers
(dense, relu, tanh); the final layer must be dense and its output
dimension is the number of classes. Each dense layer owns a named
parameter group; the flat parameter vector concatenates, per group in
layer order, the row-major weight matrix followed by the bias.

Per-sample gradients are taken with respect to an aggregated scalar
head over the logits:

* ``"max"``  - the attained maximum logit (subgradient of the max
  branch; ties break to the lowest class index),
* ``"sum"``  - the sum of all logits,
* an ``int`` - a single logit.

Networks are mutable only through ``set_flat_params`` and ``train_sgd``;
all other operations are read-only and safe to share across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DimensionError,
    FormatError,
    TrainingDivergedError,
    ValidationError,
)

CHECKPOINT_MAGIC = b"SPOD0001"

DENSE = "dense"
ACTIVATIONS = ("relu", "tanh")
LAYER_KINDS = (DENSE,) + ACTIVATIONS

Head = "str | int"  # "max" | "sum" | class index


def as_tensor(x, name: str = "array") -> np.ndarray:
    """Validate and return a float64 array; rejects non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind in {dense, relu, tanh}; dense layers carry a group name."""

    kind: str
    in_dim: int
    out_dim: int
    group: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValidationError("layer dimensions must be positive")
        if self.kind == DENSE:
            if not self.group:
                raise ValidationError("dense layers need a group name")
        else:
            if self.out_dim != self.in_dim:
                raise ValidationError("activation layers cannot change width")
            if self.group:
                raise ValidationError("activation layers cannot own parameters")


@dataclass(frozen=True)
class ParamSubset:
    """A selection of parameter groups and its flat index set."""

    groups: tuple[str, ...]
    dim: int
    index: np.ndarray = field(repr=False, compare=False)

    def gather(self, flat: np.ndarray) -> np.ndarray:
        """Restrict a flat gradient (vector or row-batch) to this subset."""
        return flat[..., self.index]


class Network:
    """An MLP over float64 with named dense parameter groups.

    Args:
        layers: layer specs in order; widths must chain and the final
            layer must be dense (its out_dim is the class count).
        params: mapping group name -> (W, b) with W of shape
            (out_dim, in_dim) and b of shape (out_dim,).
    """

    def __init__(self, layers, params):
        layers = tuple(layers)
        if not layers:
            raise ValidationError("network needs at least one layer")
        if layers[-1].kind != DENSE:
            raise ValidationError("final layer must be dense (logit head)")
        for prev, cur in zip(layers, layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise DimensionError(
                    f"layer width mismatch: {prev.out_dim} -> {cur.in_dim}")
        groups = [l.group for l in layers if l.kind == DENSE]
        if len(set(groups)) != len(groups):
            raise ValidationError("dense group names must be unique")
        if set(params) != set(groups):
            raise ValidationError("params must cover exactly the dense groups")
        self.layers = layers
        self.num_classes = layers[-1].out_dim
        self.input_dim = layers[0].in_dim
        self._groups = tuple(groups)
        self._params: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for l in layers:
            if l.kind != DENSE:
                continue
            W, b = params[l.group]
            W = as_tensor(W, f"W[{l.group}]")
            b = as_tensor(b, f"b[{l.group}]")
            if W.shape != (l.out_dim, l.in_dim) or b.shape != (l.out_dim,):
                raise DimensionError(f"bad parameter shapes for group {l.group!r}")
            self._params[l.group] = (W.copy(), b.copy())
        index = {}
        off = 0
        for g in self._groups:
            W, b = self._params[g]
            n = W.size + b.size
            index[g] = (off, off + n)
            off += n
        self.param_index: dict[str, tuple[int, int]] = index
        self.n_params = off

    @property
    def groups(self) -> tuple[str, ...]:
        return self._groups

    def group_params(self, group: str) -> tuple[np.ndarray, np.ndarray]:
        if group not in self._params:
            raise ValidationError(f"unknown parameter group {group!r}")
        W, b = self._params[group]
        return W, b

    def flat_params(self) -> np.ndarray:
        parts = []
        for g in self._groups:
            W, b = self._params[g]
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = as_tensor(flat, "flat params")
        if flat.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters")
        for g in self._groups:
            start, stop = self.param_index[g]
            W, b = self._params[g]
            chunk = flat[start:stop]
            W[:] = chunk[: W.size].reshape(W.shape)
            b[:] = chunk[W.size:]

    def subset(self, groups=None) -> ParamSubset:
        """Build a ParamSubset; ``None`` selects every group."""
        if groups is None:
            groups = self._groups
        groups = tuple(groups)
        if not groups:
            raise ValidationError("parameter subset cannot be empty")
        idx_parts = []
        for g in groups:
            if g not in self.param_index:
                raise ValidationError(f"unknown parameter group {g!r}")
            start, stop = self.param_index[g]
            idx_parts.append(np.arange(start, stop))
        index = np.concatenate(idx_parts)
        return ParamSubset(groups=groups, dim=index.size, index=index)

    def pack(self):
        """Flatten the network into the kernel-facing array form."""
        n_dense = len(self._groups)
        max_out = max(l.out_dim for l in self.layers if l.kind == DENSE)
        max_in = max(l.in_dim for l in self.layers if l.kind == DENSE)
        op_kind = np.empty(len(self.layers), np.int64)
        op_slot = np.full(len(self.layers), -1, np.int64)
        W_pad = np.zeros((n_dense, max_out, max_in))
        b_pad = np.zeros((n_dense, max_out))
        dims = np.zeros((n_dense, 2), np.int64)
        offsets = np.zeros(n_dense, np.int64)
        slot = 0
        for t, l in enumerate(self.layers):
            if l.kind == DENSE:
                op_kind[t] = _kernels.OP_DENSE
                op_slot[t] = slot
                W, b = self._params[l.group]
                W_pad[slot, : l.out_dim, : l.in_dim] = W
                b_pad[slot, : l.out_dim] = b
                dims[slot] = (l.out_dim, l.in_dim)
                offsets[slot] = self.param_index[l.group][0]
                slot += 1
            else:
                op_kind[t] = _kernels.OP_RELU if l.kind == "relu" else _kernels.OP_TANH
        max_w = max(self.input_dim, max(l.out_dim for l in self.layers))
        return op_kind, op_slot, W_pad, b_pad, dims, offsets, self.n_params, max_w


def mlp(input_dim, hidden_dims, num_classes, activation="relu", seed=0) -> Network:
    """Build a fully-connected net with groups named dense1..denseL.

    Weight init is scaled Gaussian (sqrt(2/fan_in) before relu,
    sqrt(1/fan_in) otherwise); biases start at zero. Deterministic in
    ``seed``.
    """
    if activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    widths = [int(input_dim)] + [int(h) for h in hidden_dims] + [int(num_classes)]
    layers = []
    params = {}
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        group = f"dense{i + 1}"
        layers.append(LayerSpec(DENSE, fan_in, fan_out, group))
        last = i == len(widths) - 2
        scale = np.sqrt(1.0 / fan_in) if (last or activation != "relu") else np.sqrt(2.0 / fan_in)
        params[group] = (rng.normal(0.0, scale, size=(fan_out, fan_in)), np.zeros(fan_out))
        if not last:
            layers.append(LayerSpec(activation, fan_out, fan_out))
    return Network(layers, params)


def _check_batch(net: Network, X: np.ndarray) -> np.ndarray:
    X = as_tensor(X, "inputs")
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionError(
            f"expected inputs of shape (N, {net.input_dim}), got {X.shape}")
    return X


def forward_batch(net: Network, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the net on a batch; returns (logits, penultimate activations).

    The penultimate activation is the input to the final dense layer.
    """
    X = _check_batch(net, X)
    a = X
    penult = a
    for t, l in enumerate(net.layers):
        if l.kind == DENSE:
            if t == len(net.layers) - 1:
                penult = a
            W, b = net.group_params(l.group)
            a = a @ W.T + b
        elif l.kind == "relu":
            a = np.maximum(a, 0.0)
        else:
            a = np.tanh(a)
    return a, penult


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample forward pass; returns (logits, penultimate)."""
    x = as_tensor(x, "input")
    if x.ndim != 1:
        raise DimensionError("forward takes a single input vector")
    logits, penult = forward_batch(net, x[None, :])
    return logits[0], penult[0]


def _check_head(head, num_classes: int):
    if head == "max" or head == "sum":
        return head
    if isinstance(head, (int, np.integer)) and not isinstance(head, bool):
        c = int(head)
        if 0 <= c < num_classes:
            return c
        raise ValidationError(f"head index {c} out of range for {num_classes} classes")
    raise ValidationError(f"head must be 'max', 'sum', or a class index, got {head!r}")


def head_seeds(logits: np.ndarray, head) -> np.ndarray:
    """Seed vectors on the logits for the aggregated head."""
    B, C = logits.shape
    head = _check_head(head, C)
    S = np.zeros((B, C))
    if head == "max":
        S[np.arange(B), np.argmax(logits, axis=1)] = 1.0
    elif head == "sum":
        S[:] = 1.0
    else:
        S[:, head] = 1.0
    return S


def _grad_from_seeds(net: Network, X: np.ndarray, seeds: np.ndarray,
                     subset: ParamSubset | None) -> np.ndarray:
    pack = net.pack()
    grads = _kernels.grad_batch(X, seeds, *pack)
    if subset is not None:
        grads = subset.gather(grads)
    return grads


def per_sample_gradient_batch(net: Network, X: np.ndarray, head="max",
                              subset: ParamSubset | None = None) -> np.ndarray:
    """Flat gradient of the aggregated head per sample, over ``subset``.

    Returns an (N, dim) matrix, one row per input row.
    """
    X = _check_batch(net, X)
    logits, _ = forward_batch(net, X)
    seeds = head_seeds(logits, head)
    return _grad_from_seeds(net, X, seeds, subset)


def per_sample_gradient(net: Network, x: np.ndarray, head="max",
                        subset: ParamSubset | None = None) -> np.ndarray:
    """Single-sample version of :func:`per_sample_gradient_batch`."""
    x = as_tensor(x, "input")
    if x.ndim != 1:
        raise DimensionError("per_sample_gradient takes a single input vector")
    return per_sample_gradient_batch(net, x[None, :], head, subset)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean softmax cross-entropy over a batch of target distributions."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    log_probs = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    return float(-np.mean(np.sum(targets * log_probs, axis=-1)))


def _check_targets(targets: np.ndarray, num_classes: int) -> np.ndarray:
    targets = as_tensor(targets, "targets")
    if targets.ndim != 2 or targets.shape[1] != num_classes:
        raise DimensionError(f"targets must have {num_classes} columns")
    sums = np.sum(targets, axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ValidationError("each target distribution must sum to 1 (tol 1e-9)")
    return targets


def per_sample_loss_gradient_batch(net: Network, X: np.ndarray, targets: np.ndarray,
                                   subset: ParamSubset | None = None) -> np.ndarray:
    """Per-sample gradient of softmax cross-entropy against ``targets``."""
    X = _check_batch(net, X)
    targets = _check_targets(targets, net.num_classes)
    if targets.shape[0] != X.shape[0]:
        raise DimensionError("targets and inputs disagree on batch size")
    logits, _ = forward_batch(net, X)
    seeds = softmax(logits) - targets
    return _grad_from_seeds(net, X, seeds, subset)


def per_sample_loss_gradient(net: Network, x: np.ndarray, target: np.ndarray,
                             subset: ParamSubset | None = None) -> np.ndarray:
    x = as_tensor(x, "input")
    if x.ndim != 1:
        raise DimensionError("per_sample_loss_gradient takes a single input vector")
    target = as_tensor(target, "target")
    if target.ndim != 1:
        raise DimensionError("target must be a single distribution")
    return per_sample_loss_gradient_batch(net, x[None, :], target[None, :], subset)[0]


def _mean_loss_gradients(net: Network, X: np.ndarray, targets: np.ndarray):
    """Batch loss and batch-mean gradient per group, via batched backprop."""
    acts = [X]
    a = X
    for l in net.layers:
        if l.kind == DENSE:
            W, b = net.group_params(l.group)
            a = a @ W.T + b
        elif l.kind == "relu":
            a = np.maximum(a, 0.0)
        else:
            a = np.tanh(a)
        acts.append(a)
    logits = a
    loss = cross_entropy(logits, targets)
    B = X.shape[0]
    delta = (softmax(logits) - targets) / B
    grads = {}
    for t in range(len(net.layers) - 1, -1, -1):
        l = net.layers[t]
        a_in = acts[t]
        if l.kind == DENSE:
            W, _ = net.group_params(l.group)
            grads[l.group] = (delta.T @ a_in, delta.sum(axis=0))
            delta = delta @ W
        elif l.kind == "relu":
            delta = delta * (a_in > 0.0)
        else:
            delta = delta * (1.0 - np.tanh(a_in) ** 2)
    return loss, logits, grads


@dataclass
class TrainLog:
    """Per-epoch mean loss and full-train accuracy."""

    epochs: int
    losses: list[float]
    accuracies: list[float]

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else 0.0


def train_sgd(net: Network, data, epochs: int, lr: float, momentum: float = 0.9,
              weight_decay: float = 5e-4, seed: int = 0,
              batch_size: int = 120) -> TrainLog:
    """Train in place with mini-batch SGD plus Nesterov momentum.

    Shuffling, and therefore the whole run, is deterministic in
    ``seed``. A non-finite loss raises TrainingDivergedError naming the
    epoch. ``momentum=0`` reduces to plain SGD; ``lr=0`` leaves the
    parameters untouched.
    """
    if epochs < 0 or lr < 0 or momentum < 0 or weight_decay < 0:
        raise ValidationError("epochs, lr, momentum, weight_decay must be >= 0")
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    X = _check_batch(net, data.inputs)
    labels = np.asarray(data.labels)
    if labels.shape != (X.shape[0],):
        raise DimensionError("labels must be one per input row")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= net.num_classes:
        raise ValidationError("labels out of range for this network")
    targets = np.zeros((X.shape[0], net.num_classes))
    targets[np.arange(X.shape[0]), labels] = 1.0
    rng = np.random.default_rng(seed)
    velocity = {g: (np.zeros_like(W), np.zeros_like(b))
                for g, (W, b) in ((g, net.group_params(g)) for g in net.groups)}
    log = TrainLog(epochs=epochs, losses=[], accuracies=[])
    N = X.shape[0]
    for epoch in range(epochs):
        perm = rng.permutation(N)
        total_loss = 0.0
        for start in range(0, N, batch_size):
            idx = perm[start:start + batch_size]
            loss, _, grads = _mean_loss_gradients(net, X[idx], targets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            total_loss += loss * idx.size
            for g in net.groups:
                W, b = net.group_params(g)
                gW, gb = grads[g]
                gW = gW + weight_decay * W
                gb = gb + weight_decay * b
                vW, vb = velocity[g]
                vW[:] = momentum * vW + gW
                vb[:] = momentum * vb + gb
                W -= lr * (gW + momentum * vW)
                b -= lr * (gb + momentum * vb)
        logits, _ = forward_batch(net, X)
        acc = float(np.mean(np.argmax(logits, axis=1) == labels))
        log.losses.append(total_loss / N)
        log.accuracies.append(acc)
    return log


def save_checkpoint(net: Network, path) -> None:
    """Write the net to ``path``: magic, JSON layer header, float64 LE blob."""
    header = {
        "num_classes": net.num_classes,
        "layers": [
            {"kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim, "group": l.group}
            for l in net.layers
        ],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = net.flat_params().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        blob = fh.read()
    layers = [LayerSpec(d["kind"], d["in_dim"], d["out_dim"], d["group"])
              for d in header["layers"]]
    n_params = sum(l.out_dim * l.in_dim + l.out_dim for l in layers if l.kind == DENSE)
    flat = np.frombuffer(blob, dtype="<f8")
    if flat.size != n_params:
        raise FormatError("checkpoint parameter blob has wrong length")
    params = {}
    off = 0
    for l in layers:
        if l.kind != DENSE:
            continue
        nW = l.out_dim * l.in_dim
        W = flat[off:off + nW].reshape(l.out_dim, l.in_dim)
        b = flat[off + nW:off + nW + l.out_dim]
        params[l.group] = (np.array(W), np.array(b))
        off += nW + l.out_dim
    return Network(layers, params)
