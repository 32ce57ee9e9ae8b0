"""Hot numerical kernels, in numba and pure-numpy form.

The network is packed into flat arrays (see nn._pack): op_kind lists the
layer ops in order (0 dense, 1 relu, 2 tanh), op_slot maps dense ops to
rows of the padded W/b arrays, dims holds (out_dim, in_dim) per dense
slot, offsets the start of each dense group in the flat parameter vector
(weights row-major, then bias).

grad_batch computes per-sample flat gradients of seed . logits, one row
per sample. kahan_add streams rows into a compensated (Kahan) sum. Both
exist twice with identical semantics; _accel picks the default.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import NUMBA_AVAILABLE, USE_NUMBA

OP_DENSE = 0
OP_RELU = 1
OP_TANH = 2


def grad_batch_numpy(X, seeds, op_kind, op_slot, W, b, dims, offsets, n_params, max_w):
    B = X.shape[0]
    n_ops = op_kind.shape[0]
    acts = [X]
    a = X
    for t in range(n_ops):
        k = op_kind[t]
        if k == OP_DENSE:
            sl = op_slot[t]
            o, i = dims[sl]
            a = a @ W[sl, :o, :i].T + b[sl, :o]
        elif k == OP_RELU:
            a = np.maximum(a, 0.0)
        else:
            a = np.tanh(a)
        acts.append(a)
    out = np.zeros((B, n_params))
    delta = np.array(seeds, dtype=np.float64, copy=True)
    for t in range(n_ops - 1, -1, -1):
        k = op_kind[t]
        a_in = acts[t]
        if k == OP_DENSE:
            sl = op_slot[t]
            o, i = dims[sl]
            off = offsets[sl]
            gw = np.einsum("bo,bi->boi", delta, a_in)
            out[:, off:off + o * i] = gw.reshape(B, o * i)
            out[:, off + o * i:off + o * i + o] = delta
            delta = delta @ W[sl, :o, :i]
        elif k == OP_RELU:
            # subgradient 0 at exactly 0, matching the jit path
            delta = delta * (a_in > 0.0)
        else:
            delta = delta * (1.0 - np.tanh(a_in) ** 2)
    return out


def kahan_add_numpy(total, comp, rows):
    for r in range(rows.shape[0]):
        y = rows[r] - comp
        t = total + y
        comp[:] = (t - total) - y
        total[:] = t


if NUMBA_AVAILABLE:
    from numba import njit

    @njit(cache=True)
    def grad_batch_numba(X, seeds, op_kind, op_slot, W, b, dims, offsets, n_params, max_w):
        B = X.shape[0]
        n_ops = op_kind.shape[0]
        out = np.zeros((B, n_params))
        acts = np.empty((n_ops + 1, max_w))
        widths = np.empty(n_ops + 1, np.int64)
        delta = np.empty(max_w)
        scratch = np.empty(max_w)
        for s in range(B):
            d_in = X.shape[1]
            widths[0] = d_in
            for j in range(d_in):
                acts[0, j] = X[s, j]
            for t in range(n_ops):
                k = op_kind[t]
                win = widths[t]
                if k == OP_DENSE:
                    sl = op_slot[t]
                    o = dims[sl, 0]
                    i = dims[sl, 1]
                    for r in range(o):
                        acc = b[sl, r]
                        for c in range(i):
                            acc += W[sl, r, c] * acts[t, c]
                        acts[t + 1, r] = acc
                    widths[t + 1] = o
                elif k == OP_RELU:
                    for j in range(win):
                        v = acts[t, j]
                        acts[t + 1, j] = v if v > 0.0 else 0.0
                    widths[t + 1] = win
                else:
                    for j in range(win):
                        acts[t + 1, j] = math.tanh(acts[t, j])
                    widths[t + 1] = win
            w_last = widths[n_ops]
            for j in range(w_last):
                delta[j] = seeds[s, j]
            for t in range(n_ops - 1, -1, -1):
                k = op_kind[t]
                win = widths[t]
                if k == OP_DENSE:
                    sl = op_slot[t]
                    o = dims[sl, 0]
                    i = dims[sl, 1]
                    off = offsets[sl]
                    for r in range(o):
                        dr = delta[r]
                        base = off + r * i
                        for c in range(i):
                            out[s, base + c] = dr * acts[t, c]
                    boff = off + o * i
                    for r in range(o):
                        out[s, boff + r] = delta[r]
                    for c in range(i):
                        acc = 0.0
                        for r in range(o):
                            acc += W[sl, r, c] * delta[r]
                        scratch[c] = acc
                    for c in range(i):
                        delta[c] = scratch[c]
                elif k == OP_RELU:
                    for j in range(win):
                        if acts[t, j] <= 0.0:
                            delta[j] = 0.0
                else:
                    for j in range(win):
                        th = math.tanh(acts[t, j])
                        delta[j] = delta[j] * (1.0 - th * th)
        return out

    @njit(cache=True)
    def kahan_add_numba(total, comp, rows):
        n, d = rows.shape
        for r in range(n):
            for j in range(d):
                y = rows[r, j] - comp[j]
                t = total[j] + y
                comp[j] = (t - total[j]) - y
                total[j] = t


if USE_NUMBA:
    grad_batch = grad_batch_numba
    kahan_add = kahan_add_numba
else:
    grad_batch = grad_batch_numpy
    kahan_add = kahan_add_numpy
