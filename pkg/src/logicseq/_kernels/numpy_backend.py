"""Vectorised numpy implementations of the hot kernels.

These are the fallback when the compiled extension is unavailable and the
reference the compiled kernels are tested against.  All three kernels
exploit the fact that every relaxed gate is multilinear: a softmax mixture
of the 16 gates collapses to four per-neuron corner coefficients
c = p @ T (T the 16x4 truth-table matrix), after which a neuron output is
the bilinear interpolation

    y = c00 (1-a)(1-b) + c01 (1-a) b + c10 a (1-b) + c11 a b.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def layer_forward(x, conn_a, conn_b, coeff):
    """Mixture forward pass.

    x:      (batch, in_dim) activations in [0, 1]
    conn_a: (width,) first-input indices
    conn_b: (width,) second-input indices
    coeff:  (width, 4) corner coefficients
    returns (batch, width) outputs, clipped into [0, 1]
    """
    a = x[:, conn_a]
    b = x[:, conn_b]
    na = 1.0 - a
    nb = 1.0 - b
    y = coeff[:, 0] * (na * nb) + coeff[:, 1] * (na * b)
    y += coeff[:, 2] * (a * nb) + coeff[:, 3] * (a * b)
    # guard against |eps|-sized overshoot from reassociation
    np.clip(y, 0.0, 1.0, out=y)
    return y


def layer_backward(x, conn_a, conn_b, coeff, grad_y):
    """Reverse pass of layer_forward.

    Returns (grad_x, corner) where grad_x is (batch, in_dim) with
    contributions scatter-added over shared inputs, and corner is the
    (width, 4) batch contraction sum_i grad_y[i,j] * u[i,j,:] of the four
    corner products u = [(1-a)(1-b), (1-a)b, a(1-b), ab] needed for the
    gate-logit gradient.
    """
    batch, in_dim = x.shape
    a = x[:, conn_a]
    b = x[:, conn_b]
    na = 1.0 - a
    nb = 1.0 - b

    corner = np.empty((conn_a.shape[0], 4), dtype=x.dtype)
    corner[:, 0] = np.einsum("ij,ij->j", grad_y, na * nb)
    corner[:, 1] = np.einsum("ij,ij->j", grad_y, na * b)
    corner[:, 2] = np.einsum("ij,ij->j", grad_y, a * nb)
    corner[:, 3] = np.einsum("ij,ij->j", grad_y, a * b)

    dyda = (coeff[:, 2] - coeff[:, 0]) * nb + (coeff[:, 3] - coeff[:, 1]) * b
    dydb = (coeff[:, 1] - coeff[:, 0]) * na + (coeff[:, 3] - coeff[:, 2]) * a

    ga = (grad_y * dyda).ravel()
    gb = (grad_y * dydb).ravel()
    row = np.arange(batch, dtype=np.int64)[:, None] * in_dim
    idx_a = (conn_a[None, :].astype(np.int64) + row).ravel()
    idx_b = (conn_b[None, :].astype(np.int64) + row).ravel()
    flat = np.bincount(idx_a, weights=ga, minlength=batch * in_dim)
    flat += np.bincount(idx_b, weights=gb, minlength=batch * in_dim)
    return flat.reshape(batch, in_dim).astype(x.dtype, copy=False), corner


def packed_eval(words, conn_a, conn_b, gate_tables, lane_mask):
    """Word-parallel discrete layer evaluation.

    words:       (in_dim, n_words) uint64, lane i of every row is sample i
    gate_tables: (width,) uint8 truth-table index per neuron
    lane_mask:   (n_words,) uint64 with valid-lane bits set
    returns      (width, n_words) uint64
    """
    a = words[conn_a]
    b = words[conn_b]
    na = ~a
    nb = ~b
    full = np.uint64(0xFFFFFFFFFFFFFFFF)
    zero = np.uint64(0)
    t = gate_tables[:, None]
    out = np.where(t & 1, full, zero) & (na & nb)
    out |= np.where(t & 2, full, zero) & (na & b)
    out |= np.where(t & 4, full, zero) & (a & nb)
    out |= np.where(t & 8, full, zero) & (a & b)
    out &= lane_mask
    return out
