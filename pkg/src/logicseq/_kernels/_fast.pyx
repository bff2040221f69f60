# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: mixture-layer forward/backward and packed Boolean eval.

Signatures mirror logicseq._kernels.numpy_backend; see that module for the
corner-coefficient formulation the two backends share.
"""

import numpy as np

cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def layer_forward(floating[:, ::1] x,
                  const cnp.uint32_t[::1] conn_a,
                  const cnp.uint32_t[::1] conn_b,
                  floating[:, ::1] coeff):
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t width = conn_a.shape[0]
    if floating is double:
        out_np = np.empty((batch, width), dtype=np.float64)
    else:
        out_np = np.empty((batch, width), dtype=np.float32)
    cdef floating[:, ::1] y = out_np
    cdef Py_ssize_t i, j
    cdef floating a, b, v
    for i in range(batch):
        for j in range(width):
            a = x[i, conn_a[j]]
            b = x[i, conn_b[j]]
            v = (coeff[j, 0] * (1 - a) * (1 - b)
                 + coeff[j, 1] * (1 - a) * b
                 + coeff[j, 2] * a * (1 - b)
                 + coeff[j, 3] * a * b)
            if v < 0:
                v = 0
            elif v > 1:
                v = 1
            y[i, j] = v
    return out_np


def layer_backward(floating[:, ::1] x,
                   const cnp.uint32_t[::1] conn_a,
                   const cnp.uint32_t[::1] conn_b,
                   floating[:, ::1] coeff,
                   floating[:, ::1] grad_y):
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t in_dim = x.shape[1]
    cdef Py_ssize_t width = conn_a.shape[0]
    if floating is double:
        gx_np = np.zeros((batch, in_dim), dtype=np.float64)
        corner_np = np.zeros((width, 4), dtype=np.float64)
    else:
        gx_np = np.zeros((batch, in_dim), dtype=np.float32)
        corner_np = np.zeros((width, 4), dtype=np.float32)
    cdef floating[:, ::1] gx = gx_np
    cdef floating[:, ::1] corner = corner_np
    cdef Py_ssize_t i, j
    cdef cnp.uint32_t ca, cb
    cdef floating a, b, na, nb, g, dyda, dydb
    for i in range(batch):
        for j in range(width):
            ca = conn_a[j]
            cb = conn_b[j]
            a = x[i, ca]
            b = x[i, cb]
            na = 1 - a
            nb = 1 - b
            g = grad_y[i, j]
            corner[j, 0] += g * na * nb
            corner[j, 1] += g * na * b
            corner[j, 2] += g * a * nb
            corner[j, 3] += g * a * b
            dyda = (coeff[j, 2] - coeff[j, 0]) * nb + (coeff[j, 3] - coeff[j, 1]) * b
            dydb = (coeff[j, 1] - coeff[j, 0]) * na + (coeff[j, 3] - coeff[j, 2]) * a
            gx[i, ca] += g * dyda
            gx[i, cb] += g * dydb
    return gx_np, corner_np


def packed_eval(const cnp.uint64_t[:, ::1] words,
                const cnp.uint32_t[::1] conn_a,
                const cnp.uint32_t[::1] conn_b,
                const cnp.uint8_t[::1] gate_tables,
                const cnp.uint64_t[::1] lane_mask):
    cdef Py_ssize_t width = conn_a.shape[0]
    cdef Py_ssize_t nw = words.shape[1]
    out_np = np.empty((width, nw), dtype=np.uint64)
    cdef cnp.uint64_t[:, ::1] out = out_np
    cdef Py_ssize_t j, q
    cdef cnp.uint64_t a, b, r
    cdef unsigned int t
    for j in range(width):
        t = gate_tables[j]
        for q in range(nw):
            a = words[conn_a[j], q]
            b = words[conn_b[j], q]
            r = 0
            if t & 1:
                r |= (~a) & (~b)
            if t & 2:
                r |= (~a) & b
            if t & 4:
                r |= a & (~b)
            if t & 8:
                r |= a & b
            out[j, q] = r & lane_mask[q]
    return out_np
