# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the window CNN and the tree ensemble.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and the same output, bit for bit on float64 input.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col3x3(real[:, :, :, ::1] x):
    """(N, C, H, W) -> (N*H*W, C*9) patch matrix, zero padding of one."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n * h * w, c * 9), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, di, dj, ii, jj, row, col
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    row = (b * h + i) * w + j
                    for ch in range(c):
                        col = ch * 9
                        for di in range(3):
                            ii = i + di - 1
                            if ii < 0 or ii >= h:
                                continue
                            for dj in range(3):
                                jj = j + dj - 1
                                if jj < 0 or jj >= w:
                                    continue
                                out[row, col + di * 3 + dj] = x[b, ch, ii, jj]
    return out_arr


def col2im3x3(real[:, ::1] cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w):
    """Adjoint of ``im2col3x3``: scatter-add patch gradients back to (N, C, H, W)."""
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, di, dj, ii, jj, row, col
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    row = (b * h + i) * w + j
                    for ch in range(c):
                        col = ch * 9
                        for di in range(3):
                            ii = i + di - 1
                            if ii < 0 or ii >= h:
                                continue
                            for dj in range(3):
                                jj = j + dj - 1
                                if jj < 0 or jj >= w:
                                    continue
                                out[b, ch, ii, jj] += cols[row, col + di * 3 + dj]
    return out_arr


def maxpool2_forward(real[:, :, :, ::1] x):
    """2x2 max pooling, stride 2, ceil mode. Returns (out, argmax flat index into x)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 1) // 2, wo = (w + 1) // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, i, j, ii, jj, best_i, best_j
    cdef real best
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = -INFINITY
                        best_i = 2 * i
                        best_j = 2 * j
                        for ii in range(2 * i, min(2 * i + 2, h)):
                            for jj in range(2 * j, min(2 * j + 2, w)):
                                if x[b, ch, ii, jj] > best:
                                    best = x[b, ch, ii, jj]
                                    best_i = ii
                                    best_j = jj
                        out[b, ch, i, j] = best
                        idx[b, ch, i, j] = ((b * c + ch) * h + best_i) * w + best_j
    return out_arr, idx_arr


def maxpool2_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] idx, shape):
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros(int(np.prod(shape)), dtype=dtype)
    cdef real[::1] dx = dx_arr
    cdef Py_ssize_t b, ch, i, j
    with nogil:
        for b in range(dout.shape[0]):
            for ch in range(dout.shape[1]):
                for i in range(dout.shape[2]):
                    for j in range(dout.shape[3]):
                        dx[idx[b, ch, i, j]] += dout[b, ch, i, j]
    return dx_arr.reshape(shape)


def best_gini_split(double[::1] xs, cnp.int64_t[::1] ys, Py_ssize_t n_classes):
    """Best threshold on one pre-sorted feature column.

    Returns (position, weighted child impurity); the split puts xs[:position]
    left. position == 0 means no valid split (constant column).
    """
    cdef Py_ssize_t n = xs.shape[0], i, k
    left_arr = np.zeros(n_classes, dtype=np.float64)
    right_arr = np.zeros(n_classes, dtype=np.float64)
    cdef double[::1] left = left_arr
    cdef double[::1] right = right_arr
    cdef double sl, sr, gl, gr, score
    cdef double best = INFINITY
    cdef Py_ssize_t best_pos = 0
    for i in range(n):
        right[ys[i]] += 1.0
    with nogil:
        for i in range(1, n):
            left[ys[i - 1]] += 1.0
            right[ys[i - 1]] -= 1.0
            if xs[i] == xs[i - 1]:
                continue
            sl = 0.0
            sr = 0.0
            for k in range(n_classes):
                sl = sl + left[k] * left[k]
                sr = sr + right[k] * right[k]
            gl = i - sl / i
            gr = (n - i) - sr / (n - i)
            score = (gl + gr) / n
            if score < best:
                best = score
                best_pos = i
    return best_pos, best
