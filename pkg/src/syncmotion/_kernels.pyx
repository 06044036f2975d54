# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops for online SK-means / K-means and histogram distances."""

from cython cimport floating
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport sgemv, dgemv

import numpy as np


cdef inline void _matvec(floating[:, ::1] W, floating[::1] x, floating[::1] out) noexcept nogil:
    # row-major (Q, D) is column-major (D, Q): out = A^T x
    cdef char trans = b'T'
    cdef int m = W.shape[1]
    cdef int n = W.shape[0]
    cdef int inc = 1
    cdef floating one = 1.0
    cdef floating zero = 0.0
    if floating is float:
        sgemv(&trans, &m, &n, &one, &W[0, 0], &m, &x[0], &inc, &zero, &out[0], &inc)
    else:
        dgemv(&trans, &m, &n, &one, &W[0, 0], &m, &x[0], &inc, &zero, &out[0], &inc)


cdef void _normalize_dirty(floating[:, ::1] W, unsigned char[::1] dirty, double epsilon) noexcept nogil:
    cdef Py_ssize_t q, j
    cdef Py_ssize_t D = W.shape[1]
    cdef double mean, ss, scale
    for q in range(W.shape[0]):
        if not dirty[q]:
            continue
        mean = 0.0
        for j in range(D):
            mean += W[q, j]
        mean /= D
        ss = 0.0
        for j in range(D):
            W[q, j] = <floating>(W[q, j] - mean)
            ss += W[q, j] * W[q, j]
        scale = sqrt(ss)
        if scale < epsilon:
            scale = epsilon
        for j in range(D):
            W[q, j] = <floating>(W[q, j] / scale)


def skmeans_seq_epoch(floating[:, ::1] W, floating[:, ::1] X, long long[::1] order,
                      double eta, long long normalize_every, long long step, double epsilon,
                      double[::1] losses, long long[::1] wins, unsigned char[::1] dirty):
    cdef Py_ssize_t Q = W.shape[0], D = W.shape[1]
    cdef Py_ssize_t i, j, q, s
    cdef floating[::1] r = np.empty(Q, dtype=np.asarray(W).dtype)
    cdef floating c, cc, e
    cdef double best, v, loss
    with nogil:
        for i in range(order.shape[0]):
            _matvec(W, X[order[i]], r)
            s = 0
            best = r[0] * r[0]
            for q in range(1, Q):
                v = r[q] * r[q]
                if v > best:
                    best = v
                    s = q
            c = r[s]
            cc = c * c
            loss = 0.0
            for j in range(D):
                e = X[order[i], j] - W[s, j] * c
                loss += e * e
            losses[i] = loss
            if eta != 0.0:
                for j in range(D):
                    W[s, j] = <floating>(W[s, j] + eta * (X[order[i], j] * c - W[s, j] * cc))
                dirty[s] = 1
            wins[s] += 1
            step += 1
            if normalize_every > 0 and step % normalize_every == 0:
                _normalize_dirty(W, dirty, epsilon)
                for q in range(Q):
                    dirty[q] = 0
    return step


def skmeans_pair_epoch(floating[:, ::1] Wx, floating[:, ::1] Wy, floating[:, ::1] X, floating[:, ::1] Y,
                       long long[::1] order, double eta, long long normalize_every, long long step,
                       double epsilon, double[::1] losses, long long[::1] wins, unsigned char[::1] dirty):
    cdef Py_ssize_t Q = Wx.shape[0], D = Wx.shape[1]
    cdef Py_ssize_t i, j, q, s, idx
    dt = np.asarray(Wx).dtype
    cdef floating[::1] rx = np.empty(Q, dtype=dt)
    cdef floating[::1] ry = np.empty(Q, dtype=dt)
    cdef floating a, b, e
    cdef double best, v, loss
    with nogil:
        for i in range(order.shape[0]):
            idx = order[i]
            _matvec(Wx, X[idx], rx)
            _matvec(Wy, Y[idx], ry)
            s = 0
            best = rx[0] * ry[0]
            for q in range(1, Q):
                v = rx[q] * ry[q]
                if v > best:
                    best = v
                    s = q
            a = rx[s]
            b = ry[s]
            loss = 0.0
            for j in range(D):
                e = X[idx, j] - Wx[s, j] * b
                loss += e * e
                e = Y[idx, j] - Wy[s, j] * a
                loss += e * e
            losses[i] = loss
            if eta != 0.0:
                for j in range(D):
                    Wx[s, j] = <floating>(Wx[s, j] + eta * (X[idx, j] * b - Wx[s, j] * (b * b)))
                    Wy[s, j] = <floating>(Wy[s, j] + eta * (Y[idx, j] * a - Wy[s, j] * (a * a)))
                dirty[s] = 1
            wins[s] += 1
            step += 1
            if normalize_every > 0 and step % normalize_every == 0:
                _normalize_dirty(Wx, dirty, epsilon)
                _normalize_dirty(Wy, dirty, epsilon)
                for q in range(Q):
                    dirty[q] = 0
    return step


def kmeans_online_epoch(floating[:, ::1] W, floating[:, ::1] X, long long[::1] order, double eta,
                        double[::1] losses, long long[::1] wins):
    cdef Py_ssize_t Q = W.shape[0], D = W.shape[1]
    cdef Py_ssize_t i, j, q, s, idx
    cdef double best, d2, e
    with nogil:
        for i in range(order.shape[0]):
            idx = order[i]
            s = 0
            best = -1.0
            for q in range(Q):
                d2 = 0.0
                for j in range(D):
                    e = <double>X[idx, j] - <double>W[q, j]
                    d2 += e * e
                    # partial sums only grow: this unit can no longer win
                    if best >= 0.0 and d2 >= best:
                        break
                if best < 0.0 or d2 < best:
                    best = d2
                    s = q
            losses[i] = best
            if eta != 0.0:
                for j in range(D):
                    W[s, j] = <floating>(W[s, j] + eta * (X[idx, j] - W[s, j]))
            wins[s] += 1


def nearest_centroid(X, C, chunk=None):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], K = Cv.shape[0], D = Xv.shape[1]
    idx_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, k, j, s
    cdef double best, d2, e
    with nogil:
        for i in range(n):
            s = 0
            best = -1.0
            for k in range(K):
                d2 = 0.0
                for j in range(D):
                    e = Xv[i, j] - Cv[k, j]
                    d2 += e * e
                    if best >= 0.0 and d2 >= best:
                        break
                if best < 0.0 or d2 < best:
                    best = d2
                    s = k
            idx[i] = s
            dist[i] = best
    return idx_arr, dist_arr


def chi2_matrix(A, B, double epsilon):
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = Av.shape[0], m = Bv.shape[0], K = Av.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, d
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(K):
                    d = Av[i, k] - Bv[j, k]
                    acc += d * d / (Av[i, k] + Bv[j, k] + epsilon)
                out[i, j] = 0.5 * acc
    return out_arr
