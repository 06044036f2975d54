"""Pure numpy implementations of the hot kernels.

Same signatures and in-place semantics as the compiled ``_kernels`` module.
"""

import numpy as np


def _normalize_rows(W, rows, epsilon):
    for q in rows:
        row = W[q] - W[q].mean()
        W[q] = row / max(float(np.sqrt(np.dot(row, row))), epsilon)


def _maybe_normalize(W, dirty, step, normalize_every, epsilon, *more):
    if normalize_every > 0 and step % normalize_every == 0:
        rows = np.flatnonzero(dirty)
        for M in (W,) + more:
            _normalize_rows(M, rows, epsilon)
        dirty[:] = 0


def skmeans_seq_epoch(W, X, order, eta, normalize_every, step, epsilon, losses, wins, dirty):
    """One online pass of the tied-sequence rule over ``X[order]``; returns the new step count."""
    for i, idx in enumerate(order):
        x = X[idx]
        r = W @ x
        s = int(np.argmax(r * r))
        c = r[s]
        resid = x - W[s] * c
        losses[i] = np.dot(resid, resid)
        if eta != 0.0:
            W[s] += eta * (x * c - W[s] * (c * c))
            dirty[s] = 1
        wins[s] += 1
        step += 1
        _maybe_normalize(W, dirty, step, normalize_every, epsilon)
    return step


def skmeans_pair_epoch(Wx, Wy, X, Y, order, eta, normalize_every, step, epsilon, losses, wins, dirty):
    """One online pass of the two-frame rule; both rows move from pre-update weights."""
    for i, idx in enumerate(order):
        x = X[idx]
        y = Y[idx]
        rx = Wx @ x
        ry = Wy @ y
        s = int(np.argmax(rx * ry))
        a = rx[s]
        b = ry[s]
        ex = x - Wx[s] * b
        ey = y - Wy[s] * a
        losses[i] = np.dot(ex, ex) + np.dot(ey, ey)
        if eta != 0.0:
            Wx[s] += eta * (x * b - Wx[s] * (b * b))
            Wy[s] += eta * (y * a - Wy[s] * (a * a))
            dirty[s] = 1
        wins[s] += 1
        step += 1
        _maybe_normalize(Wx, dirty, step, normalize_every, epsilon, Wy)
    return step


def kmeans_online_epoch(W, X, order, eta, losses, wins):
    """Competitive learning: winner by squared distance moves toward the sample."""
    for i, idx in enumerate(order):
        x = X[idx]
        diff = W - x
        d2 = np.einsum("ij,ij->i", diff, diff, dtype=np.float64)
        s = int(np.argmin(d2))
        losses[i] = d2[s]
        if eta != 0.0:
            W[s] += eta * (x - W[s])
        wins[s] += 1


def nearest_centroid(X, C, chunk=256):
    """Index of, and squared distance to, the nearest row of `C` for each row of `X`."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n = X.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    step = max(1, chunk * 64 // max(C.shape[0], 1))
    for i in range(0, n, step):
        block = X[i:i + step]
        diff = block[:, None, :] - C[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        j = np.argmin(d2, axis=1)
        idx[i:i + step] = j
        dist[i:i + step] = d2[np.arange(len(j)), j]
    return idx, dist


def chi2_matrix(A, B, epsilon):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    out = np.empty((A.shape[0], B.shape[0]))
    for i, a in enumerate(A):
        num = (a - B) ** 2
        out[i] = 0.5 * (num / (a + B + epsilon)).sum(axis=1)
    return out
