"""Hot-loop kernels, compiled when available.

The Cython extension ``_kernels`` is preferred; if it was not built, the
numpy implementations in ``_fallback`` are used. Both share one contract.
"""

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python") if _compiled is not None else ("python",)

_impl = _compiled if _compiled is not None else _fallback
BACKEND = BACKENDS[0]


def use_backend(name):
    """Switch the active backend ('compiled' or 'python'); returns the previous name."""
    global _impl, BACKEND
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; choose from {BACKENDS}")
    previous = BACKEND
    _impl = _compiled if name == "compiled" else _fallback
    BACKEND = name
    return previous


def _contig(a, dtype):
    if not (a.flags.c_contiguous and a.dtype == dtype):
        raise ValueError("kernel arrays must be C-contiguous and share one float dtype")
    return a


def skmeans_seq_epoch(W, X, order, eta, normalize_every, step, epsilon, losses, wins, dirty):
    _contig(W, W.dtype)
    _contig(X, W.dtype)
    return _impl.skmeans_seq_epoch(W, X, np.ascontiguousarray(order, dtype=np.int64), float(eta),
                                   int(normalize_every), int(step), float(epsilon), losses, wins, dirty)


def skmeans_pair_epoch(Wx, Wy, X, Y, order, eta, normalize_every, step, epsilon, losses, wins, dirty):
    for a in (Wy, X, Y):
        _contig(a, Wx.dtype)
    _contig(Wx, Wx.dtype)
    return _impl.skmeans_pair_epoch(Wx, Wy, X, Y, np.ascontiguousarray(order, dtype=np.int64),
                                    float(eta), int(normalize_every), int(step), float(epsilon),
                                    losses, wins, dirty)


def kmeans_online_epoch(W, X, order, eta, losses, wins):
    _contig(W, W.dtype)
    _contig(X, W.dtype)
    _impl.kmeans_online_epoch(W, X, np.ascontiguousarray(order, dtype=np.int64), float(eta), losses, wins)


def nearest_centroid(X, C):
    X = np.atleast_2d(np.asarray(X))
    C = np.atleast_2d(np.asarray(C))
    if X.shape[1] != C.shape[1]:
        raise ValueError(f"dimension mismatch: samples {X.shape[1]}, centroids {C.shape[1]}")
    return _impl.nearest_centroid(X, C)


def chi2_matrix(A, B, epsilon=1e-10):
    A = np.atleast_2d(np.asarray(A))
    B = np.atleast_2d(np.asarray(B))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"histogram length mismatch: {A.shape[1]} vs {B.shape[1]}")
    return _impl.chi2_matrix(A, B, float(epsilon))
