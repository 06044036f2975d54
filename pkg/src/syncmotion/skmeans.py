"""Synchrony K-means and the standard online K-means baseline.

Pair mode keeps two filter banks ``Wx, Wy`` (Q, N) and assigns a frame pair to
``argmax_q (Wx_q.x)(Wy_q.y)``. Sequence mode ties them into one bank ``W``
over concatenated frames and assigns by ``argmax_q (W_q.X)**2``. Training is
winner-take-all; inference uses ``sigmoid(response products)``.
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from . import kernels
from .data import PatchDataset, WhiteningTransform, contrast_normalize


class ModelError(ValueError):
    pass


def sigmoid(z):
    z = np.asarray(z)
    # split by sign so neither branch overflows
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SkMeansModel:
    mode: str  # "pair" | "sequence"
    W: Optional[np.ndarray] = None
    Wx: Optional[np.ndarray] = None
    Wy: Optional[np.ndarray] = None
    frame_dims: Optional[Tuple[int, int, int]] = None

    kind = "skmeans"

    def __post_init__(self):
        if self.mode == "sequence":
            if self.W is None or self.W.ndim != 2:
                raise ModelError("sequence mode needs a (Q, N) matrix W")
            mats = [self.W]
        elif self.mode == "pair":
            if self.Wx is None or self.Wy is None or self.Wx.shape != self.Wy.shape or self.Wx.ndim != 2:
                raise ModelError("pair mode needs two (Q, N) matrices of equal shape")
            mats = [self.Wx, self.Wy]
        else:
            raise ModelError(f"unknown mode {self.mode!r}")
        for M in mats:
            if M.shape[0] < 1:
                raise ModelError("need at least one unit")
            if not np.all(np.isfinite(M)):
                raise ModelError("weights must be finite")
        if self.frame_dims is not None:
            self.frame_dims = tuple(int(d) for d in self.frame_dims)

    @property
    def units(self):
        return (self.W if self.mode == "sequence" else self.Wx).shape[0]

    @property
    def input_dims(self):
        return (self.W if self.mode == "sequence" else self.Wx).shape[1]

    def weights(self):
        return {"W": self.W} if self.mode == "sequence" else {"Wx": self.Wx, "Wy": self.Wy}

    def copy(self):
        return replace(self, **{k: v.copy() for k, v in self.weights().items()})

    def hiddens(self, X):
        """Sigmoid-of-square hiddens for a batch of whitened sequences ``(n, N)``."""
        if self.mode != "sequence":
            raise ModelError("batch hiddens on flattened sequences need a sequence-mode model")
        F = np.asarray(X) @ self.W.T
        return sigmoid(F * F)


def init_model(mode, units, input_dims, seed, frame_dims=None, dtype=np.float64, epsilon=1e-8):
    """Rows drawn from a seeded unit Gaussian, then contrast-normalized."""
    rng = np.random.default_rng(seed)

    def bank():
        return contrast_normalize(rng.standard_normal((units, input_dims)), epsilon).astype(dtype)

    if mode == "sequence":
        return SkMeansModel("sequence", W=bank(), frame_dims=frame_dims)
    return SkMeansModel("pair", Wx=bank(), Wy=bank(), frame_dims=frame_dims)


def _vec(v, n):
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != n:
        raise ModelError(f"expected a vector of length {n}, got shape {v.shape}")
    return v


def _require(m, mode):
    if m.mode != mode:
        raise ModelError(f"operation needs a {mode}-mode model, got {m.mode}")


def assign_pair(m, x, y):
    _require(m, "pair")
    x = _vec(x, m.input_dims)
    y = _vec(y, m.input_dims)
    return int(np.argmax((m.Wx @ x) * (m.Wy @ y)))


def assign_seq(m, X):
    _require(m, "sequence")
    r = m.W @ _vec(X, m.input_dims)
    return int(np.argmax(r * r))


def _check_unit(m, s):
    if not 0 <= s < m.units:
        raise ModelError(f"unit index {s} out of range [0, {m.units})")


def loss_pair(m, s, x, y, which="x"):
    """Gated reconstruction loss ``||x - Wx_s (Wy_s.y)||**2`` (`which` = 'x', 'y' or 'both')."""
    _require(m, "pair")
    _check_unit(m, s)
    x = _vec(x, m.input_dims)
    y = _vec(y, m.input_dims)
    lx = ly = 0.0
    if which in ("x", "both"):
        e = x - m.Wx[s] * (m.Wy[s] @ y)
        lx = float(e @ e)
    if which in ("y", "both"):
        e = y - m.Wy[s] * (m.Wx[s] @ x)
        ly = float(e @ e)
    if which not in ("x", "y", "both"):
        raise ValueError("which must be 'x', 'y' or 'both'")
    return lx + ly


def loss_seq(m, s, X):
    _require(m, "sequence")
    _check_unit(m, s)
    X = _vec(X, m.input_dims)
    e = X - m.W[s] * (m.W[s] @ X)
    return float(e @ e)


def pair_deltas(m, s, x, y, eta):
    """Row updates for unit `s`: Hebbian gated term minus active forgetting."""
    b = m.Wy[s] @ y
    a = m.Wx[s] @ x
    dx = eta * (x * b - m.Wx[s] * (b * b))
    dy = eta * (y * a - m.Wy[s] * (a * a))
    return dx, dy


def _finite(*vs):
    for v in vs:
        if not np.all(np.isfinite(v)):
            raise ModelError("non-finite input")


def update_pair(m, x, y, eta):
    """One online step; returns ``(new model, s, L_x + L_y before the update)``."""
    _require(m, "pair")
    x = _vec(x, m.input_dims)
    y = _vec(y, m.input_dims)
    _finite(x, y)
    s = assign_pair(m, x, y)
    loss = loss_pair(m, s, x, y, "both")
    dx, dy = pair_deltas(m, s, x, y, eta)
    out = m.copy()
    out.Wx[s] += dx
    out.Wy[s] += dy
    return out, s, loss


def update_seq(m, X, eta):
    _require(m, "sequence")
    X = _vec(X, m.input_dims)
    _finite(X)
    s = assign_seq(m, X)
    r = m.W[s] @ X
    out = m.copy()
    out.W[s] += eta * (X * r - m.W[s] * (r * r))
    return out, s


def infer(m, X, y=None):
    """Hiddens: ``sigmoid((W_q.X)**2)`` in sequence mode, ``sigmoid((Wx_q.x)(Wy_q.y))`` for pairs."""
    if m.mode == "sequence":
        r = m.W @ _vec(X, m.input_dims)
        return sigmoid(r * r)
    if y is None:
        raise ModelError("pair-mode inference needs both frames")
    return sigmoid((m.Wx @ _vec(X, m.input_dims)) * (m.Wy @ _vec(y, m.input_dims)))


def standard_kmeans_update(centroids, x, eta):
    """Online competitive learning step; returns a new centroid matrix."""
    C = np.array(centroids, dtype=np.result_type(centroids, np.float64), copy=True)
    d2 = ((C - x) ** 2).sum(axis=1)
    s = int(np.argmin(d2))
    C[s] += eta * (np.asarray(x) - C[s])
    return C


@dataclass
class TrainConfig:
    eta: float = 0.01
    epochs: int = 10
    seed: int = 0
    normalize_every: int = 1000
    eta_decay: float = 0.95
    epsilon: float = 1e-8
    reseed_dead: bool = True

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def prepare_inputs(m, dataset, whitening, dtype=np.float32):
    """Whitened training matrices for `m`; validates every dimension before training."""
    if not isinstance(dataset, PatchDataset):
        dataset = PatchDataset(np.asarray(dataset))
    T, H, W = dataset.dims
    if m.mode == "sequence":
        flat = dataset.flat()
        if whitening is not None:
            if whitening.input_dims != flat.shape[1]:
                raise ModelError(f"whitening expects {whitening.input_dims} inputs, patches have {flat.shape[1]}")
            flat = whitening.apply(flat, dtype)
        if flat.shape[1] != m.input_dims:
            raise ModelError(f"model expects {m.input_dims} inputs, data provides {flat.shape[1]}")
        return (np.ascontiguousarray(flat, dtype=dtype),)
    if T != 2:
        raise ModelError(f"pair mode trains on two-frame patches, got T={T}")
    frames = dataset.patches.reshape(len(dataset), 2, H * W)
    x, y = frames[:, 0], frames[:, 1]
    if whitening is not None:
        if whitening.input_dims != H * W:
            raise ModelError(f"whitening expects {whitening.input_dims} inputs, frames have {H * W}")
        x, y = whitening.apply(x, dtype), whitening.apply(y, dtype)
    if x.shape[1] != m.input_dims:
        raise ModelError(f"model expects {m.input_dims} inputs, data provides {x.shape[1]}")
    return np.ascontiguousarray(x, dtype=dtype), np.ascontiguousarray(y, dtype=dtype)


def train(m, dataset, cfg: TrainConfig, whitening: Optional[WhiteningTransform] = None, dtype=np.float32):
    """Online SK-means; returns ``(model, per-epoch mean assigned-unit loss)``."""
    inputs = prepare_inputs(m, dataset, whitening, dtype)
    n = inputs[0].shape[0]
    m = m.copy()
    mats = [np.ascontiguousarray(w, dtype=dtype) for w in m.weights().values()]
    rng = np.random.default_rng(cfg.seed)
    losses = np.empty(n, dtype=np.float64)
    dirty = np.zeros(m.units, dtype=np.uint8)
    step = 0
    trace = []
    for epoch in range(cfg.epochs):
        eta = cfg.eta * cfg.eta_decay**epoch
        order = rng.permutation(n).astype(np.int64)
        wins = np.zeros(m.units, dtype=np.int64)
        if m.mode == "sequence":
            step = kernels.skmeans_seq_epoch(mats[0], inputs[0], order, eta, cfg.normalize_every,
                                             step, cfg.epsilon, losses, wins, dirty)
        else:
            step = kernels.skmeans_pair_epoch(mats[0], mats[1], inputs[0], inputs[1], order, eta,
                                              cfg.normalize_every, step, cfg.epsilon, losses, wins, dirty)
        trace.append(float(losses.mean()))
        if cfg.reseed_dead and eta > 0:
            dead = np.flatnonzero(wins == 0)
            for q in dead:
                pick = rng.integers(n)
                for M, src in zip(mats, inputs):
                    M[q] = contrast_normalize(src[pick].astype(np.float64), cfg.epsilon)
    if m.mode == "sequence":
        m.W = mats[0]
    else:
        m.Wx, m.Wy = mats
    return m, trace


@dataclass
class KMeansModel:
    """Standard online K-means baseline; hiddens are ``sigmoid(W_q.X)``."""

    W: np.ndarray
    frame_dims: Optional[Tuple[int, int, int]] = None

    kind = "kmeans"
    mode = "sequence"

    @property
    def units(self):
        return self.W.shape[0]

    @property
    def input_dims(self):
        return self.W.shape[1]

    def weights(self):
        return {"W": self.W}

    def hiddens(self, X):
        return sigmoid(np.asarray(X) @ self.W.T)


def train_kmeans(units, dataset, cfg: TrainConfig, whitening=None, dtype=np.float32, frame_dims=None):
    """Online competitive learning; centroids start at distinct random training samples."""
    probe = KMeansModel(np.zeros((1, whitening.retained_dims if whitening is not None else
                                  int(np.prod(dataset.dims))), dtype=dtype))
    (X,) = prepare_inputs(probe, dataset, whitening, dtype)
    n = X.shape[0]
    if n < units:
        raise ModelError(f"need at least {units} samples to seed {units} centroids")
    rng = np.random.default_rng(cfg.seed)
    W = np.ascontiguousarray(X[rng.choice(n, size=units, replace=False)])
    losses = np.empty(n, dtype=np.float64)
    trace = []
    for epoch in range(cfg.epochs):
        eta = cfg.eta * cfg.eta_decay**epoch
        order = rng.permutation(n).astype(np.int64)
        wins = np.zeros(units, dtype=np.int64)
        kernels.kmeans_online_epoch(W, X, order, eta, losses, wins)
        trace.append(float(losses.mean()))
        if cfg.reseed_dead and eta > 0:
            for q in np.flatnonzero(wins == 0):
                W[q] = X[rng.integers(n)]
    return KMeansModel(W, frame_dims), trace
