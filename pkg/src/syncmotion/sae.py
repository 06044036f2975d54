"""Synchrony autoencoder (SAE) with contractive regularization.

Pair mode::

    fx = Wx x,  fy = Wy y,  h = sigmoid(fx * fy [+ b])
    x_hat = Wx^T (h * fy),  y_hat = Wy^T (h * fx)
    contraction = sum_j (h_j(1-h_j))^2 (fx_j^2 |Wy_j|^2 + fy_j^2 |Wx_j|^2)

Sequence mode ties the banks: ``F = W X``, ``H = sigmoid(F**2 [+ b])`` and
``X_hat = W^T (H * F)``. Its contraction is the exact squared Frobenius norm of
``dH/dX``: ``4 sum_q (H_q(1-H_q))^2 F_q^2 |W_q|^2``.

Losses are averaged over the batch; ``total = recon + lam * contraction``.
A plain contractive autoencoder (sigmoid of linear responses) is included as
the non-gated baseline.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .skmeans import ModelError, sigmoid


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SaeActivations:
    fx: Optional[np.ndarray] = None
    fy: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None


@dataclass
class SaeModel:
    mode: str  # "pair" | "sequence"
    W: Optional[np.ndarray] = None  # sequence mode, or tied pair mode
    Wx: Optional[np.ndarray] = None
    Wy: Optional[np.ndarray] = None
    lam: float = 0.5
    bias: Optional[np.ndarray] = None
    frame_dims: Optional[Tuple[int, int, int]] = None

    kind = "sae"

    def __post_init__(self):
        if self.lam < 0:
            raise ModelError("lambda must be >= 0")
        if self.mode == "sequence" and self.W is None:
            raise ModelError("sequence mode needs W")
        if self.mode == "pair" and self.W is None and (self.Wx is None or self.Wy is None):
            raise ModelError("pair mode needs Wx and Wy, or a tied W")
        if self.mode not in ("pair", "sequence"):
            raise ModelError(f"unknown mode {self.mode!r}")
        for M in self.weights().values():
            if not np.all(np.isfinite(M)):
                raise ModelError("weights must be finite")

    @property
    def tied(self):
        return self.W is not None

    @property
    def wx(self):
        return self.W if self.tied else self.Wx

    @property
    def wy(self):
        return self.W if self.tied else self.Wy

    @property
    def units(self):
        return self.wx.shape[0]

    @property
    def input_dims(self):
        return self.wx.shape[1]

    def weights(self) -> Dict[str, np.ndarray]:
        out = {"W": self.W} if self.W is not None else {"Wx": self.Wx, "Wy": self.Wy}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def with_weights(self, params):
        return replace(self, **params)

    def copy(self):
        return self.with_weights({k: v.copy() for k, v in self.weights().items()})

    def astype(self, dtype):
        return self.with_weights({k: v.astype(dtype) for k, v in self.weights().items()})

    def hiddens(self, X):
        if self.mode != "sequence":
            raise ModelError("batch hiddens on flattened sequences need a sequence-mode model")
        return encode_seq_batch(self, np.atleast_2d(X)).H


def init_sae(mode, units, input_dims, seed, lam=0.5, tied=None, use_bias=False,
             row_norm=1.0, frame_dims=None, dtype=np.float64):
    """Gaussian rows rescaled to norm `row_norm`."""
    rng = np.random.default_rng(seed)

    def bank():
        M = rng.standard_normal((units, input_dims))
        return (M * (row_norm / np.linalg.norm(M, axis=1, keepdims=True))).astype(dtype)

    if tied is None:
        tied = mode == "sequence"
    bias = np.zeros(units, dtype=dtype) if use_bias else None
    if mode == "sequence" or tied:
        return SaeModel(mode, W=bank(), lam=lam, bias=bias, frame_dims=frame_dims)
    return SaeModel(mode, Wx=bank(), Wy=bank(), lam=lam, bias=bias, frame_dims=frame_dims)


def _batch(a, n):
    a = np.atleast_2d(np.asarray(a))
    if a.shape[-1] != n:
        raise ModelError(f"expected inputs of length {n}, got {a.shape[-1]}")
    return a


def _b(m):
    return 0.0 if m.bias is None else m.bias


# -- pair mode --------------------------------------------------------------

def encode_pair_batch(m, X, Y):
    fx = X @ m.wx.T
    fy = Y @ m.wy.T
    return SaeActivations(fx=fx, fy=fy, h=sigmoid(fx * fy + _b(m)))


def encode_pair(m, x, y):
    if m.mode != "pair":
        raise ModelError("encode_pair needs a pair-mode model")
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != (m.input_dims,) or y.shape != (m.input_dims,):
        raise ModelError(f"expected two vectors of length {m.input_dims}")
    act = encode_pair_batch(m, x[None], y[None])
    return SaeActivations(fx=act.fx[0], fy=act.fy[0], h=act.h[0])


def decode_pair(m, act):
    """Cross-gated reconstructions: x from ``h * fy``, y from ``h * fx``."""
    return (act.h * act.fy) @ m.wx, (act.h * act.fx) @ m.wy


def _pair_terms(m, X, Y):
    act = encode_pair_batch(m, X, Y)
    xh, yh = decode_pair(m, act)
    rec = ((xh - X) ** 2).sum(axis=1) + ((yh - Y) ** 2).sum(axis=1)
    g = act.h * (1.0 - act.h)
    sx = (m.wx ** 2).sum(axis=1)
    sy = (m.wy ** 2).sum(axis=1)
    con = (g**2 * (act.fx**2 * sy + act.fy**2 * sx)).sum(axis=1)
    return act, xh, yh, rec, con


def recon_loss(m, x, y):
    _, _, _, rec, _ = _pair_terms(m, _batch(x, m.input_dims), _batch(y, m.input_dims))
    return float(rec[0]) if np.ndim(x) == 1 else rec


def contraction_penalty(m, act):
    """Closed-form squared Frobenius norm of the encoder Jacobian."""
    sx = (m.wx ** 2).sum(axis=1)
    sy = (m.wy ** 2).sum(axis=1)
    g = act.h * (1.0 - act.h)
    return (g**2 * (act.fx**2 * sy + act.fy**2 * sx)).sum(axis=-1)


# -- sequence mode ----------------------------------------------------------

def encode_seq_batch(m, X):
    F = X @ m.W.T
    return SaeActivations(F=F, H=sigmoid(F * F + _b(m)))


def encode_seq(m, X):
    if m.mode != "sequence":
        raise ModelError("encode_seq needs a sequence-mode model")
    X = np.asarray(X)
    if X.shape != (m.input_dims,):
        raise ModelError(f"expected a vector of length {m.input_dims}, got shape {X.shape}")
    act = encode_seq_batch(m, X[None])
    return SaeActivations(F=act.F[0], H=act.H[0])


def decode_seq(m, act):
    return (act.H * act.F) @ m.W


def contraction_seq(m, act):
    s = (m.W ** 2).sum(axis=1)
    g = act.H * (1.0 - act.H)
    return 4.0 * (g**2 * act.F**2 * s).sum(axis=-1)


def _seq_terms(m, X):
    act = encode_seq_batch(m, X)
    Xh = decode_seq(m, act)
    rec = ((Xh - X) ** 2).sum(axis=1)
    return act, Xh, rec, contraction_seq(m, act)


def loss_seq(m, X):
    """``(recon, contraction, total)`` for one sequence or batch-averaged over rows."""
    Xb = _batch(X, m.input_dims)
    _, _, rec, con = _seq_terms(m, Xb)
    r, c = float(rec.mean()), float(con.mean())
    return r, c, r + m.lam * c


# -- batch losses and gradients --------------------------------------------

def _split(m, batch):
    """Normalize a batch to ``(X,)`` (sequence) or ``(X, Y)`` (pair)."""
    if m.mode == "sequence":
        X = batch[0] if isinstance(batch, tuple) else batch
        return (_batch(X, m.input_dims),)
    X, Y = batch
    return _batch(X, m.input_dims), _batch(Y, m.input_dims)


def total_loss(m, batch):
    """Batch-averaged ``(recon, contraction, recon + lam * contraction)``."""
    parts = _split(m, batch)
    if parts[0].shape[0] == 0:
        raise ModelError("empty batch")
    if m.mode == "sequence":
        _, _, rec, con = _seq_terms(m, parts[0])
    else:
        _, _, _, rec, con = _pair_terms(m, *parts)
    r, c = float(rec.mean()), float(con.mean())
    return r, c, r + m.lam * c


def _check_finite(rec, con):
    bad = np.flatnonzero(~(np.isfinite(rec) & np.isfinite(con)))
    if bad.size:
        raise FloatingPointError(f"non-finite activations for batch sample {int(bad[0])}")


def gradients(m, batch, part="total"):
    """Analytic gradient of the batch-averaged loss w.r.t. every weight array.

    `part` selects 'total', 'recon' or 'contraction'.
    """
    wr, wc = {"total": (1.0, m.lam), "recon": (1.0, 0.0), "contraction": (0.0, 1.0)}[part]
    parts = _split(m, batch)
    B = parts[0].shape[0]
    if B == 0:
        raise ModelError("empty batch")
    if m.mode == "sequence":
        return _grad_seq(m, parts[0], wr / B, wc / B)
    return _grad_pair(m, parts[0], parts[1], wr / B, wc / B)


def _grad_pair(m, X, Y, wr, wc):
    act, xh, yh, rec, con = _pair_terms(m, X, Y)
    _check_finite(rec, con)
    fx, fy, h = act.fx, act.fy, act.h
    Wx, Wy = m.wx, m.wy
    g = h * (1.0 - h)
    sx = (Wx ** 2).sum(axis=1)
    sy = (Wy ** 2).sum(axis=1)

    # reconstruction
    dxh = 2.0 * wr * (xh - X)
    dyh = 2.0 * wr * (yh - Y)
    u = h * fy
    v = h * fx
    dWx = u.T @ dxh
    dWy = v.T @ dyh
    du = dxh @ Wx.T
    dv = dyh @ Wy.T
    dh = du * fy + dv * fx
    dfx = dv * h
    dfy = du * h

    # contraction
    A = fx**2 * sy + fy**2 * sx
    dg = wc * 2.0 * g * A
    dfx += wc * g**2 * 2.0 * fx * sy
    dfy += wc * g**2 * 2.0 * fy * sx
    dsx = wc * (g**2 * fy**2).sum(axis=0)
    dsy = wc * (g**2 * fx**2).sum(axis=0)

    dp = dh * g + dg * g * (1.0 - 2.0 * h)
    dfx += dp * fy
    dfy += dp * fx
    dWx += dfx.T @ X + 2.0 * dsx[:, None] * Wx
    dWy += dfy.T @ Y + 2.0 * dsy[:, None] * Wy

    out = {"W": dWx + dWy} if m.tied else {"Wx": dWx, "Wy": dWy}
    if m.bias is not None:
        out["bias"] = dp.sum(axis=0)
    return out


def _grad_seq(m, X, wr, wc):
    act, Xh, rec, con = _seq_terms(m, X)
    _check_finite(rec, con)
    F, H, W = act.F, act.H, m.W
    G = H * (1.0 - H)
    s = (W ** 2).sum(axis=1)

    dXh = 2.0 * wr * (Xh - X)
    u = H * F
    dW = u.T @ dXh
    du = dXh @ W.T
    dH = du * F
    dF = du * H

    dG = wc * 8.0 * G * F**2 * s
    dF += wc * 8.0 * G**2 * F * s
    ds = wc * 4.0 * (G**2 * F**2).sum(axis=0)

    dz = dH * G + dG * G * (1.0 - 2.0 * H)
    dF += dz * 2.0 * F
    dW += dF.T @ X + 2.0 * ds[:, None] * W
    out = {"W": dW}
    if m.bias is not None:
        out["bias"] = dz.sum(axis=0)
    return out


# -- plain contractive autoencoder baseline --------------------------------

@dataclass
class ContractiveAE:
    """Tied-weight contractive autoencoder: ``h = sigmoid(W X + b)``, ``X_hat = W^T h + c``."""

    W: np.ndarray
    bias: np.ndarray
    out_bias: np.ndarray
    lam: float = 0.5
    frame_dims: Optional[Tuple[int, int, int]] = None

    kind = "ae"
    mode = "sequence"

    @property
    def units(self):
        return self.W.shape[0]

    @property
    def input_dims(self):
        return self.W.shape[1]

    def weights(self):
        return {"W": self.W, "bias": self.bias, "out_bias": self.out_bias}

    def with_weights(self, params):
        return replace(self, **params)

    def copy(self):
        return self.with_weights({k: v.copy() for k, v in self.weights().items()})

    def astype(self, dtype):
        return self.with_weights({k: v.astype(dtype) for k, v in self.weights().items()})

    def hiddens(self, X):
        return sigmoid(np.atleast_2d(X) @ self.W.T + self.bias)


def init_ae(units, input_dims, seed, lam=0.5, row_norm=1.0, frame_dims=None, dtype=np.float64):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((units, input_dims))
    M *= row_norm / np.linalg.norm(M, axis=1, keepdims=True)
    return ContractiveAE(M.astype(dtype), np.zeros(units, dtype), np.zeros(input_dims, dtype),
                         lam, frame_dims)


def _ae_terms(m, X):
    h = sigmoid(X @ m.W.T + m.bias)
    Xh = h @ m.W + m.out_bias
    rec = ((Xh - X) ** 2).sum(axis=1)
    g = h * (1.0 - h)
    s = (m.W ** 2).sum(axis=1)
    con = (g**2 * s).sum(axis=1)
    return h, Xh, rec, con


def ae_total_loss(m, X):
    X = _batch(X, m.input_dims)
    if X.shape[0] == 0:
        raise ModelError("empty batch")
    _, _, rec, con = _ae_terms(m, X)
    r, c = float(rec.mean()), float(con.mean())
    return r, c, r + m.lam * c


def ae_gradients(m, X, part="total"):
    wr, wc = {"total": (1.0, m.lam), "recon": (1.0, 0.0), "contraction": (0.0, 1.0)}[part]
    X = _batch(X, m.input_dims)
    B = X.shape[0]
    if B == 0:
        raise ModelError("empty batch")
    wr, wc = wr / B, wc / B
    h, Xh, rec, con = _ae_terms(m, X)
    _check_finite(rec, con)
    g = h * (1.0 - h)
    s = (m.W ** 2).sum(axis=1)
    dXh = 2.0 * wr * (Xh - X)
    dW = h.T @ dXh
    dc = dXh.sum(axis=0)
    dh = dXh @ m.W.T
    dg = wc * 2.0 * g * s
    ds = wc * (g**2).sum(axis=0)
    dz = dh * g + dg * g * (1.0 - 2.0 * h)
    dW += dz.T @ X + 2.0 * ds[:, None] * m.W
    return {"W": dW, "bias": dz.sum(axis=0), "out_bias": dc}


# -- generic loss/gradient dispatch ----------------------------------------

def model_loss(m, batch):
    if isinstance(m, ContractiveAE):
        return ae_total_loss(m, batch[0] if isinstance(batch, tuple) else batch)
    return total_loss(m, batch)


def model_gradients(m, batch, part="total"):
    if isinstance(m, ContractiveAE):
        return ae_gradients(m, batch[0] if isinstance(batch, tuple) else batch, part)
    return gradients(m, batch, part)


@dataclass
class GradCheck:
    max_rel_error: float
    step: float
    coordinates: int
    worst: Tuple[str, Tuple[int, ...]] = ("", ())

    def __float__(self):
        return self.max_rel_error


def finite_diff_check(m, sample, step=1e-6, max_coords=500, seed=0, part="total",
                      subsample_above=10_000):
    """Max relative error between analytic gradients and central differences.

    Every weight entry is probed unless the model has more than
    `subsample_above` weights, in which case `max_coords` seeded coordinates
    are drawn. Entries whose gradient is below ``1e-6 * max|grad|`` are
    compared on that absolute scale.
    """
    m64 = m.astype(np.float64)
    sample = tuple(np.asarray(s, dtype=np.float64) for s in (sample if isinstance(sample, tuple) else (sample,)))
    batch = sample if len(sample) > 1 else sample[0]
    analytic = model_gradients(m64, batch, part)
    params = {k: v.copy() for k, v in m64.weights().items()}
    idx = {"total": 2, "recon": 0, "contraction": 1}[part]

    coords = [(k, c) for k, v in params.items() for c in np.ndindex(v.shape)]
    if len(coords) > subsample_above:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=min(max_coords, len(coords)), replace=False)
        coords = [coords[i] for i in np.sort(pick)]

    scale = max(float(np.max(np.abs(g))) for g in analytic.values())
    floor = max(scale * 1e-6, 1e-12)
    worst, where = 0.0, ("", ())
    for name, c in coords:
        arr = params[name]
        orig = arr[c]
        arr[c] = orig + step
        up = model_loss(m64.with_weights(params), batch)[idx]
        arr[c] = orig - step
        down = model_loss(m64.with_weights(params), batch)[idx]
        arr[c] = orig
        numeric = (up - down) / (2.0 * step)
        a = analytic[name][c]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if err > worst:
            worst, where = err, (name, c)
    return GradCheck(float(worst), step, len(coords), where)


# -- training ---------------------------------------------------------------

@dataclass
class OptimConfig:
    learning_rate: float = 0.002
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0


def _evaluate(m, data, chunk=4096):
    n = data[0].shape[0]
    rec = con = 0.0
    for i in range(0, n, chunk):
        part = tuple(d[i:i + chunk] for d in data)
        r, c, _ = model_loss(m, part if len(part) > 1 else part[0])
        k = part[0].shape[0]
        rec += r * k
        con += c * k
    return rec / n, con / n


def train(m, data, cfg: OptimConfig):
    """Mini-batch momentum SGD on whitened arrays.

    `data` is ``X`` (n, N) for sequence models or ``(X, Y)`` for pair models.
    Returns ``(model, trace)`` where ``trace[e]`` is the dataset-averaged
    ``(recon, contraction)`` after `e` epochs (``trace[0]``: initial model).
    """
    data = data if isinstance(data, tuple) else (data,)
    n = data[0].shape[0]
    if n == 0:
        raise ModelError("empty training set")
    if data[0].shape[1] != m.input_dims:
        raise ModelError(f"model expects {m.input_dims} inputs, data provides {data[0].shape[1]}")
    dtype = data[0].dtype
    m = m.astype(dtype)
    params = {k: v.copy() for k, v in m.weights().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(cfg.seed)
    trace = [_evaluate(m, data)]
    lr = np.asarray(cfg.learning_rate, dtype=dtype)
    mu = np.asarray(cfg.momentum, dtype=dtype)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            sel = order[i:i + cfg.batch_size]
            part = tuple(d[sel] for d in data)
            try:
                # divergence is detected explicitly below, so overflow warnings are noise
                with np.errstate(over="ignore", invalid="ignore"):
                    grads = model_gradients(m, part if len(part) > 1 else part[0])
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", trace) from exc
            for k in params:
                velocity[k] *= mu
                velocity[k] -= lr * grads[k].astype(dtype, copy=False)
                params[k] += velocity[k]
            m = m.with_weights(params)
        with np.errstate(over="ignore", invalid="ignore"):
            rec, con = _evaluate(m, data)
        if not (np.isfinite(rec) and np.isfinite(con)):
            raise TrainingDiverged(f"loss became non-finite in epoch {epoch + 1}", trace)
        trace.append((rec, con))
    m = m.with_weights({k: v.copy() for k, v in params.items()})
    return m, trace


def sweep_lambda(make_model, train_data, valid_data, cfg: OptimConfig, lambdas=(0.1, 0.5, 1.0, 2.0)):
    """Train one model per lambda; returns ``{lambda: held-out reconstruction}``."""
    valid = valid_data if isinstance(valid_data, tuple) else (valid_data,)
    scores = {}
    for lam in lambdas:
        model, _ = train(make_model(lam), train_data, cfg)
        scores[lam] = _evaluate(model, valid)[0]
    return scores
