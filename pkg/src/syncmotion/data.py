"""Video blocks, synthetic motion corpora, cropping and whitening.

A video block is a plain ``(T, H, W)`` float array. Flattening is always
frame-major, row-major (``block.reshape(-1)``), and every filter bank in the
package uses that order.
"""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bundle


class DataError(ValueError):
    pass


def as_video_block(a):
    a = np.asarray(a)
    if a.ndim != 3 or min(a.shape) < 1:
        raise DataError(f"video block must be a non-empty 3-D array (T, H, W), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("video block contains non-finite values")
    return a


@dataclass
class PatchDataset:
    """Equal-sized video patches stacked as ``(n, T, H, W)``."""

    patches: np.ndarray
    labels: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        p = np.asarray(self.patches)
        if p.ndim != 4 or p.shape[0] < 1:
            raise DataError(f"patches must have shape (n, T, H, W) with n >= 1, got {p.shape}")
        self.patches = p
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (p.shape[0],):
                raise DataError("labels must have one entry per patch")

    def __len__(self):
        return self.patches.shape[0]

    def __getitem__(self, i):
        return self.patches[i]

    @property
    def dims(self):
        return tuple(self.patches.shape[1:])

    def flat(self, dtype=None):
        n = self.patches.shape[0]
        out = self.patches.reshape(n, -1)
        return out if dtype is None else out.astype(dtype, copy=False)

    def subset(self, index):
        labels = None if self.labels is None else self.labels[index]
        return PatchDataset(self.patches[index], labels, self.seed)


# -- synthetic sources ------------------------------------------------------

def synthetic_images(count, size, seed, exponent=1.0, blur=1.0):
    """Random images with a ``1/f**exponent`` amplitude spectrum (natural-image proxy).

    `blur` is the standard deviation, in pixels, of a Gaussian optical blur.
    Each image is standardized to zero mean and unit variance.
    """
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    radius[0, 0] = 1.0
    amplitude = radius ** (-exponent) * np.exp(-2.0 * (np.pi * blur * radius) ** 2)
    amplitude[0, 0] = 0.0
    images = []
    for _ in range(count):
        noise = rng.standard_normal((size, size))
        img = np.fft.irfft2(np.fft.rfft2(noise) * amplitude, s=(size, size))
        img -= img.mean()
        img /= img.std()
        images.append(img)
    return images


def _check_sources(source, dims, reach):
    if len(source) == 0:
        raise DataError("source image list is empty")
    T, H, W = dims
    need_h, need_w = H + 2 * reach, W + 2 * reach
    for i, img in enumerate(source):
        img = np.asarray(img)
        if img.ndim != 2:
            raise DataError(f"source image {i} is not 2-D")
        if img.shape[0] < need_h or img.shape[1] < need_w:
            raise DataError(
                f"source image {i} is {img.shape[0]}x{img.shape[1]}; translations of "
                f"{dims} blocks need at least {need_h}x{need_w}"
            )


def _translate(source, shifts, dims, rng, dtype):
    """Crop one translating clip per ``(dx, dy)`` row of `shifts`.

    Frame ``t`` is the frame-0 window moved by ``t * (dx, dy)``; windows always
    lie inside the source, so no wraparound or padding occurs.
    """
    T, H, W = dims
    out = np.empty((len(shifts),) + tuple(dims), dtype=dtype)
    picks = rng.integers(0, len(source), size=len(shifts))
    t = np.arange(T)
    for n, ((dx, dy), k) in enumerate(zip(shifts, picks)):
        img = source[k]
        # every frame window must fit: y0 + t*dy in [0, rows - H] for all t
        lo_y = max(0, -(T - 1) * dy)
        hi_y = img.shape[0] - H - max(0, (T - 1) * dy)
        lo_x = max(0, -(T - 1) * dx)
        hi_x = img.shape[1] - W - max(0, (T - 1) * dx)
        y0 = rng.integers(lo_y, hi_y + 1)
        x0 = rng.integers(lo_x, hi_x + 1)
        rows = (y0 + t * dy)[:, None, None] + np.arange(H)[None, :, None]
        cols = (x0 + t * dx)[:, None, None] + np.arange(W)[None, None, :]
        out[n] = img[rows, cols]
    return out


def shift_label(dx, dy, max_shift):
    side = 2 * max_shift + 1
    return (dy + max_shift) * side + (dx + max_shift)


def decode_shift_label(label, max_shift):
    side = 2 * max_shift + 1
    dy, dx = divmod(int(label), side)
    return dx - max_shift, dy - max_shift


def generate_translating_patches(source, count, dims, max_shift, seed, dtype=np.float32):
    """Random translations of source crops; label encodes the per-frame shift (dx, dy)."""
    if count < 1:
        raise DataError("count must be >= 1")
    if max_shift < 0:
        raise DataError("max_shift must be >= 0")
    dims = tuple(int(d) for d in dims)
    source = [np.asarray(s, dtype=np.float64) for s in source]
    _check_sources(source, dims, dims[0] * max_shift)
    rng = np.random.default_rng(seed)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(count, 2))
    patches = _translate(source, shifts, dims, rng, dtype)
    labels = shift_label(shifts[:, 0], shifts[:, 1], max_shift)
    return PatchDataset(patches, labels, seed)


DIRECTIONS = ("up", "down", "left", "right")
_DIRECTION_SHIFTS = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}


def generate_direction_clips(source, per_class, dims, speed, seed, dtype=np.float32):
    """Labelled clips translating up/down/left/right at `speed` pixels per frame.

    Labels index into ``DIRECTIONS``. Class order is shuffled under the seed.
    """
    if per_class < 1 or speed < 1:
        raise DataError("per_class and speed must be >= 1")
    dims = tuple(int(d) for d in dims)
    source = [np.asarray(s, dtype=np.float64) for s in source]
    _check_sources(source, dims, dims[0] * speed)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(len(DIRECTIONS)), per_class))
    unit = np.array([_DIRECTION_SHIFTS[d] for d in DIRECTIONS])
    shifts = unit[labels] * speed
    clips = _translate(source, shifts, dims, rng, dtype)
    return PatchDataset(clips, labels, seed)


def generate_sinusoid_pair(n, freq, phase, shift):
    if n < 4:
        raise DataError("n must be >= 4")
    if not 0.0 < freq < 0.5:
        raise DataError(f"freq must lie in the open interval (0, 0.5), got {freq}")
    x1 = np.sin(2.0 * np.pi * freq * np.arange(n) + phase)
    return x1, np.roll(x1, shift)


def generate_sinusoid_dataset(count, n, freq, max_shift, seed, dtype=np.float32):
    """Two-frame 1-D movies ``(2, 1, n)`` of shifted sinusoids with random phase."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
    shifts = rng.integers(-max_shift, max_shift + 1, size=count)
    out = np.empty((count, 2, 1, n), dtype=dtype)
    for i, (ph, sh) in enumerate(zip(phases, shifts)):
        x1, x2 = generate_sinusoid_pair(n, freq, ph, int(sh))
        out[i, 0, 0] = x1
        out[i, 1, 0] = x2
    return PatchDataset(out, shifts + max_shift, seed)


# -- cropping ---------------------------------------------------------------

def grid_offsets(dims, block_dims, strides):
    dims, block_dims, strides = (tuple(int(v) for v in a) for a in (dims, block_dims, strides))
    if any(b > d for b, d in zip(block_dims, dims)):
        raise DataError(f"block {block_dims} larger than video {dims}")
    if min(block_dims) < 1:
        raise DataError("block dims must be >= 1")
    if min(strides) < 1:
        raise DataError("strides must be >= 1")
    axes = [range(0, d - b + 1, s) for d, b, s in zip(dims, block_dims, strides)]
    return [(i, j, k) for i in axes[0] for j in axes[1] for k in axes[2]]


def crop_array(video, block_dims, strides):
    """All grid crops stacked as ``(n_blocks, t, h, w)`` (frame-major, then row, then column)."""
    video = np.asarray(video)
    if video.ndim != 3:
        raise DataError("video must be 3-D (T, H, W)")
    offsets = grid_offsets(video.shape, block_dims, strides)
    windows = np.lib.stride_tricks.sliding_window_view(video, tuple(block_dims))
    idx = np.array(offsets)
    return windows[idx[:, 0], idx[:, 1], idx[:, 2]]


def crop_blocks(video, block_dims, strides):
    return list(crop_array(as_video_block(video), block_dims, strides))


# -- normalization and whitening -------------------------------------------

def contrast_normalize(v, epsilon=1e-8):
    v = np.asarray(v)
    centered = v - v.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(centered, axis=-1, keepdims=True)
    return centered / np.maximum(norm, epsilon)


@dataclass(frozen=True)
class WhiteningTransform:
    mean: np.ndarray  # (N,)
    forward: np.ndarray  # (D, N)
    inverse: np.ndarray  # (N, D)
    eigenvalues: np.ndarray  # all N, descending, before clamping
    eigenvalue_floor: float

    @property
    def retained_dims(self):
        return self.forward.shape[0]

    @property
    def input_dims(self):
        return self.forward.shape[1]

    def apply(self, X, dtype=None):
        """Whiten rows of `X` ``(n, N)`` (or a single vector)."""
        X = np.asarray(X)
        dtype = dtype or (X.dtype if X.dtype in (np.float32, np.float64) else np.float64)
        fwd = self.forward.astype(dtype, copy=False)
        out = (X.astype(dtype, copy=False) - self.mean.astype(dtype, copy=False)) @ fwd.T
        return out

    def invert(self, Z):
        Z = np.asarray(Z)
        return Z @ self.inverse.T.astype(Z.dtype, copy=False) + self.mean.astype(Z.dtype, copy=False)

    def save(self, directory, prefix="whitening"):
        bundle.save_arrays(directory, {
            f"{prefix}_mean": self.mean,
            f"{prefix}_forward": self.forward,
            f"{prefix}_inverse": self.inverse,
            f"{prefix}_eigenvalues": self.eigenvalues,
        })

    @classmethod
    def load(cls, directory, prefix="whitening", eigenvalue_floor=1e-8):
        return cls(
            bundle.load_array(directory, f"{prefix}_mean"),
            bundle.load_array(directory, f"{prefix}_forward"),
            bundle.load_array(directory, f"{prefix}_inverse"),
            bundle.load_array(directory, f"{prefix}_eigenvalues"),
            eigenvalue_floor,
        )


def _flat_samples(data):
    if isinstance(data, PatchDataset):
        return data.flat()
    X = np.asarray(data)
    if X.ndim != 2:
        X = X.reshape(X.shape[0], -1)
    return X


def sample_moments(X, chunk=4096):
    """Mean and population covariance in float64, accumulated in chunks."""
    n, N = X.shape
    mean = np.zeros(N)
    for i in range(0, n, chunk):
        mean += X[i:i + chunk].sum(axis=0, dtype=np.float64)
    mean /= n
    cov = np.zeros((N, N))
    for i in range(0, n, chunk):
        c = X[i:i + chunk].astype(np.float64) - mean
        cov += c.T @ c
    cov /= n
    return mean, (cov + cov.T) / 2.0


def eigen_spectrum(cov):
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def numerical_rank(vals, n_dims):
    top = max(vals[0], 0.0)
    return int(np.sum(vals > top * n_dims * np.finfo(np.float64).eps))


def dims_for_variance(vals, fraction):
    pos = np.clip(vals, 0.0, None)
    total = pos.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(pos) / total
    return int(min(np.searchsorted(cum, fraction - 1e-12) + 1, len(vals)))


def fit_whitening(patches, retained_dims=None, eigenvalue_floor=1e-8, retained_variance=0.99):
    """PCA whitening: ``forward = L^-1/2 E^T`` and ``inverse = E L^1/2`` on the top eigenpairs.

    `eigenvalue_floor` is relative to the largest eigenvalue; retained
    eigenvalues are clamped from below to it. When `retained_dims` is None,
    enough components to explain `retained_variance` are kept.
    """
    X = _flat_samples(patches)
    n, N = X.shape
    mean, cov = sample_moments(X)
    vals, vecs = eigen_spectrum(cov)
    if retained_dims is None or retained_dims == 0:
        retained_dims = dims_for_variance(vals, retained_variance)
    if retained_dims > N:
        raise DataError(f"retained_dims={retained_dims} exceeds the patch dimension {N}")
    if n <= retained_dims:
        raise DataError(f"need more patches ({n}) than retained_dims ({retained_dims})")
    rank = numerical_rank(vals, N)
    if retained_dims > rank:
        raise DataError(
            f"covariance is degenerate: numerical rank {rank} < retained_dims {retained_dims}"
        )
    floor = eigenvalue_floor * vals[0]
    lam = np.maximum(vals[:retained_dims], floor)
    E = vecs[:, :retained_dims]
    forward = (E / np.sqrt(lam)).T
    inverse = E * np.sqrt(lam)
    return WhiteningTransform(mean, forward, inverse, vals, float(eigenvalue_floor))


# -- dataset files ----------------------------------------------------------

def save_dataset(directory, ds: PatchDataset, kind="patches", extra=None):
    os.makedirs(directory, exist_ok=True)
    arrays = {"patches": ds.patches.astype(np.float32)}
    if ds.labels is not None:
        arrays["labels"] = ds.labels.astype(np.float64)
    bundle.save_arrays(directory, arrays)
    entries = {
        "kind": kind,
        "count": len(ds),
        "dims": bundle.fmt_dims(ds.dims),
        "seed": "" if ds.seed is None else ds.seed,
        "labels": "yes" if ds.labels is not None else "no",
    }
    entries.update(extra or {})
    bundle.write_manifest(directory, entries)


def load_dataset(directory):
    manifest = bundle.read_manifest(directory)
    patches = bundle.load_array(directory, "patches")
    labels = None
    if manifest.get("labels") == "yes":
        labels = bundle.load_array(directory, "labels").astype(np.int64)
    seed = manifest.get("seed") or None
    return PatchDataset(patches, labels, None if seed is None else int(seed))
