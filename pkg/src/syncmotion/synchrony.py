"""Orthogonal warps, the synchrony condition and gated product units.

Responses used for synchrony verdicts are summed with ``math.fsum`` so that a
permuted pair of vectors yields a bit-identical response: the products are the
same multiset of floats and the sum is correctly rounded.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Verdict(str, Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"
    INDETERMINATE = "indeterminate"


DEFAULT_TOL = 1e-6
DEFAULT_FLOOR = 1e-8


class WarpOperator:
    """Permutation warp; ``out[mapping[i]] = v[i]``, i.e. an orthogonal 0/1 matrix."""

    def __init__(self, mapping):
        mapping = np.asarray(mapping, dtype=np.intp)
        n = mapping.shape[0]
        if mapping.ndim != 1 or n < 1:
            raise ValueError("mapping must be a non-empty 1-D index array")
        seen = np.zeros(n, dtype=bool)
        if mapping.min() < 0 or mapping.max() >= n:
            raise ValueError("mapping entries out of range")
        seen[mapping] = True
        if not seen.all():
            raise ValueError("mapping is not a bijection")
        self.mapping = mapping
        self.mapping.setflags(write=False)
        self._inverse = np.empty_like(mapping)
        self._inverse[mapping] = np.arange(n)

    @property
    def n(self):
        return self.mapping.shape[0]

    def apply(self, v):
        v = _vector(v, self.n)
        out = np.empty_like(v)
        out[self.mapping] = v
        return out

    def apply_transpose(self, v):
        v = _vector(v, self.n)
        return v[self.mapping]

    def compose(self, other):
        """Warp equal to applying `other` first, then `self`."""
        if other.n != self.n:
            raise ValueError("warp dimensions differ")
        return WarpOperator(self.mapping[other.mapping])

    def matrix(self):
        P = np.zeros((self.n, self.n))
        P[self.mapping, np.arange(self.n)] = 1.0
        return P

    def __eq__(self, other):
        return isinstance(other, WarpOperator) and np.array_equal(self.mapping, other.mapping)

    def __hash__(self):
        return hash(self.mapping.tobytes())


class OrthogonalWarp:
    """General orthogonal matrix warp, validated by ``||P^T P - I|| < 1e-10``."""

    def __init__(self, matrix, atol=1e-10):
        P = np.array(matrix, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("warp matrix must be square")
        err = np.linalg.norm(P.T @ P - np.eye(P.shape[0]))
        if err >= atol:
            raise ValueError(f"matrix is not orthogonal (||P^T P - I|| = {err:.3g})")
        self.P = P
        self.P.setflags(write=False)

    @property
    def n(self):
        return self.P.shape[0]

    def apply(self, v):
        return self.P @ _vector(v, self.n)

    def apply_transpose(self, v):
        return self.P.T @ _vector(v, self.n)

    def matrix(self):
        return self.P.copy()


def make_shift_warp(n, offset):
    if n < 1:
        raise ValueError("n must be >= 1")
    return WarpOperator((np.arange(n) + offset) % n)


def make_shift_warp_2d(rows, cols, dy, dx):
    """Circular translation of a flattened ``rows x cols`` image by (dy, dx)."""
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return WarpOperator((((r + dy) % rows) * cols + (c + dx) % cols).ravel())


def apply_warp(p, v):
    return p.apply(v)


def apply_warp_transpose(p, v):
    return p.apply_transpose(v)


@dataclass(frozen=True)
class FilterPair:
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        if w1.ndim != 1 or w1.shape != w2.shape:
            raise ValueError("filter pair must be two 1-D vectors of equal length")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise ValueError("filter entries must be finite")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @classmethod
    def from_warp(cls, w1, p):
        """Filter pair encoding warp `p`: ``w2 = P w1``."""
        return cls(w1, p.apply(w1))


def _vector(v, n=None):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if n is not None and v.shape[0] != n:
        raise ValueError(f"length mismatch: expected {n}, got {v.shape[0]}")
    return v


def response(w, x):
    """Correctly rounded ``w^T x`` (order independent)."""
    w = _vector(w)
    x = _vector(x, w.shape[0])
    return math.fsum(w * x)


def _verdict(responses, tol, floor):
    big = max(abs(r) for r in responses)
    if big < floor:
        return Verdict.INDETERMINATE
    if max(responses) - min(responses) <= tol * big:
        return Verdict.SYNCHRONOUS
    return Verdict.ASYNCHRONOUS


def check_synchrony(pair, x1, x2, tol=DEFAULT_TOL, floor=DEFAULT_FLOOR):
    a = response(pair.w1, x1)
    b = response(pair.w2, x2)
    return _verdict((a, b), tol, floor)


def product_response(pair, x1, x2):
    return response(pair.w1, x1) * response(pair.w2, x2)


def frame_responses(filters, frames):
    if len(filters) != len(frames):
        raise ValueError("filters and frames must have the same length")
    if len(filters) < 1:
        raise ValueError("need at least one frame")
    n = _vector(filters[0]).shape[0]
    return [response(_vector(w, n), _vector(x, n)) for w, x in zip(filters, frames)]


def sequence_synchrony(filters, frames, tol=DEFAULT_TOL, floor=DEFAULT_FLOOR):
    if len(filters) < 2 or len(frames) < 2:
        raise ValueError("sequence synchrony needs T >= 2 frames")
    return _verdict(frame_responses(filters, frames), tol, floor)


def energy_response(filters, frames):
    """``(sum_t w_t^T x_t)**2``; the sum is correctly rounded before squaring."""
    total = math.fsum(frame_responses(filters, frames))
    return total * total


def thresholded_sum_response(pair, x1, x2, threshold):
    return response(pair.w1, x1) + response(pair.w2, x2) >= threshold


def product_demo(n=64, freq=1.0 / 16.0, shift=4):
    """Product responses for the three matched/mismatched sinusoid cases.

    The filters are a sinusoid and its copy shifted by `shift` samples.
    case-1: input translates with the filters; case-2: input does not move;
    case-3: input translates but is a quarter period out of phase with w1.
    """
    from .data import generate_sinusoid_pair

    w1, w2 = generate_sinusoid_pair(n, freq, 0.0, shift)
    pair = FilterPair(w1, w2)
    x1, x2 = generate_sinusoid_pair(n, freq, 0.0, shift)
    case1 = product_response(pair, x1, x2)
    case2 = product_response(pair, x1, x1)
    q1, q2 = generate_sinusoid_pair(n, freq, np.pi / 2, shift)
    case3 = product_response(pair, q1, q2)
    return {"case-1": case1, "case-2": case2, "case-3": case3}
