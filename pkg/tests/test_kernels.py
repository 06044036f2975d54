import numpy as np
import pytest

from syncmotion import _fallback, kernels

compiled_only = pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")


@pytest.fixture(params=kernels.BACKENDS)
def backend(request):
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def test_selector():
    assert kernels.BACKEND in kernels.BACKENDS and "python" in kernels.BACKENDS
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")


def test_nearest_centroid_exact(backend, rng):
    X = rng.standard_normal((50, 3))
    C = rng.standard_normal((7, 3))
    idx, d2 = kernels.nearest_centroid(X, C)
    full = ((X[:, None] - C[None]) ** 2).sum(-1)
    assert np.array_equal(idx, full.argmin(1))
    assert np.allclose(d2, full.min(1), rtol=1e-12)
    # exact ties go to the lowest index
    idx, _ = kernels.nearest_centroid(np.zeros((1, 2)), np.array([[1.0, 0], [0, 1.0], [-1.0, 0]]))
    assert idx[0] == 0
    with pytest.raises(ValueError):
        kernels.nearest_centroid(X, C[:, :2])


def test_chi2_matrix(backend, rng):
    A, B = rng.random((4, 6)), rng.random((3, 6))
    D = kernels.chi2_matrix(A, B, 1e-10)
    want = 0.5 * ((A[:, None] - B[None]) ** 2 / (A[:, None] + B[None] + 1e-10)).sum(-1)
    assert np.allclose(D, want, rtol=1e-12)
    with pytest.raises(ValueError):
        kernels.chi2_matrix(A, B[:, :5])


def test_kernel_contiguity_checked(rng):
    W = rng.standard_normal((4, 6))[:, ::2]
    X = rng.standard_normal((10, 3))
    with pytest.raises(ValueError):
        kernels.skmeans_seq_epoch(W, X, np.arange(10), 0.1, 5, 0, 1e-8, np.empty(10),
                                  np.zeros(4, np.int64), np.zeros(4, np.uint8))
    with pytest.raises(ValueError):
        kernels.kmeans_online_epoch(np.zeros((2, 3), np.float32), X, np.arange(10), 0.1,
                                    np.empty(10), np.zeros(2, np.int64))


def _seq_args(rng, dtype, n=400, N=12, Q=6):
    W = rng.standard_normal((Q, N))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    X = rng.standard_normal((n, N))
    return W.astype(dtype), X.astype(dtype), rng.permutation(n).astype(np.int64)


def _run_both(fn, *arrays):
    out = {}
    for b in kernels.BACKENDS:
        prev = kernels.use_backend(b)
        try:
            copies = [a.copy() for a in arrays]
            ret = fn(*copies)
            out[b] = (copies, ret)
        finally:
            kernels.use_backend(prev)
    return out


@compiled_only
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_seq_epoch_backends_agree(dtype, rng):
    W, X, order = _seq_args(rng, dtype)
    Q, n = W.shape[0], X.shape[0]

    def run(W, losses, wins, dirty):
        return kernels.skmeans_seq_epoch(W, X, order, 0.05, 37, 5, 1e-8, losses, wins, dirty)

    res = _run_both(run, W, np.empty(n), np.zeros(Q, np.int64), np.zeros(Q, np.uint8))
    (Wc, lc, wc, dc), sc = res["compiled"]
    (Wp, lp, wp, dp), sp = res["python"]
    tol = 1e-4 if dtype == np.float32 else 1e-11
    assert sc == sp == 5 + n
    assert np.array_equal(wc, wp) and np.array_equal(dc, dp)
    assert np.allclose(Wc, Wp, atol=tol) and np.allclose(lc, lp, rtol=tol)


@compiled_only
def test_pair_epoch_backends_agree(rng):
    Wx, X, order = _seq_args(rng, np.float64)
    Wy, Y, _ = _seq_args(rng, np.float64)
    Q, n = Wx.shape[0], X.shape[0]

    def run(Wx, Wy, losses, wins, dirty):
        return kernels.skmeans_pair_epoch(Wx, Wy, X, Y, order, 0.05, 50, 0, 1e-8, losses, wins, dirty)

    res = _run_both(run, Wx, Wy, np.empty(n), np.zeros(Q, np.int64), np.zeros(Q, np.uint8))
    for a, b in zip(res["compiled"][0], res["python"][0]):
        assert np.allclose(a, b, atol=1e-11)


@compiled_only
def test_online_kmeans_backends_agree(rng):
    _, X, order = _seq_args(rng, np.float64)
    W = X[:6].copy()
    res = _run_both(lambda W, l, w: kernels.kmeans_online_epoch(W, X, order, 0.1, l, w),
                    W, np.empty(len(X)), np.zeros(6, np.int64))
    for a, b in zip(res["compiled"][0], res["python"][0]):
        assert np.allclose(a, b, atol=1e-12)


def test_seq_epoch_matches_scalar_rule(backend, rng):
    # normalize_every larger than the epoch: the kernel is the plain online rule
    W, X, order = _seq_args(rng, np.float64, n=30)
    ref = W.copy()
    for idx in order:
        r = ref @ X[idx]
        s = int(np.argmax(r * r))
        ref[s] += 0.02 * (X[idx] * r[s] - ref[s] * r[s] ** 2)
    kernels.skmeans_seq_epoch(W, X, order, 0.02, 10**9, 0, 1e-8, np.empty(30),
                              np.zeros(6, np.int64), np.zeros(6, np.uint8))
    assert np.allclose(W, ref, atol=1e-12)


def test_dirty_rows_renormalized(backend, rng):
    W, X, order = _seq_args(rng, np.float64, n=20, Q=30)
    W0 = W.copy()
    dirty, wins = np.zeros(30, np.uint8), np.zeros(30, np.int64)
    kernels.skmeans_seq_epoch(W, X, order, 0.01, 20, 0, 1e-8, np.empty(20), wins, dirty)
    assert not dirty.any()
    won = wins > 0
    assert 0 < won.sum() < 30
    assert np.array_equal(W[~won], W0[~won])  # clean rows are left alone
    assert np.allclose(W[won].mean(1), 0, atol=1e-12)
    assert np.allclose(np.linalg.norm(W[won], axis=1), 1, atol=1e-12)


def test_fallback_module_is_importable_without_extension():
    assert callable(_fallback.skmeans_seq_epoch)


def test_selector_falls_back_without_extension():
    import subprocess
    import sys

    code = ("import sys; sys.modules['syncmotion._kernels'] = None\n"
            "from syncmotion import kernels, skmeans\n"
            "print(kernels.BACKENDS, kernels.BACKEND)")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "('python',) python"
