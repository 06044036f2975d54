import numpy as np
import pytest

from syncmotion import sae
from syncmotion.sae import SaeModel
from syncmotion.skmeans import ModelError, sigmoid


def _num_jacobian(f, v, h=1e-6):
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((f(v + e) - f(v - e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_scalar_pair_oracle():
    m = SaeModel("pair", Wx=np.array([[2.0]]), Wy=np.array([[1.0]]), lam=0.5)
    x, y = np.array([1.0]), np.array([3.0])
    act = sae.encode_pair(m, x, y)
    h = 1 / (1 + np.exp(-6.0))
    assert act.h[0] == pytest.approx(h) and h == pytest.approx(0.99753, abs=1e-5)
    xh, yh = sae.decode_pair(m, act)
    assert xh[0] == pytest.approx(6 * h) and yh[0] == pytest.approx(2 * h)
    assert sae.recon_loss(m, x, y) == pytest.approx((6 * h - 1) ** 2 + (2 * h - 3) ** 2)
    g = h * (1 - h)
    assert sae.contraction_penalty(m, act)[()] == pytest.approx(40 * g * g)
    r, c, t = sae.total_loss(m, (x, y))
    assert t == pytest.approx(r + 0.5 * c)


def test_scalar_sequence_oracle():
    m = SaeModel("sequence", W=np.array([[1.0, 1.0]]), lam=1.0)
    X = np.array([1.0, 0.5])
    act = sae.encode_seq(m, X)
    H = 1 / (1 + np.exp(-2.25))
    assert act.F[0] == 1.5 and act.H[0] == pytest.approx(H)
    assert np.allclose(sae.decode_seq(m, act), [1.5 * H, 1.5 * H])
    g = H * (1 - H)
    assert sae.contraction_seq(m, act)[()] == pytest.approx(4 * g * g * 2.25 * 2)


@pytest.mark.parametrize("seed", range(10))
def test_pair_contraction_equals_jacobian_norm(seed):
    rng = np.random.default_rng(seed)
    N, Q = 5, 4
    m = sae.init_sae("pair", Q, N, seed, tied=bool(seed % 2), use_bias=True)
    m.bias[:] = rng.standard_normal(Q)
    x, y = rng.standard_normal(N), rng.standard_normal(N)
    f = lambda v: sae.encode_pair(m, v[:N], v[N:]).h
    J = _num_jacobian(f, np.concatenate([x, y]))
    closed = sae.contraction_penalty(m, sae.encode_pair(m, x, y))
    assert closed == pytest.approx(np.sum(J**2), rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_sequence_contraction_equals_jacobian_norm(seed):
    rng = np.random.default_rng(seed)
    m = sae.init_sae("sequence", 6, 9, seed)
    X = rng.standard_normal(9)
    J = _num_jacobian(lambda v: sae.encode_seq(m, v).H, X)
    closed = sae.contraction_seq(m, sae.encode_seq(m, X))
    assert closed == pytest.approx(np.sum(J**2), rel=1e-6)


def test_filter_responses_are_linear(rng):
    m = sae.init_sae("pair", 3, 4, 0)
    x, y = rng.standard_normal(4), rng.standard_normal(4)
    a, b = sae.encode_pair(m, x, y), sae.encode_pair(m, 2.5 * x, -y)
    assert np.allclose(b.fx, 2.5 * a.fx) and np.allclose(b.fy, -a.fy)


def test_sign_symmetry(rng):
    m = sae.init_sae("pair", 3, 4, 0)
    x, y = rng.standard_normal(4), rng.standard_normal(4)
    assert np.allclose(sae.encode_pair(m, x, y).h, sae.encode_pair(m, -x, -y).h)
    s = sae.init_sae("sequence", 3, 8, 0)
    X = rng.standard_normal(8)
    assert np.allclose(sae.encode_seq(s, X).H, sae.encode_seq(s, -X).H)


def test_two_frame_sequence_contains_the_pair_product(rng):
    N = 5
    s = sae.init_sae("sequence", 4, 2 * N, 3)
    A, B = s.W[:, :N], s.W[:, N:]
    x, y = rng.standard_normal(N), rng.standard_normal(N)
    F = sae.encode_seq(s, np.concatenate([x, y])).F
    assert np.allclose(F**2 - (A @ x) ** 2 - (B @ y) ** 2, 2 * (A @ x) * (B @ y))


@pytest.mark.parametrize("mode, tied", [("pair", False), ("pair", True), ("sequence", True)])
@pytest.mark.parametrize("lam", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("bias", [False, True])
def test_gradients_match_finite_differences(mode, tied, lam, bias, rng):
    N, Q, B = 6, 4, 3
    m = sae.init_sae(mode, Q, N, 1, lam=lam, tied=tied, use_bias=bias)
    if bias:
        m.bias[:] = 0.3 * rng.standard_normal(Q)
    batch = rng.standard_normal((B, N)) if mode == "sequence" else (
        rng.standard_normal((B, N)), rng.standard_normal((B, N)))
    for part in ("total", "recon", "contraction"):
        chk = sae.finite_diff_check(m, batch, part=part)
        assert chk.max_rel_error < 1e-4, (part, chk)


def test_ae_baseline_gradients(rng):
    m = sae.init_ae(5, 7, 0, lam=0.7)
    m = m.with_weights({"bias": 0.2 * rng.standard_normal(5), "out_bias": 0.1 * rng.standard_normal(7)})
    chk = sae.finite_diff_check(m, rng.standard_normal((4, 7)))
    assert chk.max_rel_error < 1e-4


def test_ae_contraction_is_jacobian_norm(rng):
    m = sae.init_ae(4, 6, 1)
    X = rng.standard_normal(6)
    J = _num_jacobian(lambda v: sigmoid(m.W @ v + m.bias), X)
    _, c, _ = sae.ae_total_loss(m, X[None])
    assert c == pytest.approx(np.sum(J**2), rel=1e-6)


def test_subsampled_check_is_seeded(rng):
    m = sae.init_sae("sequence", 10, 20, 0)
    X = rng.standard_normal((2, 20))
    a = sae.finite_diff_check(m, X, max_coords=30, subsample_above=100, seed=4)
    b = sae.finite_diff_check(m, X, max_coords=30, subsample_above=100, seed=4)
    assert a.coordinates == 30 and a == b and a.max_rel_error < 1e-4


def test_training_reduces_loss_and_records_initial_state(rng):
    X = rng.standard_normal((600, 12)).astype(np.float32)
    X[:, 6:] = X[:, :6]  # redundancy that an under-complete code can exploit
    m = sae.init_sae("sequence", 8, 12, 0, row_norm=0.3, dtype=np.float32)
    out, trace = sae.train(m, X, sae.OptimConfig(learning_rate=0.005, epochs=10))
    assert len(trace) == 11
    assert trace[0] == pytest.approx(sae.total_loss(m, X)[:2], rel=1e-5)
    assert trace[-1][0] < 0.7 * trace[0][0]
    again, trace2 = sae.train(m, X, sae.OptimConfig(learning_rate=0.005, epochs=10))
    assert np.array_equal(out.W, again.W) and trace == trace2


def test_pair_training_runs(rng):
    X, Y = rng.standard_normal((2, 300, 6))
    m = sae.init_sae("pair", 5, 6, 0, tied=False)
    out, trace = sae.train(m, (X, Y), sae.OptimConfig(epochs=3))
    assert len(trace) == 4 and not np.array_equal(out.Wx, m.Wx)


def test_divergence_raises_with_trace(rng):
    X = rng.standard_normal((256, 8))
    m = sae.init_sae("sequence", 4, 8, 0)
    with pytest.raises(sae.TrainingDiverged) as exc:
        sae.train(m, X, sae.OptimConfig(learning_rate=1e6, epochs=3))
    assert len(exc.value.trace) >= 1


def test_errors():
    m = sae.init_sae("sequence", 3, 4, 0)
    with pytest.raises(ModelError):
        sae.total_loss(m, np.zeros((0, 4)))
    with pytest.raises(ModelError):
        sae.encode_seq(m, np.zeros(5))
    with pytest.raises(ModelError):
        sae.init_sae("sequence", 3, 4, 0, lam=-1)
    with pytest.raises(ModelError):
        sae.train(m, np.zeros((10, 5)), sae.OptimConfig(epochs=1))


def test_lambda_sweep(rng):
    X = rng.standard_normal((200, 6))
    res = sae.sweep_lambda(lambda lam: sae.init_sae("sequence", 4, 6, 0, lam=lam), X[:150], X[150:],
                           sae.OptimConfig(epochs=2), lambdas=(0.0, 1.0))
    assert set(res) == {0.0, 1.0} and all(np.isfinite(v) for v in res.values())
