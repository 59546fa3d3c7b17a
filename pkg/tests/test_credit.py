import numpy as np
import pytest

from memcredit.credit import (EncoderParams, OracleDecoder, assign_baseline,
                              assign_reinstate_approx, assign_reinstate_exact, encode,
                              encoder_backward, reinstate_forward, synth_apply_at_write,
                              synth_loss_and_grads, synth_predict, synth_train)
from memcredit.errors import DivergenceError, MechanismContractError, ParameterError
from memcredit.memory import read, read_backward
from memcredit.nn import NetGrads, Rng, cross_entropy, finite_diff_grad

from conftest import Tiny, rel_err


def test_encode_zero_weights_gives_bias():
    t = Tiny(0)
    for p in t.enc.params():
        p[:] = 0
    t.enc.layer2.bias[:, 0] = [1, 2, 3, 4]
    _, e = encode(t.enc, t.rng.random((t.obs, 3)))
    np.testing.assert_array_equal(e, np.tile([[1], [2], [3], [4]], 3))


def test_encode_batched_equals_single():
    t = Tiny(1)
    x = t.rng.random((t.obs, 5))
    _, e = encode(t.enc, x)
    for j in range(5):
        np.testing.assert_allclose(e[:, j:j + 1], encode(t.enc, x[:, j])[1], atol=1e-12)


def encoder_fd(enc, loss):
    return NetGrads(*(finite_diff_grad(lambda _: loss(), p) for p in enc.params()))


def test_encoder_backward_finite_differences():
    t = Tiny(2)
    x = t.rng.random((t.obs, 3))
    c = t.rng.normal((t.d_e, 3))

    def loss():
        return float(np.sum(c * encode(t.enc, x)[1]))

    h, _ = encode(t.enc, x)
    grads = encoder_backward(t.enc, x, h, c)
    fd = encoder_fd(t.enc, loss)
    for a, b in zip(grads.arrays(), fd.arrays()):
        assert rel_err(a, b) <= 1e-5


def slot_grads(t, mem, q=None, y=3):
    q = t.rng.normal(t.d_e) if q is None else q
    r = read(mem, q)
    return read_backward(mem, q, r, cross_entropy(r.p, y)[1])


def test_baseline_zero_and_missing_extras():
    t = Tiny(3)
    mem = t.memory(4)
    zero = assign_baseline(t.enc, mem, np.zeros((t.d_e, 4)))
    assert all(not a.any() for a in zero.arrays())
    with pytest.raises(MechanismContractError):
        assign_baseline(t.enc, t.memory(2, store=False), np.zeros((t.d_e, 2)))


def test_baseline_fresh_slot_equals_recompute():
    t = Tiny(4)
    mem = t.memory(1)
    g = t.rng.normal((t.d_e, 1))
    x = mem.observations
    h, _ = encode(t.enc, x)
    fresh = encoder_backward(t.enc, x, h, g)
    assert assign_baseline(t.enc, mem, g).max_abs_diff(fresh) <= 1e-12


def test_baseline_additive_over_slots():
    t = Tiny(5)
    mem = t.memory(2)
    g = t.rng.normal((t.d_e, 2))
    both = assign_baseline(t.enc, mem, g)
    first = assign_baseline(t.enc, mem, np.column_stack([g[:, 0], np.zeros(t.d_e)]))
    second = assign_baseline(t.enc, mem, np.column_stack([np.zeros(t.d_e), g[:, 1]]))
    assert both.max_abs_diff(first + second) <= 1e-12


def test_synth_predict_zero_init_and_deterministic():
    t = Tiny(6)
    e = t.rng.normal(t.d_e)
    assert not synth_predict(t.syn, e, 4).any()
    t.syn.layer2.weights[:] = t.rng.normal(t.syn.layer2.weights.shape)
    np.testing.assert_array_equal(synth_predict(t.syn, e, 4), synth_predict(t.syn, e, 4))


def test_synth_apply_zero_gradient_leaves_encoder():
    t = Tiny(7)
    x = t.rng.random((t.obs, 1))
    h, e = encode(t.enc, x)
    before = t.enc.copy()
    synth_apply_at_write(t.enc, x, h, e, synth_predict(t.syn, e, 1))
    assert np.array_equal(t.enc.layer1.weights, before.layer1.weights)
    assert all(np.array_equal(a, b) for a, b in zip(t.enc.params(), before.params()))


def test_synth_apply_matches_baseline_plumbing():
    t = Tiny(8)
    mem = t.memory(1)
    g_hat = t.rng.normal((t.d_e, 1))
    ref = t.enc.copy()
    ref.apply(assign_baseline(ref, mem, g_hat))
    x = mem.observations
    h, e = encode(t.enc, x)
    synth_apply_at_write(t.enc, x, h, e, g_hat)
    for a, b in zip(t.enc.params(), ref.params()):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_synth_apply_is_stateful_and_checks_finiteness():
    t = Tiny(9)
    x = t.rng.random((t.obs, 1))
    h, e = encode(t.enc, x)
    g = t.rng.normal((t.d_e, 1))
    p0 = t.enc.layer2.weights.copy()
    synth_apply_at_write(t.enc, x, h, e, g)
    d1 = t.enc.layer2.weights - p0
    p1 = t.enc.layer2.weights.copy()
    synth_apply_at_write(t.enc, x, h, e, g)
    d2 = t.enc.layer2.weights - p1
    assert not np.array_equal(d1, d2)
    with pytest.raises(DivergenceError):
        synth_apply_at_write(t.enc, x, h, e, np.full((t.d_e, 1), np.inf))


def test_synth_train_at_fixed_point():
    t = Tiny(10)
    t.syn.layer2.weights[:] = t.rng.normal(t.syn.layer2.weights.shape)
    e = t.rng.normal((t.d_e, 5))
    y = np.arange(5)
    target = synth_predict(t.syn, e, y, scale=2.0)
    before = t.syn.copy()
    assert synth_train(t.syn, e, y, target, scale=2.0) == 0.0
    assert t.syn.equals(before) is False  # ADAM step counter advanced
    assert all(np.array_equal(a, b) for a, b in zip(t.syn.params(), before.params()))


def test_synth_train_gradient_finite_differences():
    t = Tiny(11)
    t.syn.layer2.weights[:] = t.rng.normal(t.syn.layer2.weights.shape) * 0.3
    e = t.rng.normal((t.d_e, 6))
    y = t.rng.integers(10, size=6)
    g = t.rng.normal((t.d_e, 6))
    _, grads = synth_loss_and_grads(t.syn, e, y, g, scale=3.0)
    fd = NetGrads(*(finite_diff_grad(lambda _: synth_loss_and_grads(t.syn, e, y, g, 3.0)[0], p)
                    for p in t.syn.params()))
    for a, b in zip(grads.arrays(), fd.arrays()):
        assert rel_err(a, b) <= 1e-5


def test_synth_regression_recovers_linear_map():
    rng = Rng(12)
    t = Tiny(12)
    t.syn.lr = 3e-3
    A = rng.normal((t.d_e, t.d_e)) * 0.5
    e = rng.normal((t.d_e, 64))
    y = rng.integers(10, size=64)
    g = A @ e
    first = synth_train(t.syn, e, y, g)
    for _ in range(1500):
        last = synth_train(t.syn, e, y, g)
    assert last < 0.05 * first
    pred = synth_predict(t.syn, e, y)
    assert np.mean((pred - g) ** 2) <= 1.5 * last


def test_reinstate_oracle_stub_equals_encode():
    t = Tiny(13)
    mem = t.memory(5)
    rs = reinstate_forward(mem, OracleDecoder(), t.enc)
    np.testing.assert_array_equal(rs.e, encode(t.enc, mem.observations)[1])


def test_reinstate_decoder_range_and_batching():
    t = Tiny(14)
    mem = t.memory(6, store=False)
    rs = reinstate_forward(mem, t.dec, t.enc)
    assert rs.x_hat.min() >= 0 and rs.x_hat.max() <= 1
    for i in range(6):
        one = reinstate_forward(mem, t.dec, t.enc, subset=[i])
        np.testing.assert_allclose(one.e[:, 0], rs.e[:, i], atol=1e-12)
        np.testing.assert_allclose(one.x_hat[:, 0], rs.x_hat[:, i], atol=1e-12)


def exact_loss(t, mem, dec, q, y, tau):
    def loss():
        e = reinstate_forward(mem, dec, t.enc).e
        return cross_entropy(read(mem, q, tau, embeddings=e).p, y)[0]
    return loss


def test_reinstate_exact_finite_differences_six_slots():
    t = Tiny(15)
    mem = t.memory(6, store=False)
    q = t.rng.normal(t.d_e)
    res = assign_reinstate_exact(mem, t.dec, t.enc, q, 2, tau=0.5)
    fd = encoder_fd(t.enc, exact_loss(t, mem, t.dec, q, 2, 0.5))
    for a, b in zip(res.grads.arrays(), fd.arrays()):
        assert rel_err(a, b) <= 1e-4


def test_reinstate_exact_oracle_is_naive_recompute():
    t = Tiny(16)
    mem = t.memory(6)
    q = t.rng.normal(t.d_e)
    res = assign_reinstate_exact(mem, OracleDecoder(), t.enc, q, 5)
    x = mem.observations
    h, e = encode(t.enc, x)
    r = read(mem, q, embeddings=e)
    loss, g_p = cross_entropy(r.p, 5)
    g_e = read_backward(mem, q, r, g_p, embeddings=e)
    naive = encoder_backward(t.enc, x, h, g_e)
    assert abs(res.loss - loss) <= 1e-12
    assert res.grads.max_abs_diff(naive) <= 1e-12


def test_reinstate_exact_symmetric_degenerate_case():
    t = Tiny(17)
    mem = t.memory(4, store=True, labels=[0, 1, 2, 3])
    # identical observations give identical recomputed embeddings
    mem._x[:] = mem._x[:, :1]
    q = t.rng.normal(t.d_e)
    res = assign_reinstate_exact(mem, OracleDecoder(), t.enc, q, 1)
    np.testing.assert_allclose(res.read.w, 0.25, atol=1e-15)
    fd = encoder_fd(t.enc, exact_loss(t, mem, OracleDecoder(), q, 1, 1.0))
    for a, b in zip(res.grads.arrays(), fd.arrays()):
        assert rel_err(a, b) <= 1e-4


def test_reinstate_approx_equivalences():
    t = Tiny(18)
    mem = t.memory(5)
    g = slot_grads(t, mem)
    base = assign_baseline(t.enc, mem, g)
    approx = assign_reinstate_approx(mem, OracleDecoder(), t.enc, g)
    assert approx.max_abs_diff(base) <= 1e-12
    zero = assign_reinstate_approx(mem, t.dec, t.enc, np.zeros_like(g))
    assert all(not a.any() for a in zero.arrays())
    parts = [assign_reinstate_approx(mem, t.dec, t.enc, g, subset=[i]) for i in range(5)]
    full = assign_reinstate_approx(mem, t.dec, t.enc, g)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    assert full.max_abs_diff(total) <= 1e-12
    with pytest.raises(ParameterError):
        assign_reinstate_approx(mem, t.dec, t.enc, g, subset=[5])


def test_reinstate_approx_subset_scaling():
    t = Tiny(19)
    mem = t.memory(4)
    g = slot_grads(t, mem)
    half = assign_reinstate_approx(mem, t.dec, t.enc, g, subset=[0, 2], scale=2.0)
    raw = assign_reinstate_approx(mem, t.dec, t.enc, g, subset=[0, 2])
    assert half.max_abs_diff(raw.scaled(2.0)) == 0.0


def test_credit_never_touches_decoder():
    t = Tiny(20)
    mem = t.memory(5)
    before = t.dec.copy()
    q = t.rng.normal(t.d_e)
    t.enc.apply(assign_reinstate_exact(mem, t.dec, t.enc, q, 1).grads)
    t.enc.apply(assign_reinstate_approx(mem, t.dec, t.enc, slot_grads(t, mem)))
    assert t.dec.equals(before)
