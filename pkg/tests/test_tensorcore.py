import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bootdistill import tensorcore as tc
from bootdistill.verify import check_primitive_grads, numeric_grad, relative_error


def _plan_ps(W, b):
    return tc.ParamSet({"in.W": tc.Tensor(W), "in.b": tc.Tensor(b)}, layer_plan=[{"name": "in", "in": W.shape[0], "out": W.shape[1], "bias": True}])


def test_zero_network_gives_zero_output():
    rng = np.random.default_rng(0)
    ps = tc.init_mlp(rng, 3, (5, 5), 2, embed_dims=(4,))
    for p in ps.params.values():
        p.data[...] = 0.0
    out = tc.forward_mlp(ps, rng.standard_normal((7, 3)), [rng.standard_normal((7, 4))])
    assert np.array_equal(out.data, np.zeros((7, 2)))


def test_identity_layer():
    x = np.random.default_rng(1).standard_normal((4, 3))
    out = tc.forward_mlp(_plan_ps(np.eye(3), np.zeros(3)), x)
    assert np.array_equal(out.data, x)


def test_mlp_matches_scalar_loop():
    rng = np.random.default_rng(2)
    ps = tc.init_mlp(rng, 2, (3,), 2, embed_dims=(2,))
    for p in ps.params.values():
        p.data += rng.standard_normal(p.shape)
    x = rng.standard_normal((2, 2))
    e = rng.standard_normal((2, 2))
    got = tc.forward_mlp(ps, x, [e]).data

    W_in, b_in, W_e = ps["in.W"].data, ps["in.b"].data, ps["emb0.W"].data
    W_h, b_h = ps["h1.W"].data, ps["h1.b"].data
    want = np.zeros((2, 2))
    for n in range(2):
        hid = []
        for j in range(3):
            z = b_in[j]
            for i in range(2):
                z += x[n, i] * W_in[i, j] + e[n, i] * W_e[i, j]
            hid.append(z / (1.0 + np.exp(-z)))
        for k in range(2):
            acc = b_h[k]
            for j in range(3):
                acc += hid[j] * W_h[j, k]
            want[n, k] = acc
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-13)


def test_shape_mismatch_names_layer():
    ps = tc.init_mlp(np.random.default_rng(0), 3, (4,), 1)
    with pytest.raises(tc.DimensionError, match="'in'"):
        tc.forward_mlp(ps, np.zeros((2, 5)))


def test_sum_gradient_is_ones():
    x = tc.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with tc.Tape() as tape:
        loss = x.sum()
    assert np.array_equal(tc.backward(tape, loss)[x], np.ones((2, 3)))


def test_unused_parameter_gets_zero():
    x = tc.Tensor([1.0, 2.0], requires_grad=True)
    p = tc.Tensor([3.0], requires_grad=True)
    with tc.Tape() as tape:
        loss = (x * x).sum()
    assert np.array_equal(tc.backward(tape, loss)[p], np.zeros(1))


def test_non_scalar_loss_rejected():
    x = tc.Tensor([1.0, 2.0], requires_grad=True)
    with tc.Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        tc.backward(tape, y)


def test_random_net_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    ps = tc.init_mlp(rng, 2, (6, 6), 2, embed_dims=(3,))
    x = rng.standard_normal((5, 2))
    e = rng.standard_normal((5, 3))

    def loss_fn():
        out = tc.forward_mlp(ps, x, [e])
        return (out * out).sum()

    with tc.Tape() as tape:
        loss = loss_fn()
    grads = ps.grads(tc.backward(tape, loss))

    def f():
        with tc.no_grad():
            return float(loss_fn().data)

    for name, p in ps.params.items():
        fd = numeric_grad(f, p.data, h=1e-5)
        assert relative_error(grads[name], fd) < 1e-6, name


def test_every_primitive_gradchecks():
    for check in check_primitive_grads():
        assert check.value < 1e-6, check.line()


def test_stop_gradient_forward_value_is_exact():
    x = tc.Tensor(np.random.default_rng(4).standard_normal((3, 3)))
    assert np.array_equal(tc.stop_gradient(x).data, x.data)


def test_stop_gradient_times_self():
    data = np.array([0.5, -1.5, 2.0])
    x = tc.Tensor(data, requires_grad=True)
    with tc.Tape() as tape:
        loss = (tc.stop_gradient(x) * x).sum()
    np.testing.assert_array_equal(tc.backward(tape, loss)[x], data)


def test_stop_gradient_sum_has_zero_grad():
    x = tc.Tensor([1.0, 2.0], requires_grad=True)
    with tc.Tape() as tape:
        loss = tc.stop_gradient(x).sum() + 0.0 * x.sum()
    assert np.array_equal(tc.backward(tape, loss)[x], np.zeros(2))


def test_no_grad_records_nothing():
    x = tc.Tensor([1.0], requires_grad=True)
    with tc.Tape() as tape:
        with tc.no_grad():
            (x * x).sum()
    assert len(tape) == 0


def _one_param(value, grad):
    ps = tc.ParamSet({"w": tc.Tensor(np.array(value, dtype=float))})
    return ps, {"w": np.array(grad, dtype=float)}


def test_adamw_lr_zero_moves_only_moments():
    ps, g = _one_param([1.0, 2.0], [0.5, -0.5])
    tc.adamw_step(ps, g, lr=0.0)
    assert np.array_equal(ps["w"].data, [1.0, 2.0])
    np.testing.assert_allclose(ps.m["w"], 0.1 * g["w"])
    assert ps.step == 1


def test_adamw_first_step_scalar_oracle():
    g = 0.3
    lr, eps = 0.01, 1e-8
    ps, grads = _one_param([1.0], [g])
    tc.adamw_step(ps, grads, lr=lr, eps=eps)
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    want = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert ps["w"].data[0] == pytest.approx(want, rel=1e-15)


def test_adamw_decay_only():
    ps, g = _one_param([2.0, -4.0], [0.0, 0.0])
    tc.adamw_step(ps, g, lr=0.01, weight_decay=0.1)
    np.testing.assert_allclose(ps["w"].data, np.array([2.0, -4.0]) * (1 - 0.001), rtol=1e-15)


def test_adamw_names_bad_parameter():
    ps, _ = _one_param([1.0], [0.0])
    with pytest.raises(FloatingPointError, match="'w'"):
        tc.adamw_step(ps, {"w": np.array([np.nan])}, lr=0.1)


def test_ema_examples():
    ps, _ = _one_param([1.0], [0.0])
    ps.shadow["w"][...] = 0.0
    tc.ema_update(ps, 0.9999)
    assert ps.shadow["w"][0] == pytest.approx(1e-4, rel=1e-12)
    tc.ema_update(ps, 0.0)
    assert ps.shadow["w"][0] == 1.0
    before = ps.shadow["w"].copy()
    tc.ema_update(ps, 0.5)
    assert np.array_equal(ps.shadow["w"], before)


def test_training_is_bit_deterministic():
    def run():
        rng = np.random.default_rng(11)
        ps = tc.init_mlp(rng, 2, (8,), 2)
        for _ in range(5):
            x = rng.standard_normal((4, 2))
            with tc.Tape() as tape:
                out = tc.forward_mlp(ps, x)
                loss = (out * out).mean()
            tc.adamw_step(ps, ps.grads(tc.backward(tape, loss)), 1e-2)
            tc.ema_update(ps, 0.9)
        return json.dumps(tc.checkpoint_dict(ps))

    assert run() == run()


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(5)
    ps = tc.init_mlp(rng, 2, (4,), 2, embed_dims=(3,))
    for p in ps.params.values():
        p.data += rng.standard_normal(p.shape) / 3.0
    ps.step = 7
    path = tmp_path / "ck.json"
    tc.save_checkpoint(path, ps, rng, {"tag": "x"})
    back, state, meta = tc.load_checkpoint(path)
    assert meta == {"tag": "x"}
    assert back.step == 7
    for name in ps.names():
        assert np.array_equal(back[name].data, ps[name].data)
        assert np.array_equal(back.shadow[name], ps.shadow[name])
    assert tc.rng_from_state(state).random() == rng.random()
    raw = json.loads(path.read_text())
    assert raw["version"] == 1
    assert set(raw) >= {"layer_plan", "params", "ema", "opt_state", "rng_state"}


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-5, 5)), arrays(np.float64, (1, 2), elements=st.floats(-5, 5)))
def test_broadcast_add_gradient_sums_over_batch(a, b):
    ta, tb = tc.Tensor(a, requires_grad=True), tc.Tensor(b, requires_grad=True)
    with tc.Tape() as tape:
        loss = (ta + tb).sum()
    grads = tc.backward(tape, loss)
    assert np.array_equal(grads[tb], np.full((1, 2), 3.0))
    assert np.array_equal(grads[ta], np.ones((3, 2)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-3, 3)))
def test_silu_gradient_matches_closed_form(x):
    t = tc.Tensor(x, requires_grad=True)
    with tc.Tape() as tape:
        loss = tc.silu(t).sum()
    sig = 1.0 / (1.0 + np.exp(-x))
    np.testing.assert_allclose(tc.backward(tape, loss)[t], sig * (1 + x * (1 - sig)), rtol=1e-12, atol=1e-15)
