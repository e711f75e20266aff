import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgeloc.numcore import (
    Adam, NumericalError, ParamStore, ShapeError, Tape, Tensor, no_grad, ops, sinusoidal_pe,
)
from forgeloc.numcore.gradcheck import check_gradients

SEEDS = range(10)


def leaf(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
    return Tensor(data.astype(np.float64), requires_grad=True)


def weighted(out, rng_w):
    # Random linear functional so every output entry contributes.
    return ops.sum(ops.mul(out, Tensor(rng_w)))


def _attention(rng):
    q, k, v = leaf(rng, 2, 3, 4), leaf(rng, 2, 5, 4), leaf(rng, 2, 5, 4)
    return (lambda: ops.attention(q, k, v, n_heads=2)), [q, k, v]


def _take(rng):
    x = leaf(rng, 2, 5, 3)
    idx = np.array([[4, 0, 0], [1, 2, 3]])
    return (lambda: ops.take(x, idx, axis=1)), [x]


PRIMITIVES = [
    "add", "attention", "broadcast_to", "concat", "conv1d", "gelu", "layer_norm", "log",
    "log_softmax", "matmul", "mean", "mul", "relu", "reshape", "softmax", "sq_l2", "sub",
    "sum", "take", "topk_mean",
]


def build_case(kind, rng):
    if kind == "attention":
        return _attention(rng)
    if kind == "take":
        return _take(rng)
    if kind in ("add", "sub", "mul"):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4)
        return (lambda: getattr(ops, kind)(a, b)), [a, b]
    if kind == "matmul":
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        return (lambda: ops.matmul(a, b)), [a, b]
    if kind == "conv1d":
        x, w = leaf(rng, 2, 6, 3), leaf(rng, 3, 3, 4)
        return (lambda: ops.conv1d(x, w)), [x, w]
    if kind == "concat":
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 4)
        return (lambda: ops.concat([a, b], axis=-1)), [a, b]
    if kind in ("mean", "sum"):
        x = leaf(rng, 3, 4)
        return (lambda: getattr(ops, kind)(x, axis=0)), [x]
    if kind == "log":
        x = leaf(rng, 3, 4, positive=True)
        return (lambda: ops.log(x)), [x]
    if kind == "topk_mean":
        x = leaf(rng, 7, 3)
        return (lambda: ops.topk_mean(x, 3, axis=0)), [x]
    if kind == "broadcast_to":
        x = leaf(rng, 1, 4)
        return (lambda: ops.broadcast_to(x, (3, 4))), [x]
    if kind == "reshape":
        x = leaf(rng, 3, 4)
        return (lambda: ops.reshape(x, (2, 6))), [x]
    if kind == "relu":
        # keep away from the kink so finite differences are meaningful
        x = leaf(rng, 3, 4)
        x.data[np.abs(x.data) < 1e-2] = 0.5
        return (lambda: ops.relu(x)), [x]
    x = leaf(rng, 3, 5)
    return (lambda: getattr(ops, kind)(x)), [x]


@pytest.mark.parametrize("kind", PRIMITIVES)
def test_primitive_gradients_match_finite_differences(kind):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        fwd, leaves = build_case(kind, rng)
        w = np.random.default_rng(1000 + seed).normal(size=fwd().shape)
        err = check_gradients(lambda: weighted(fwd(), w), leaves)
        assert err <= 1e-3, (kind, seed, err)


def test_softmax_symmetric_case():
    out = ops.softmax(Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).normal(scale=5, size=(4, 7)).astype(np.float32)
    p = ops.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_weights_are_distributions():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.normal(size=(2, 5, 8)).astype(np.float32)) for _ in range(3))
    store = []
    ops.attention(q, k, v, n_heads=4, weights_out=store)
    w = store[0]
    assert w.shape == (2, 4, 5, 5)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


def test_matmul_identity():
    a = np.random.default_rng(3).normal(size=(2, 2)).astype(np.float32)
    out = ops.matmul(Tensor(np.eye(2, dtype=np.float32)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_layer_norm_constant_row_is_zero():
    out = ops.layer_norm(Tensor(np.full((2, 6), 3.7, dtype=np.float32)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_output_raises():
    with pytest.raises(NumericalError):
        ops.scale(Tensor(np.array([3e38], dtype=np.float32)), 10.0)
    with pytest.raises(NumericalError):
        ops.log(Tensor(np.array([0.0, 1.0])))


def test_backward_square():
    store = ParamStore()
    x = store.add("x", np.array(3.0))
    with Tape() as tape:
        loss = ops.mul(x, x)
    assert tape.backward(loss, store)["x"] == pytest.approx(6.0)


def test_backward_constant_loss_gives_zero_gradients():
    store = ParamStore()
    store.add("w", np.ones((2, 2)))
    with Tape() as tape:
        loss = ops.sum(Tensor(np.ones(3, dtype=np.float32)))
    grads = tape.backward(loss, store)
    np.testing.assert_array_equal(grads["w"], 0.0)


def test_backward_requires_scalar_loss():
    store = ParamStore()
    w = store.add("w", np.ones(3))
    with Tape() as tape:
        out = ops.scale(w, 2.0)
    with pytest.raises(ShapeError):
        tape.backward(out, store)


def test_backward_leaves_parameters_untouched():
    store = ParamStore()
    w = store.add("w", np.arange(4.0).reshape(2, 2))
    before = w.data.copy()
    with Tape() as tape:
        loss = ops.sum(ops.matmul(w, w))
    tape.backward(loss, store)
    np.testing.assert_array_equal(w.data, before)


def test_no_grad_records_nothing():
    store = ParamStore()
    w = store.add("w", np.ones(3))
    with Tape() as tape:
        with no_grad():
            ops.sum(w)
    assert tape.nodes == []


def test_tape_replay_is_bitwise_deterministic():
    def run():
        store = ParamStore(seed=5)
        w = store.uniform("w", (8, 8), fan_in=8)
        x = Tensor(np.random.default_rng(1).normal(size=(2, 6, 8)).astype(np.float32))
        with Tape() as tape:
            h = ops.attention(ops.matmul(x, w), x, x, n_heads=2)
            loss = ops.sum(ops.sq_l2(ops.gelu(h)))
        return loss.data, tape.backward(loss, store)["w"]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_sinusoidal_pe_values():
    pe = sinusoidal_pe(4, 6)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-6)
    assert pe[1, 0] == pytest.approx(0.841471, abs=1e-6)
    assert sinusoidal_pe(1, 8).shape == (1, 8)
    t, j, D = 3, 2, 6
    assert pe[t, 2 * j + 1] == pytest.approx(math.cos(t / 10000 ** (2 * j / D)), abs=1e-6)


def test_sinusoidal_pe_rejects_odd_width():
    with pytest.raises(ValueError):
        sinusoidal_pe(4, 5)


def test_param_names_are_independent_streams():
    a = ParamStore(seed=1)
    a.uniform("layer/w", (3, 3), 3)
    b = ParamStore(seed=1)
    b.uniform("another", (5,), 5)
    b.uniform("layer/w", (3, 3), 3)
    np.testing.assert_array_equal(a["layer/w"].data, b["layer/w"].data)
    assert b.names() == ["another", "layer/w"]
    with pytest.raises(KeyError):
        b.zeros("another", (1,))


def test_uniform_init_bound():
    store = ParamStore(seed=0)
    w = store.uniform("w", (100, 16), fan_in=16)
    assert np.abs(w.data).max() <= 0.25


def test_adam_zero_gradient_leaves_parameter():
    store = ParamStore()
    store.add("x", np.array([1.5]))
    opt = Adam(lr=0.1)
    opt.step(store, {"x": np.zeros(1)})
    assert store["x"].data[0] == np.float32(1.5)
    assert opt.t == 1


def test_adam_first_step_on_linear_loss():
    store = ParamStore()
    store.add("x", np.array([0.0]))
    with Tape() as tape:
        loss = ops.sum(store["x"])
    Adam(lr=0.1).step(store, tape.backward(loss, store))
    assert store["x"].data[0] == pytest.approx(-0.1, abs=1e-6)


def test_adam_rejects_non_positive_lr():
    with pytest.raises(ValueError):
        Adam(lr=0.0)


def test_adam_runs_are_bitwise_identical():
    def run():
        store = ParamStore(seed=11)
        store.uniform("w", (4, 3), 4)
        opt = Adam(lr=0.01)
        x = Tensor(np.random.default_rng(0).normal(size=(5, 4)).astype(np.float32))
        for _ in range(20):
            with Tape() as tape:
                loss = ops.sum(ops.sq_l2(ops.matmul(x, store["w"])))
            opt.step(store, tape.backward(loss, store))
        return store["w"].data

    assert run().tobytes() == run().tobytes()
