import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgeloc import mtlr
from forgeloc.numcore import NumericalError, ParamStore, Tape, Tensor, ops
from forgeloc.numcore.gradcheck import check_gradients

D = 4


def setup_heads(seed=0, dtype=np.float32):
    store = ParamStore(seed=seed, dtype=dtype)
    heads = mtlr.make_heads()
    mtlr.init_heads(store, D, heads)
    return store, {h.id: h for h in heads}


def random_streams(rng, B=2, T=9, dtype=np.float32):
    return {k: Tensor(rng.normal(size=(B, T, D)).astype(dtype)) for k in ("F_v", "F_a", "F_v_rec", "F_a_rec")}


def test_head_table_shape_and_weights():
    heads = mtlr.make_heads()
    assert [h.id for h in heads] == [f"H{i}" for i in range(1, 8)]
    assert sum(h.weight for h in heads) == pytest.approx(1.4)
    assert heads[0].inputs == ("F_v", "F_a", "F_v_rec", "F_a_rec")
    with pytest.raises(ValueError):
        mtlr.make_heads([0.1] * 6)


def test_logit_shapes():
    store, heads = setup_heads()
    streams = random_streams(np.random.default_rng(0))
    for hid, h in heads.items():
        fs = mtlr.head_forward(streams, h, store, k_mil=2)
        n = 4 if hid in ("H1", "H6", "H7") else 2
        assert fs.S.shape == (2, 9, n) and fs.s_video.shape == (2, n)


def test_zero_weights_give_uniform_probabilities():
    store, heads = setup_heads()
    store["heads/H1/W"].data[:] = 0
    fs = mtlr.head_forward(random_streams(np.random.default_rng(1)), heads["H1"], store, 2)
    p = np.exp(fs.S.data) / np.exp(fs.S.data).sum(-1, keepdims=True)
    np.testing.assert_allclose(p, 0.25)


def test_visual_head_ignores_audio_streams():
    store, heads = setup_heads()
    rng = np.random.default_rng(2)
    streams = random_streams(rng)
    base = mtlr.head_forward(streams, heads["H2"], store, 2).S.data
    streams["F_a"] = Tensor(rng.normal(size=(2, 9, D)).astype(np.float32))
    streams["F_a_rec"] = Tensor(rng.normal(size=(2, 9, D)).astype(np.float32))
    np.testing.assert_array_equal(mtlr.head_forward(streams, heads["H2"], store, 2).S.data, base)


def test_visual_head_gradient_isolation():
    store, heads = setup_heads(dtype=np.float64)
    rng = np.random.default_rng(3)
    streams = random_streams(rng, dtype=np.float64)

    def h2_grads(st_):
        with Tape() as tape:
            fs = mtlr.head_forward(st_, heads["H2"], store, 2)
            loss = mtlr.cross_entropy(fs.s_video, [1, 0])
        return tape.backward(loss, store)

    g1 = h2_grads(streams)
    streams["F_a"] = Tensor(rng.normal(size=(2, 9, D)))
    g2 = h2_grads(streams)
    for name in ("heads/H2/W", "heads/H2/b"):
        np.testing.assert_array_equal(g1[name], g2[name])
    assert not np.any(g1["heads/H3/W"])


def sort_oracle(col, k):
    return sum(sorted(col, reverse=True)[:k]) / k


def test_mil_pool_matches_sorting_oracle():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        T = int(rng.integers(1, 30))
        k = int(rng.integers(1, T + 1))
        col = rng.integers(-3, 4, size=T).astype(float) if rng.uniform() < 0.3 else rng.normal(size=T)
        got = float(mtlr.topk_mil_pool(col.reshape(T, 1), k).data[0])
        assert got == pytest.approx(sort_oracle(col.tolist(), k), abs=1e-12)


def test_mil_pool_hand_cases():
    assert float(mtlr.topk_mil_pool(np.array([[0.9], [0.1], [0.5]]), 2).data[0]) == pytest.approx(0.7)
    S = np.random.default_rng(5).normal(size=(6, 3))
    np.testing.assert_allclose(mtlr.topk_mil_pool(S, 6).data, S.mean(axis=0))
    with pytest.raises(ValueError):
        mtlr.topk_mil_pool(S, 7)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20), st.data())
def test_mil_pool_is_monotone(col, data):
    k = data.draw(st.integers(1, len(col)))
    i = data.draw(st.integers(0, len(col) - 1))
    bump = data.draw(st.floats(0, 5))
    before = float(mtlr.topk_mil_pool(np.array(col).reshape(-1, 1), k).data[0])
    col2 = list(col)
    col2[i] += bump
    after = float(mtlr.topk_mil_pool(np.array(col2).reshape(-1, 1), k).data[0])
    assert after >= before - 1e-12


def test_k_mil_rule():
    from forgeloc.config import RunConfig
    cfg = RunConfig()
    assert cfg.k_mil(120) == 15 and cfg.k_mil(4) == 1 and cfg.k_mil(9) == 2


def test_cross_entropy_limits():
    heads = mtlr.make_heads()
    labels = ["fake-both"]
    perfect = {}
    for h in heads:
        z = np.full((1, h.n_classes), -20.0)
        z[0, mtlr.head_target(labels[0], h)] = 20.0
        perfect[h.id] = Tensor(z)
    for h in heads:
        assert float(mtlr.cross_entropy(perfect[h.id], [mtlr.head_target("fake-both", h)]).data) <= 1e-8
    uniform4 = Tensor(np.zeros((1, 4)))
    assert float(mtlr.cross_entropy(uniform4, [2]).data) == pytest.approx(math.log(4))


def test_cls_loss_uniform_logits_hand_value():
    heads = mtlr.make_heads()
    s = {h.id: Tensor(np.zeros((1, h.n_classes))) for h in heads}
    expected = 0.8 * math.log(4) + 0.1 * (4 * math.log(2) + 2 * math.log(4))
    assert float(mtlr.cls_loss(s, ["real"], heads).data) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(1.663, abs=1e-3)


def test_binary_head_targets():
    heads = {h.id: h for h in mtlr.make_heads()}
    assert [mtlr.head_target(lab, heads["H2"]) for lab in ("real", "fake-visual", "fake-audio", "fake-both")] == [0, 1, 0, 1]
    assert [mtlr.head_target(lab, heads["H3"]) for lab in ("real", "fake-visual", "fake-audio", "fake-both")] == [0, 0, 1, 1]
    assert mtlr.head_target("fake-audio", heads["H1"]) == 2


def test_kl_hand_value():
    eps = 0.1
    a = Tensor(np.log(np.array([[[1 - eps, eps]]])))
    b = Tensor(np.log(np.array([[[eps, 1 - eps]]])))
    # the per-frame symmetric divergence is averaged with weight one half
    assert float(mtlr.kl_consistency(a, b).data) == pytest.approx(0.8 * math.log(9), abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kl_properties(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(2, 5, 4)) * 3)
    b = Tensor(rng.normal(size=(2, 5, 4)) * 3)
    ab = float(mtlr.kl_consistency(a, b).data)
    assert ab >= 0
    assert ab == pytest.approx(float(mtlr.kl_consistency(b, a).data), abs=1e-12)
    assert float(mtlr.kl_consistency(a, a).data) == 0.0


def test_total_loss_arithmetic():
    w = mtlr.LossWeights()
    ones = {k: Tensor(np.array(1.0, dtype=np.float32)) for k in mtlr.COMPONENTS}
    assert float(mtlr.total_loss(ones, w).data) == pytest.approx(1.3, abs=1e-6)
    zeros = {k: Tensor(np.array(0.0, dtype=np.float32)) for k in mtlr.COMPONENTS}
    assert float(mtlr.total_loss(zeros, w).data) == 0.0
    bad = dict(ones, L_KL=Tensor(np.array(np.nan, dtype=np.float32)))
    with pytest.raises(NumericalError):
        mtlr.total_loss(bad, w)


def test_total_loss_decomposition():
    rng = np.random.default_rng(6)
    vals = rng.uniform(0, 5, size=4).astype(np.float32)
    comps = {k: Tensor(np.array(v)) for k, v in zip(mtlr.COMPONENTS, vals)}
    w = mtlr.LossWeights(1.0, 0.1, 0.1, 0.1)
    expected = np.float32(vals[0]) + np.float32(0.1) * vals[1] + np.float32(0.1) * vals[2] + np.float32(0.1) * vals[3]
    assert float(mtlr.total_loss(comps, w).data) == pytest.approx(float(expected), rel=1e-6)


# -- finite-difference checks of the composite objectives ---------------------

@pytest.mark.parametrize("seed", range(10))
def test_cls_loss_gradient(seed):
    store, heads = setup_heads(seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    streams = {k: Tensor(rng.normal(size=(3, 6, D)), requires_grad=True) for k in ("F_v", "F_a", "F_v_rec", "F_a_rec")}
    labels = ["real", "fake-both", "fake-audio"]
    leaves = list(streams.values()) + [store["heads/H1/W"], store["heads/H5/b"]]
    for t in leaves:
        t.requires_grad = True

    def build():
        s = {hid: mtlr.head_forward(streams, h, store, 2).s_video for hid, h in heads.items()}
        return mtlr.cls_loss(s, labels, list(heads.values()))

    assert check_gradients(build, leaves) <= 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_kl_gradient(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
    assert check_gradients(lambda: mtlr.kl_consistency(a, b), [a, b]) <= 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_total_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(4,)), requires_grad=True)
    w = mtlr.LossWeights(1.0, 0.1, 0.1, 0.1)

    def build():
        comps = {
            "L_CLS": ops.sum(ops.mul(x, x)),
            "L_recon": ops.sum(ops.gelu(x)),
            "L_KL": ops.mean(ops.softmax(x)),
            "L_AICL": ops.sum(ops.relu(ops.add(x, Tensor(np.array(10.0))))),
        }
        return mtlr.total_loss(comps, w)

    assert check_gradients(build, [x]) <= 1e-3
