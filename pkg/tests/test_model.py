import numpy as np
import pytest

import oracles
from gmatt import nn_core as nn
from gmatt.errors import ShapeMismatch
from gmatt.model import (ModelConfig, TreeTransformer, decoder_forward, encoder_forward,
                         extract_cross_attention, multi_head_attention, tcb, tcb_single)
from gmatt.training import AdamState, adam_step

D = 3


def _tcb_weights(rng, d=D, scale=1.0):
    return {k: nn.Tensor(rng.normal(size=s) * scale) for k, s in
            [("W_t", (d, d)), ("W_p", (d, d)), ("W_c", (d, d)), ("W_2", (d, d)), ("b_2", (d,)),
             ("v_p", (d,)), ("v_c", (d,))]}


def _chain(n):
    """Path graph 0 - 1 - ... - n-1 rooted at 0, as batch-of-one index arrays."""
    parent = np.array([[-1] + list(range(n - 1))])
    children = np.full((1, n, 1), -1)
    children[0, :n - 1, 0] = np.arange(1, n)
    return parent, children


def test_mha_single_head_reduces_to_attention():
    rng = np.random.default_rng(0)
    x = nn.Tensor(rng.normal(size=(1, 4, 6)))
    w = {k: nn.Tensor(rng.normal(size=(6, 6))) for k in ("W_q", "W_k", "W_v", "W_o")}
    out, _ = multi_head_attention(x, x, None, w, heads=1)
    ref, _ = nn.scaled_dot_attention(x.data[0] @ w["W_q"].data, x.data[0] @ w["W_k"].data,
                                     x.data[0] @ w["W_v"].data)
    np.testing.assert_allclose(out.data[0], ref.data @ w["W_o"].data, rtol=1e-12)


def test_mha_shapes_and_rows():
    rng = np.random.default_rng(1)
    q = nn.Tensor(rng.normal(size=(2, 5, 8)))
    kv = nn.Tensor(rng.normal(size=(2, 7, 8)))
    w = {k: nn.Tensor(rng.normal(size=(8, 8))) for k in ("W_q", "W_k", "W_v", "W_o")}
    mask = np.ones((2, 1, 1, 7), dtype=bool)
    mask[1, ..., 5:] = False
    out, weights = multi_head_attention(q, kv, mask, w, heads=4)
    assert out.shape == (2, 5, 8)
    assert weights.shape == (2, 4, 5, 7)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0)
    assert np.all(weights.data[1, ..., 5:] == 0.0)


def test_mha_width_mismatch():
    w = {k: nn.Tensor(np.zeros((4, 4))) for k in ("W_q", "W_k", "W_v", "W_o")}
    with pytest.raises(ShapeMismatch):
        multi_head_attention(nn.Tensor(np.zeros((1, 2, 3))), nn.Tensor(np.zeros((1, 2, 4))), None, w, 1)


def test_tcb_zero_weights_give_bias():
    rng = np.random.default_rng(0)
    w = {k: nn.Tensor(np.zeros_like(v.data)) for k, v in _tcb_weights(rng).items()}
    w["b_2"] = nn.Tensor(np.array([1.0, -2.0, 0.5]))
    parent, children = _chain(4)
    out = tcb_single(nn.Tensor(rng.normal(size=(1, 4, D))), parent, children, w)
    np.testing.assert_array_equal(out.data, np.tile([1.0, -2.0, 0.5], (1, 4, 1)))


def test_tcb_single_node_uses_both_virtual_vectors():
    rng = np.random.default_rng(1)
    w = _tcb_weights(rng)
    x = nn.Tensor(rng.normal(size=(1, 1, D)))
    parent, children = np.array([[-1]]), np.full((1, 1, 1), -1)
    base = tcb_single(x, parent, children, w).data
    for key in ("v_p", "v_c"):
        w2 = dict(w)
        w2[key] = nn.Tensor(w[key].data + 1.0)
        assert not np.allclose(tcb_single(x, parent, children, w2).data, base)


def test_tcb_hand_computed_chain():
    eye = np.eye(2)
    w = {"W_t": eye, "W_p": eye, "W_c": eye, "W_2": eye, "b_2": np.zeros(2),
         "v_p": np.array([0.5, 0.0]), "v_c": np.array([0.0, -4.0])}
    w = {k: nn.Tensor(v) for k, v in w.items()}
    x = np.array([[[1.0, 2.0], [-3.0, 1.0], [0.5, -1.0]]])
    parent, children = _chain(3)
    out = tcb_single(nn.Tensor(x), parent, children, w).data[0]
    # node 0: x0 + v_p + x1; node 1: x1 + x0 + x2; node 2: x2 + x1 + v_c; then ReLU
    expected = np.maximum([[1 + 0.5 - 3, 2 + 0 + 1], [-3 + 1 + 0.5, 1 + 2 - 1],
                           [0.5 - 3 + 0, -1 + 1 - 4]], 0.0)
    np.testing.assert_allclose(out, expected)


def test_tcb_averages_children():
    eye = np.eye(1)
    w = {k: nn.Tensor(v) for k, v in {"W_t": 0 * eye, "W_p": 0 * eye, "W_c": eye, "W_2": eye,
                                      "b_2": np.zeros(1), "v_p": np.zeros(1), "v_c": np.zeros(1)}.items()}
    x = nn.Tensor(np.array([[[0.0], [2.0], [6.0], [1.0]]]))
    parent = np.array([[-1, 0, 0, 0]])
    children = np.array([[[1, 2, 3], [-1, -1, -1], [-1, -1, -1], [-1, -1, -1]]])
    assert tcb_single(x, parent, children, w).data[0, 0, 0] == pytest.approx(3.0)


def test_tcb_depth_one_equals_single():
    rng = np.random.default_rng(2)
    w = _tcb_weights(rng)
    parent, children = _chain(5)
    x = nn.Tensor(rng.normal(size=(1, 5, D)))
    np.testing.assert_array_equal(tcb(x, parent, children, 1, [w]).data,
                                  tcb_single(x, parent, children, w).data)


def test_tcb_depth_two_reaches_two_hops():
    rng = np.random.default_rng(3)
    ws = [_tcb_weights(rng), _tcb_weights(rng)]
    parent, children = _chain(3)
    x = rng.normal(size=(1, 3, D))
    y = x.copy()
    y[0, 2] += 1.0
    one = [tcb(nn.Tensor(v), parent, children, 1, ws).data[0, 0] for v in (x, y)]
    two = [tcb(nn.Tensor(v), parent, children, 2, ws).data[0, 0] for v in (x, y)]
    np.testing.assert_array_equal(one[0], one[1])
    assert not np.allclose(two[0], two[1])


def test_tcb_without_neighbours_is_feed_forward():
    rng = np.random.default_rng(4)
    w = _tcb_weights(rng)
    w["W_p"] = nn.Tensor(np.zeros((D, D)))
    w["W_c"] = nn.Tensor(np.zeros((D, D)))
    parent, children = _chain(4)
    x = rng.normal(size=(1, 4, D))
    ffn = np.maximum(x @ w["W_t"].data, 0) @ w["W_2"].data + w["b_2"].data
    np.testing.assert_allclose(tcb(nn.Tensor(x), parent, children, 1, [w]).data, ffn, rtol=1e-12)


def test_default_config():
    cfg = ModelConfig(encoder_vocab=10, decoder_vocab=10)
    assert (cfg.d_model, cfg.heads, cfg.d_k, cfg.tcb_depth, cfg.path_length, cfg.edge_dim) == (
        256, 8, 32, 2, 64, 4)
    with pytest.raises(ValueError):
        ModelConfig(d_model=64, path_length=64, edge_dim=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_encoder_shapes_and_batch_permutation():
    rng = np.random.default_rng(0)
    model = oracles.tiny_model()
    batch = oracles.random_batch(rng, model.cfg, sizes=(5, 3, 7))
    out = encoder_forward(batch, model).data
    assert out.shape == (3, 7, 8)
    perm = [2, 0, 1]
    np.testing.assert_allclose(encoder_forward(batch.select(perm), model).data, out[perm], rtol=1e-12)


def test_encoder_ignores_pad_rows():
    rng = np.random.default_rng(1)
    model = oracles.tiny_model()
    batch = oracles.random_batch(rng, model.cfg, sizes=(2, 6))
    out = model.encode(batch).data
    batch.symbols[0, 2:] = 3
    batch.tpe[0, 2:] = 0.0
    np.testing.assert_array_equal(model.encode(batch).data[0, :2], out[0, :2])


def test_decoder_shapes_and_causality():
    rng = np.random.default_rng(2)
    model = oracles.tiny_model()
    batch = oracles.random_batch(rng, model.cfg, sizes=(4, 2))
    memory = model.encode(batch)
    assert decoder_forward(memory, batch.mask, np.array([[2], [2]]), model).shape == (2, 1, 6)
    tgt = np.array([[2, 3, 4, 5, 1], [2, 1, 1, 3, 4]])
    a = model.decode(memory, batch.mask, tgt).data
    tgt[:, 3:] = 5
    b = model.decode(memory, batch.mask, tgt).data
    np.testing.assert_array_equal(a[:, :3], b[:, :3])
    assert not np.array_equal(a[:, 3:], b[:, 3:])


def test_memorized_pair_loss_decreases():
    rng = np.random.default_rng(3)
    model = oracles.tiny_model(d_model=16, path_length=8, heads=2)
    batch = oracles.random_batch(rng, model.cfg, sizes=(5,))
    tgt_in, tgt_out = np.array([[2, 3, 4, 5]]), np.array([[3, 4, 5, 1]])
    adam = AdamState()
    losses = []
    for _ in range(40):
        for p in model.params.values():
            p.grad = None
        loss = nn.cross_entropy(model.forward(batch, tgt_in), tgt_out, 0)
        nn.backward(loss)
        losses.append(float(loss.data))
        adam_step(model.params, {k: p.grad for k, p in model.params.items() if p.grad is not None},
                  adam, 3e-3)
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])
    assert losses[-1] < losses[0]


def test_cross_attention_map():
    rng = np.random.default_rng(4)
    model = oracles.tiny_model(decoder_layers=2)
    batch = oracles.random_batch(rng, model.cfg, sizes=(3, 6))
    tgt = np.array([[2, 3, 4], [2, 5, 3]])
    for row, n in ((0, 3), (1, 6)):
        attn = extract_cross_attention(model, batch, tgt, row=row)
        assert attn.shape == (n, 3)
        np.testing.assert_allclose(attn.sum(axis=0), 1.0, atol=1e-12)


def test_init_is_seeded():
    cfg = oracles.tiny_config()
    a, b = TreeTransformer(cfg, seed=5), TreeTransformer(cfg, seed=5)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_float32_gradients_flow_everywhere():
    rng = np.random.default_rng(5)
    model = oracles.tiny_model(dtype="float32")
    batch = oracles.random_batch(rng, model.cfg, sizes=(4,), dtype="float32")
    loss = nn.cross_entropy(model.forward(batch, np.array([[2, 3]])), np.array([[3, 1]]), 0)
    nn.backward(loss)
    assert all(p.grad is not None and p.grad.dtype == np.float32 for p in model.params.values())
