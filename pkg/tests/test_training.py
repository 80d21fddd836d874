import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmatt.dataset import PreparedCorpus, Vocab, filter_in_grammar
from gmatt.errors import (ConfigMismatch, CorruptCheckpoint, NonFiniteGradient, NonFiniteLoss)
from gmatt.model import ModelConfig
from gmatt.toydata import sample_reactions
from gmatt.training import (AdamState, LrSchedule, TrainConfig, adam_step, load_checkpoint, lr_at,
                            new_state, save_checkpoint, train, write_log)


@pytest.fixture(scope="module")
def small_corpus():
    records, _ = filter_in_grammar(sample_reactions(30, seed=1), path_length=16)
    records = records[:6]
    vocab = Vocab.build(records)
    cfg = ModelConfig(d_model=32, heads=2, encoder_layers=1, decoder_layers=1, path_length=16,
                      edge_dim=2, dropout=0.1, encoder_vocab=len(vocab.encoder_symbols),
                      decoder_vocab=len(vocab.decoder_symbols))
    return PreparedCorpus(records, vocab, cfg, with_class=False)


# ---- Adam ------------------------------------------------------------------------------

def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state, 1e-3)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_is_signed_lr():
    p = {"w": np.zeros(4)}
    g = np.array([0.3, -2.0, 1e-3, -7.0])
    adam_step(p, {"w": g}, AdamState(), 1e-3)
    np.testing.assert_allclose(p["w"], -1e-3 * np.sign(g), rtol=1e-5)


def _scalar_adam(x, grads, lr, b1=0.9, b2=0.98, eps=1e-9):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_two_steps_match_scalar_reference():
    x0 = np.array([0.5, -1.5, 2.0])
    g1, g2 = np.array([0.1, -0.4, 3.0]), np.array([-0.2, -0.1, 1.0])
    p = {"w": x0.copy()}
    state = AdamState()
    adam_step(p, {"w": g1}, state, 5e-4)
    adam_step(p, {"w": g2}, state, 5e-4)
    ref = [_scalar_adam(x0[i], [g1[i], g2[i]], 5e-4) for i in range(3)]
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)


def test_adam_order_invariance():
    rng = np.random.default_rng(0)
    grads = {k: rng.normal(size=3) for k in "abc"}
    p1 = {k: np.ones(3) for k in "abc"}
    p2 = {k: np.ones(3) for k in "cba"}
    adam_step(p1, grads, AdamState(), 1e-3)
    adam_step(p2, {k: grads[k] for k in "cab"}, AdamState(), 1e-3)
    assert all(np.array_equal(p1[k], p2[k]) for k in "abc")


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteGradient):
        adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState(), 1e-3)


# ---- schedule ----------------------------------------------------------------------------

def test_lr_examples():
    assert lr_at(0) == pytest.approx(1e-4, abs=1e-18)
    assert lr_at(5) == 5e-4
    assert lr_at(15) == pytest.approx(1e-4 + 0.98 * 4e-4, abs=1e-18)
    assert lr_at(10) == pytest.approx(1e-4, abs=1e-18)


def test_lr_maximum_is_eta_max():
    grid = np.linspace(0, 30, 30001)
    assert max(lr_at(e) for e in grid) == 5e-4


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 500))
def test_lr_continuous_and_bounded(e):
    s = LrSchedule()
    assert s.eta_min - 1e-18 <= lr_at(e, s) <= s.eta_max + 1e-18
    assert abs(lr_at(e + 1e-7, s) - lr_at(e, s)) < 1e-9


def test_lr_negative_epoch():
    with pytest.raises(ValueError):
        lr_at(-1)


# ---- training loop -----------------------------------------------------------------------

def test_one_epoch_smoke(small_corpus):
    state = train(small_corpus, TrainConfig(epochs=1, batch_size=2, seed=0))
    assert state.epoch == 1
    assert math.isfinite(state.history[0]["loss"])


def test_fixed_seed_is_bit_identical(small_corpus):
    cfg = TrainConfig(epochs=2, batch_size=4, seed=7)
    a, b = train(small_corpus, cfg), train(small_corpus, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)
    c = train(small_corpus, TrainConfig(epochs=2, batch_size=4, seed=8))
    assert c.history != a.history


def test_validation_rows_and_log(small_corpus, tmp_path):
    state = train(small_corpus, TrainConfig(epochs=2, batch_size=3), valid_corpus=small_corpus)
    assert [h["split"] for h in state.history] == ["train", "valid"] * 2
    path = tmp_path / "log.csv"
    write_log(state.history, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "split", "loss", "char_acc", "lr"]
    assert float(rows[-1]["loss"]) == state.history[-1]["loss"]


def test_non_finite_loss_keeps_last_good(small_corpus):
    tcfg = TrainConfig(epochs=1, batch_size=3)
    state = new_state(small_corpus.cfg, tcfg)
    state.model.params["out.b"].data[:] = np.nan
    with pytest.raises(NonFiniteLoss) as err:
        train(small_corpus, tcfg, state=state)
    assert "out.b" in err.value.last_good


# ---- checkpoints -------------------------------------------------------------------------

def test_checkpoint_round_trip(small_corpus, tmp_path):
    tcfg = TrainConfig(epochs=1, batch_size=3)
    state = train(small_corpus, tcfg)
    p1, p2 = tmp_path / "a.gmat", tmp_path / "b.gmat"
    save_checkpoint(p1, state, small_corpus.vocab, tcfg)
    ck = load_checkpoint(p1)
    assert ck.config == small_corpus.cfg and ck.vocab == small_corpus.vocab and ck.epoch == 1
    for k, p in state.model.params.items():
        assert ck.params[k].dtype == p.data.dtype
        np.testing.assert_array_equal(ck.params[k], p.data)
    save_checkpoint(p2, ck.training_state(), ck.vocab, tcfg)
    assert p1.read_bytes() == p2.read_bytes()
    assert TrainConfig.from_dict(ck.train_config) == tcfg


def test_checkpoint_config_mismatch(small_corpus, tmp_path):
    tcfg = TrainConfig(epochs=1)
    path = tmp_path / "c.gmat"
    save_checkpoint(path, new_state(small_corpus.cfg, tcfg), small_corpus.vocab, tcfg)
    other = ModelConfig(**{**small_corpus.cfg.to_dict(), "d_model": 64, "d_k": None, "d_tcb": None,
                           "d_ff": None, "path_length": 32})
    with pytest.raises(ConfigMismatch):
        load_checkpoint(path, expected_config=other)


@pytest.mark.parametrize("damage", ["magic", "truncate", "trailing", "version"])
def test_corrupt_checkpoint(small_corpus, tmp_path, damage):
    tcfg = TrainConfig(epochs=1)
    path = tmp_path / "d.gmat"
    save_checkpoint(path, new_state(small_corpus.cfg, tcfg), small_corpus.vocab, tcfg)
    raw = bytearray(path.read_bytes())
    if damage == "magic":
        raw[:4] = b"XXXX"
    elif damage == "truncate":
        raw = raw[:len(raw) // 2]
    elif damage == "trailing":
        raw += b"\0"
    else:
        raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)
