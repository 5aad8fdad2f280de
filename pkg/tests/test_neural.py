import numpy as np
import pytest
from numpy.testing import assert_allclose

from al_seqtag.corpus import TagSet
from al_seqtag.metrics import span_f1
from al_seqtag.neural import (ForwardCounter, McConfig, McVariant, NeuralConfig, NeuralModel,
                              NeuralTrainingError, effective_batch_size, encode, init_model,
                              train_neural)
from conftest import make_sentence
from oracles import central_difference, relative_error

TINY = NeuralConfig(dim=4, hidden=5, buckets=64, p_word=0.0, p_locked=0.0, p_last=0.0, epochs=3)


def tiny_model(C=3, seed=0, **kw):
    ts = TagSet.from_types([chr(65 + i) for i in range((C - 1) // 2)]) if C > 1 else None
    cfg = NeuralConfig(**{**TINY.__dict__, **kw})
    return init_model(ts, cfg, np.random.default_rng(seed))


def sents():
    return [make_sentence(0, ["Anna", "went", "to", "Rome"], ["B-A", "O", "O", "O"]),
            make_sentence(1, ["hi"], ["O"]),
            make_sentence(2, ["the", "Big", "Apple", "x9"], ["O", "B-A", "I-A", "O"])]


def test_batch_size_rule():
    assert effective_batch_size(100, 16) == 4
    assert effective_batch_size(10_000, 16) == 16
    assert effective_batch_size(785, 16) == 16      # ceil(785/16) = 50 updates
    assert effective_batch_size(784, 16) == 15      # 49 updates: floor(784/50)
    assert effective_batch_size(3, 16) == 4


def test_config_validation():
    with pytest.raises(ValueError):
        NeuralConfig(p_word=1.0)
    with pytest.raises(ValueError):
        McConfig(McVariant.MC_ALL, passes=1)
    assert McConfig(McVariant.NONE, passes=1).passes == 1
    assert McConfig("MC_LAST").sites == (False, False, True)
    assert McConfig("MC_ALL").sites == (True, True, True)


def test_rows_are_distributions():
    m = tiny_model()
    for P in m.predict_proba_many(sents()):
        assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert (P >= 0).all() and (P <= 1).all()
    again = m.predict_proba_many(sents())
    assert all(np.array_equal(a, b) for a, b in zip(again, m.predict_proba_many(sents())))


def test_symmetric_output_layer():
    m = tiny_model(C=3)
    m.W2[:] = 0
    m.b2[:] = 0
    assert_allclose(m.predict_deterministic(sents()[0]), 1 / 3)


def test_batching_does_not_change_predictions():
    m = tiny_model()
    s = sents()
    joint = m.predict_proba_many(s)
    for one, p in zip(s, joint):
        assert_allclose(m.predict_deterministic(one), p, rtol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_check(seed):
    rng = np.random.default_rng(seed)
    m = tiny_model(C=5, seed=seed)
    batch = sents()
    enc = encode(batch, m.config.buckets, m.config.window)
    y = np.concatenate([m.tagset.encode(s.tags) for s in batch])
    _, g = m.loss_and_grads(enc, y)
    for name in ("W1", "b1", "W2", "b2", "emb"):
        param = getattr(m, name)
        analytic = m.dense_emb_grad(g) if name == "emb" else g[name]
        numeric = central_difference(lambda _: m.loss_and_grads(enc, y)[0], param)
        assert relative_error(analytic, numeric) < 1e-4, name
    # fixed dropout masks are constants, so the gradient stays exact with them
    wk = (rng.random(enc.n_tokens) > 0.3) / 0.7
    lk = (rng.random((len(batch), 4)) > 0.5) / 0.5
    ls = (rng.random((enc.n_tokens, 5)) > 0.5) / 0.5
    _, g = m.loss_and_grads(enc, y, wk, lk, ls)
    numeric = central_difference(lambda _: m.loss_and_grads(enc, y, wk, lk, ls)[0], m.W1)
    assert relative_error(g["W1"], numeric) < 1e-4


def test_inverted_dropout_expectation():
    m = tiny_model(p_word=0.3, p_locked=0.5, p_last=0.5)
    s = sents()[0]
    enc = encode([s], m.config.buckets, m.config.window)
    rng = np.random.default_rng(0)
    K = 10_000
    base = m._embed(enc)
    locked = m._masks(rng, K, len(s), McConfig("MC_LOCKED", K))[1]
    word = m._masks(rng, K, len(s), McConfig("MC_WORD", K))[0]
    last = m._masks(rng, K, len(s), McConfig("MC_LAST", K))[2]
    est_locked = np.mean([m._embed(enc, locked=lk[None]) for lk in locked], axis=0)
    est_word = np.mean([m._embed(enc, word_keep=wk) for wk in word], axis=0)
    assert_allclose(est_locked, base, rtol=0.02, atol=0.02 * np.abs(base).max())
    assert_allclose(est_word, base, rtol=0.02, atol=0.02 * np.abs(base).max())
    assert_allclose(last.mean(axis=0), 1.0, atol=0.02 * 2)   # per-unit mask mean
    assert abs(last.mean() - 1.0) < 0.02


def test_locked_mask_shared_within_sentence():
    m = tiny_model(p_locked=0.5)
    s = sents()[0]
    enc = encode([s], m.config.buckets, m.config.window)
    _, lk, _ = m._masks(np.random.default_rng(3), 4, len(s), McConfig("MC_LOCKED", 4))
    assert lk.shape == (4, m.config.dim)       # one mask per pass, not per token
    e = m._embed(enc, locked=lk[:1])
    base = m._embed(enc)
    ratio_rows = [np.where(base[i] != 0, e[i] / base[i], 0) for i in range(len(s))]
    for r in ratio_rows[1:]:
        assert_allclose(r, ratio_rows[0])


def test_zero_rates_give_deterministic_passes():
    m = tiny_model()
    s = sents()
    det = m.predict_proba_many(s)
    for v in ("MC_WORD", "MC_LOCKED", "MC_LAST", "MC_ALL"):
        for t, d in zip(m.predict_stochastic_many(s, McConfig(v, 5), seed=1), det):
            assert t.shape == (5,) + d.shape
            for p in t:
                assert_allclose(p, d, rtol=1e-12)


def test_stochastic_determinism_and_order_independence():
    m = tiny_model(p_word=0.2, p_locked=0.5, p_last=0.5)
    s = sents()
    mc = McConfig("MC_ALL", 6)
    a = m.predict_stochastic_many(s, mc, seed=4)
    b = m.predict_stochastic_many(s[::-1], mc, seed=4)[::-1]
    c = m.predict_stochastic_many(s, mc, seed=4, chunk=1)
    for x, y, z in zip(a, b, c):
        assert_allclose(x, y, rtol=1e-12)
        assert_allclose(x, z, rtol=1e-12)
        assert_allclose(x.sum(axis=2), 1.0, atol=1e-9)
    d = m.predict_stochastic_many(s, mc, seed=5)
    assert not np.allclose(a[0], d[0])


@pytest.mark.parametrize("variant,lower_per_sentence", [("MC_LAST", 1), ("MC_ALL", 10),
                                                         ("MC_WORD", 10), ("MC_LOCKED", 10)])
def test_forward_counter(variant, lower_per_sentence):
    m = tiny_model(p_word=0.1, p_locked=0.5, p_last=0.5)
    s = sents()
    counter = ForwardCounter()
    m.predict_stochastic_many(s, McConfig(variant, 10), seed=0, counter=counter)
    assert counter.lower == lower_per_sentence * len(s)
    assert counter.head == 10 * len(s)


def test_training_loss_decreases_on_separable_set():
    ts = TagSet.from_types(["P"])
    data = []
    rng = np.random.default_rng(2)
    for i in range(40):
        ws = list(rng.choice(["ann", "bob", "x", "y", "z"], size=4))
        data.append(make_sentence(i, ws, ["B-P" if w in ("ann", "bob") else "O" for w in ws]))
    cfg = NeuralConfig(dim=8, hidden=8, buckets=256, p_word=0, p_locked=0, p_last=0, epochs=25,
                       learning_rate=0.2)
    m = train_neural(data, ts, cfg, seed=0)
    h = m.loss_history
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    assert span_f1(m.predict(data), [s.tags for s in data]).f1 == 1.0


def test_training_deterministic(small_pair):
    train, _ = small_pair
    cfg = NeuralConfig(dim=8, hidden=8, buckets=512, epochs=2)
    a = train_neural(train.sentences[:30], train.tagset, cfg, seed=3)
    b = train_neural(train.sentences[:30], train.tagset, cfg, seed=3)
    assert np.array_equal(a.W1, b.W1) and np.array_equal(a.emb, b.emb)
    c = train_neural(train.sentences[:30], train.tagset, cfg, seed=4)
    assert not np.array_equal(a.W1, c.W1)


def test_best_epoch_selection(small_pair):
    train, test = small_pair
    cfg = NeuralConfig(dim=8, hidden=8, buckets=512, epochs=4, select_best_epoch=True)
    m = train_neural(train.sentences[:40], train.tagset, cfg, seed=0, dev=test.sentences[:20])
    assert len(m.loss_history) == 4


def test_divergence_raises(small_pair):
    train, _ = small_pair
    cfg = NeuralConfig(dim=8, hidden=8, buckets=512, epochs=3, learning_rate=1e6)
    with pytest.raises(NeuralTrainingError):
        with np.errstate(all="ignore"):
            train_neural(train.sentences[:30], train.tagset, cfg, seed=0)


def test_save_load(tmp_path, small_pair):
    train, test = small_pair
    m = train_neural(train.sentences[:30], train.tagset, NeuralConfig(dim=8, hidden=8, buckets=512, epochs=1))
    m.save(tmp_path / "n.npz")
    m2 = NeuralModel.load(tmp_path / "n.npz")
    assert m2.predict(test.sentences) == m.predict(test.sentences)
    assert m2.config == m.config
