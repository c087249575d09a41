import math

import numpy as np
import pytest

from fsseg.corpus import B, I, Corpus, CorpusError
from fsseg.crf import build_lattice, viterbi_scores
from fsseg.harness import generate_synthetic
from fsseg.metrics import evaluate
from fsseg.neural import (PARAM_NAMES, UNK, NeuralConfig, NeuralModel, clip_gradients,
                          crf_layer_log_partition, crf_layer_loss_grad, crf_layer_viterbi,
                          dropout_mask, init_model, nn_decode, nn_decode_many, nn_forward,
                          nn_loss_grad, nn_train)
from helpers import make_seq
from oracles import central_difference, enumerate_paths, layer_score

SMALL = NeuralConfig(embedding_dim=4, hidden_dim=3, seed=0)
VOCAB = (UNK, "xin", "chào", "cậu", "khỏe", "chứ")


def seq5():
    return make_seq(["xin", "chào", "cậu", "khỏe", "lạ"], [B, I, B, I, I])


def random_model(seed, cfg=SMALL, scale=0.5):
    m = init_model(VOCAB, cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for name in ("fwd_b", "bwd_b", "proj_b", "transitions"):
        m.params[name] = rng.normal(scale=scale, size=m.params[name].shape)
    return m


def test_config_validation():
    for kw in (dict(embedding_dim=0), dict(dropout=1.0), dict(dropout=-0.1), dict(clip=0)):
        with pytest.raises(ValueError):
            NeuralConfig(**kw)


def test_unk_is_id_zero():
    m = init_model(["b", "a"], SMALL)
    assert m.vocab[0] == UNK
    assert list(m.token_ids(make_seq(["a", "zzz"]))) == [m.index["a"], 0]
    with pytest.raises(ValueError):
        NeuralModel(("a",), m.params, SMALL)


def test_zero_parameters_zero_scores():
    m = init_model(VOCAB, SMALL, zero=True)
    assert np.all(nn_forward(m, seq5()) == 0)
    assert nn_decode(m, seq5()) == [B] * 5


def test_zero_parameters_loss_is_n_log_two():
    m = init_model(VOCAB, SMALL, zero=True)
    loss, _ = nn_loss_grad(m, seq5())
    assert loss == pytest.approx(5 * math.log(2), abs=1e-12)


def test_mirrored_encoders_reverse_scores():
    m = random_model(3)
    p = m.params
    for part in ("Wx", "Wh", "b"):
        p[f"bwd_{part}"] = p[f"fwd_{part}"].copy()
    h = SMALL.hidden_dim
    p["proj_W"][:, h:] = p["proj_W"][:, :h]
    s = make_seq(["xin", "chào", "cậu", "khỏe"])
    r = make_seq(["khỏe", "cậu", "chào", "xin"])
    assert np.allclose(nn_forward(m, r), nn_forward(m, s)[::-1], atol=1e-14)


def test_inference_deterministic():
    m = random_model(1)
    a = nn_forward(m, seq5())
    assert np.array_equal(a, nn_forward(m, seq5()))
    m.config = NeuralConfig(embedding_dim=4, hidden_dim=3, dropout=0.5)
    d1 = nn_forward(m, seq5(), train_mode=True, rng=np.random.default_rng(0))
    d2 = nn_forward(m, seq5(), train_mode=True, rng=np.random.default_rng(0))
    assert np.array_equal(d1, d2)
    assert not np.array_equal(d1, a)


def check_blocks(m, seq, mask=None):
    _, grads = nn_loss_grad(m, seq, mask)
    worst = {}
    for name in PARAM_NAMES:
        base = m.params[name]

        def f(x, name=name):
            saved = m.params[name]
            m.params[name] = x.reshape(base.shape)
            val = nn_loss_grad(m, seq, mask)[0]
            m.params[name] = saved
            return val
        num = central_difference(f, base.copy().ravel()).reshape(base.shape)
        rel = np.abs(grads[name] - num) / np.maximum(1.0, np.abs(grads[name]))
        worst[name] = float(np.max(rel))
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_all_blocks(seed, each_backend):
    worst = check_blocks(random_model(seed), seq5())
    assert max(worst.values()) < 1e-6, worst


def test_gradients_with_dropout_mask():
    cfg = NeuralConfig(embedding_dim=4, hidden_dim=3, dropout=0.5)
    m = random_model(5, cfg)
    mask = dropout_mask((5, 6), 0.5, np.random.default_rng(0))
    assert max(check_blocks(m, seq5(), mask).values()) < 1e-6


def test_loss_is_additive_without_transitions():
    m = random_model(2)
    m.params["transitions"][:] = 0.0
    s = seq5()
    scores = nn_forward(m, s)
    gold = [0, 1, 0, 1, 1]
    expected = sum(np.logaddexp(*scores[t]) - scores[t, y] for t, y in enumerate(gold))
    assert nn_loss_grad(m, s)[0] == pytest.approx(expected, abs=1e-12)


def test_crf_layer_matches_enumeration():
    rng = np.random.default_rng(0)
    for n in range(1, 9):
        scores = rng.normal(size=(n, 2))
        trans = rng.normal(size=(4, 4))
        log_z, marg, best, best_score, _ = enumerate_paths(
            n, 2, lambda p: layer_score(scores, trans, p))
        lz, alpha, beta = crf_layer_log_partition(scores, trans)
        assert lz == pytest.approx(log_z, abs=1e-10)
        assert np.allclose(np.exp(alpha + beta - lz), marg, atol=1e-10)
        path, score = crf_layer_viterbi(scores, trans)
        assert path == best and score == pytest.approx(best_score, abs=1e-10)


def test_crf_layer_gradient():
    rng = np.random.default_rng(1)
    scores, trans, gold = rng.normal(size=(6, 2)), rng.normal(size=(4, 4)), [0, 1, 1, 0, 1, 0]
    _, ds, dt = crf_layer_loss_grad(scores, trans, gold)
    num_s = central_difference(lambda x: crf_layer_loss_grad(x.reshape(6, 2), trans, gold)[0],
                               scores.ravel()).reshape(6, 2)
    num_t = central_difference(lambda x: crf_layer_loss_grad(scores, x.reshape(4, 4), gold)[0],
                               trans.ravel()).reshape(4, 4)
    assert np.allclose(ds, num_s, atol=1e-8)
    assert np.allclose(dt, num_t, atol=1e-8)
    assert np.all(dt[:, 2] == 0) and np.all(dt[3, :] == 0)   # nothing enters BOS or leaves EOS


def test_crf_layer_agrees_with_first_order_crf_module():
    rng = np.random.default_rng(2)
    for n in (1, 2, 5, 20):
        scores = rng.normal(size=(n, 2))
        A = rng.normal(size=(2, 2))
        trans = np.zeros((4, 4))
        trans[:2, :2] = A
        lat = build_lattice(scores, A, 1)
        assert abs(crf_layer_log_partition(scores, trans)[0] - lat.log_z) < 1e-10
        path, score = crf_layer_viterbi(scores, trans)
        ref_path, ref_score = viterbi_scores(scores, A, 1)
        assert path == list(ref_path) and abs(score - ref_score) < 1e-10


def test_clip_gradients():
    rng = np.random.default_rng(0)
    grads = {"a": rng.normal(size=(3, 4)) * 10, "b": rng.normal(size=5) * 10}
    before = clip_gradients(grads, 5.0)
    after = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert before > 5.0 and after == pytest.approx(5.0)
    small = {"a": np.full(2, 0.1)}
    clip_gradients(small, 5.0)
    assert np.all(small["a"] == 0.1)


def tiny_corpus():
    return generate_synthetic(10, seed=3, profile="message")


def test_training_deterministic():
    cfg = NeuralConfig(embedding_dim=6, hidden_dim=5, epochs=3, seed=4)
    m1, t1 = nn_train(tiny_corpus(), cfg)
    m2, t2 = nn_train(tiny_corpus(), cfg)
    assert t1 == t2
    assert np.array_equal(m1.flat(), m2.flat())


def test_zero_learning_rate_leaves_parameters():
    cfg = NeuralConfig(embedding_dim=6, hidden_dim=5, epochs=3, seed=4, learning_rate=0.0,
                       dropout=0.0, unk_replace=0.0)
    c = tiny_corpus()
    m, trace = nn_train(c, cfg)
    vocab = m.vocab
    fresh = init_model(vocab, cfg, np.random.default_rng(cfg.seed))
    assert np.array_equal(m.flat(), fresh.flat())
    assert trace[0] == pytest.approx(trace[-1], abs=1e-9)


def test_overfit_tiny_corpus():
    c = tiny_corpus()
    m, trace = nn_train(c, NeuralConfig(learning_rate=0.05, dropout=0.0, epochs=30, seed=0))
    assert trace[-1] <= 0.05 * trace[0]
    rep = evaluate([list(s.tags) for s in c], nn_decode_many(m, c.sequences))
    assert rep.chunk.f1 == 1.0


def test_save_load_identity(tmp_path):
    cfg = NeuralConfig(embedding_dim=6, hidden_dim=5, epochs=2, seed=4)
    m, _ = nn_train(tiny_corpus(), cfg)
    p = tmp_path / "nn.txt"
    m.save(p)
    back = NeuralModel.load(p)
    assert back.vocab == m.vocab and back.config == m.config
    for name in PARAM_NAMES:
        assert np.array_equal(back.params[name], m.params[name])
    c = tiny_corpus()
    assert nn_decode_many(back, c.sequences) == nn_decode_many(m, c.sequences)


def test_empty_corpus_rejected():
    with pytest.raises(CorpusError):
        nn_train(Corpus([]))
