import math

import numpy as np
import pytest

from fsseg.corpus import B, I, Corpus, CorpusError
from fsseg.crf import (CrfModel, StateSpace, _objective, build_lattice, crf_decode,
                       crf_decode_many, crf_log_partition, crf_loglik_grad, crf_train, path_score, viterbi_scores)
from fsseg.features import FeatureVocabulary, build_vocabulary
from fsseg.metrics import evaluate
from fsseg.modelio import ModelFormatError
from fsseg.optim import check_gradient
from helpers import make_seq
from oracles import chain_score, enumerate_paths


def random_problem(rng, n, order, scale=1.0):
    E = rng.normal(scale=scale, size=(n, 2))
    trans = rng.normal(scale=scale, size=(2,) * (order + 1))
    return E, trans


@pytest.mark.parametrize("order", [1, 2])
def test_lattice_matches_enumeration(order, each_backend):
    rng = np.random.default_rng(order)
    for n in range(1, 9):
        E, trans = random_problem(rng, n, order)
        log_z, marg, best, best_score, _ = enumerate_paths(
            n, 2, lambda p: chain_score(E, trans, p))
        lat = build_lattice(E, trans, order)
        assert lat.log_z == pytest.approx(log_z, abs=1e-10)
        assert np.allclose(lat.tag_marginals(), marg, atol=1e-10)
        path, score = viterbi_scores(E, trans, order)
        assert list(path) == best
        assert score == pytest.approx(best_score, abs=1e-10)


def test_zero_weights_length_three():
    lat = build_lattice(np.zeros((3, 2)), np.zeros((2, 2, 2)), 2)
    assert lat.log_z == pytest.approx(3 * math.log(2), abs=1e-14)


def test_length_one_is_logsumexp_of_emissions():
    E = np.array([[0.3, -1.2]])
    for order in (1, 2):
        lat = build_lattice(E, np.ones((2,) * (order + 1)), order)
        assert lat.log_z == pytest.approx(np.logaddexp(0.3, -1.2), abs=1e-14)


def test_transition_table_sizes():
    assert StateSpace(2).trans_shape == (2, 2, 2)
    assert StateSpace(1).trans_shape == (2, 2)
    with pytest.raises(ValueError):
        StateSpace(3)


@pytest.mark.parametrize("order", [1, 2])
def test_forward_backward_consistency_long(order):
    rng = np.random.default_rng(11)
    for n in (10, 30, 50):
        E, trans = random_problem(rng, n, order, scale=3.0)
        lat = build_lattice(E, trans, order)
        assert abs(lat.log_z - lat.log_z_backward) < 1e-8
        assert np.allclose(lat.state_marginals().sum(axis=1), 1.0, atol=1e-9)


def test_decoded_path_probability_in_unit_interval():
    rng = np.random.default_rng(5)
    E, trans = random_problem(rng, 6, 2)
    path, score = viterbi_scores(E, trans, 2)
    p = math.exp(score - build_lattice(E, trans, 2).log_z)
    assert 0 < p < 1
    # a lattice with one dominant path approaches probability 1
    E = np.where(np.arange(2)[None, :] == 0, 60.0, -60.0) * np.ones((4, 1))
    path, score = viterbi_scores(E, np.zeros((2, 2, 2)), 2)
    assert math.exp(score - build_lattice(E, np.zeros((2, 2, 2)), 2).log_z) == pytest.approx(1.0)


def test_path_score_helper_matches_oracle():
    rng = np.random.default_rng(2)
    E, trans = random_problem(rng, 7, 2)
    p = list(rng.integers(0, 2, size=7))
    assert path_score(E, trans, p) == pytest.approx(chain_score(E, trans, p))


def vocab_corpus():
    c = Corpus([make_seq(["xin", "chào", "cậu"], [B, I, B], turn="t1"),
                make_seq(["cậu", "khỏe", "chứ", "?"], [B, I, I, I], turn="t2"),
                make_seq(["ok"], [B], turn="t3")])
    return c, build_vocabulary(c)


def test_zero_model_decodes_all_begin():
    c, vocab = vocab_corpus()
    for order in (1, 2):
        tags, score = crf_decode(CrfModel.zeros(vocab, order), c[1])
        assert tags == [B] * 4 and score == 0.0


def test_zero_model_objective_two_tokens():
    vocab = FeatureVocabulary(("u0=a",))
    m = CrfModel.zeros(vocab, 1)
    value, _ = crf_loglik_grad(m, [make_seq(["a", "b"], [B, I])])
    assert value == pytest.approx(2 * math.log(2), abs=1e-14)


def test_objective_rejects_unlabeled():
    _, vocab = vocab_corpus()
    with pytest.raises(CorpusError):
        crf_loglik_grad(CrfModel.zeros(vocab), [make_seq(["a", "b"])])


@pytest.mark.parametrize("order", [1, 2])
def test_full_model_partition_matches_enumeration(order):
    c, vocab = vocab_corpus()
    rng = np.random.default_rng(9)
    m = CrfModel(rng.normal(size=(len(vocab), 2)), rng.normal(size=(2,) * (order + 1)), vocab,
                 markov_order=order)
    for seq in c:
        E = m.emissions(seq)
        log_z, _, best, best_score, _ = enumerate_paths(len(seq), 2,
                                                        lambda p: chain_score(E, m.transitions, p))
        assert crf_log_partition(m, seq)[0] == pytest.approx(log_z, abs=1e-10)
        tags, score = crf_decode(m, seq)
        assert [0 if t is B else 1 for t in tags] == best
        assert score == pytest.approx(best_score, abs=1e-10)


@pytest.mark.parametrize("order", [1, 2])
def test_gradient_finite_differences(order):
    c, vocab = vocab_corpus()
    rng = np.random.default_rng(4)
    m = CrfModel(rng.normal(scale=0.5, size=(len(vocab), 2)),
                 rng.normal(scale=0.5, size=(2,) * (order + 1)), vocab, markov_order=order,
                 l2_sigma=2.0)
    obj = _objective(m, c)
    assert check_gradient(obj, m.flat()) < 1e-7


def test_gradient_three_token_sequence():
    c = Corpus([make_seq(["a", "b", "c"], [B, I, B])])
    m = CrfModel.zeros(build_vocabulary(c), 2)
    w = np.random.default_rng(0).normal(size=m.n_params)
    assert check_gradient(_objective(m, c), w) < 1e-5


def test_marker_corpus_perfect_training_fit(toy_corpus):
    m, tr = crf_train(toy_corpus)
    rep = evaluate([list(s.tags) for s in toy_corpus], crf_decode_many(m, toy_corpus.sequences))
    assert rep.chunk.f1 == 1.0
    values = [v for v, _, _ in tr.per_iteration]
    assert all(b <= a + 1e-10 for a, b in zip(values, values[1:]))


def test_second_order_fits_at_least_as_well(toy_corpus):
    big = 1e3    # near-zero penalty so the comparison is about model families
    m1, t1 = crf_train(toy_corpus, l2_sigma=big, order=1)
    m2, t2 = crf_train(toy_corpus, l2_sigma=big, order=2)
    ll1 = -crf_loglik_grad(m1, toy_corpus)[0] + 0.5 * float(m1.flat() @ m1.flat()) / big ** 2
    ll2 = -crf_loglik_grad(m2, toy_corpus)[0] + 0.5 * float(m2.flat() @ m2.flat()) / big ** 2
    assert ll2 >= ll1 - 1e-4


def test_decode_many_matches_single(toy_corpus):
    m, _ = crf_train(toy_corpus)
    assert crf_decode_many(m, toy_corpus.sequences) == [crf_decode(m, s)[0] for s in toy_corpus]


@pytest.mark.parametrize("order", [1, 2])
def test_save_load_identity(tmp_path, toy_corpus, order):
    m, _ = crf_train(toy_corpus, order=order, use_msg_boundary=True)
    p = tmp_path / "crf.txt"
    m.save(p)
    back = CrfModel.load(p)
    assert np.array_equal(back.weights, m.weights)
    assert np.array_equal(back.transitions, m.transitions)
    assert back.vocab == m.vocab and back.markov_order == order
    text = p.read_text(encoding="utf-8")
    assert f"markov_order={order}" in text
    assert "__T__" + "|".join(["B-fs"] * (order + 1)) in text


def test_corrupt_model_file(tmp_path, toy_corpus):
    m, _ = crf_train(toy_corpus)
    p = tmp_path / "crf.txt"
    m.save(p)
    text = p.read_text(encoding="utf-8").replace("\tI-fs\t", "\tX-fs\t", 1)
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ModelFormatError):
        CrfModel.load(p)
    p.write_text("hello\n", encoding="utf-8")
    with pytest.raises(ModelFormatError):
        CrfModel.load(p)
