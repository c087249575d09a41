import os

import pytest

from fsseg.corpus import B, Corpus, SourceKind, load_corpus, segments_from_tags
from fsseg.features import DEFAULT_TEMPLATES, FeatureTemplate
from fsseg.harness import (PROFILES, ConfigError, FoldError, RunConfig, SyntheticGenerator,
                           compare_models, count_chunks, format_config, generate_synthetic,
                           load_config, make_folds, parse_config, run_cv)
from fsseg.neural import NeuralConfig
from helpers import make_seq


def corpus_of(n, dialogues=1):
    return Corpus([make_seq(["a", "b"], [B, B], dialogue=f"d{k % dialogues}", turn=f"t{k}")
                   for k in range(n)])


def test_exact_division():
    assert make_folds(corpus_of(10), 5, 0).sizes() == [2] * 5


def test_remainder():
    assert sorted(make_folds(corpus_of(11), 5, 0).sizes(), reverse=True) == [3, 2, 2, 2, 2]


def test_fold_determinism_and_partition():
    c = corpus_of(23)
    a, b = make_folds(c, 4, 9), make_folds(c, 4, 9)
    assert a.assignments == b.assignments
    assert set(a.assignments) == {s.key for s in c}
    sizes = a.sizes()
    assert max(sizes) - min(sizes) <= 1
    assert make_folds(c, 4, 10).assignments != a.assignments


@pytest.mark.parametrize("k,n", [(1, 10), (0, 10), (5, 4)])
def test_fold_config_errors(k, n):
    with pytest.raises(ConfigError):
        make_folds(corpus_of(n), k, 0)


def test_dialogue_level_folds():
    c = corpus_of(30, dialogues=7)
    plan = make_folds(c, 3, 1, by_dialogue=True)
    by_dialogue = {}
    for seq in c:
        by_dialogue.setdefault(seq.dialogue_id, set()).add(plan.assignments[seq.key])
    assert all(len(f) == 1 for f in by_dialogue.values())


def test_config_parsing(tmp_path):
    text = """
    # comment
    model = maxent
    cutoff = 2
    l2_sigma = 3.5       # trailing comment
    use_msg_boundary = auto
    lowercase = yes
    templates = u0@0;b0:1@0,1
    gradient_tolerance = 1e-7
    hidden_dim = 12
    dropout = 0.25
    """
    cfg = parse_config(text)
    assert cfg.model == "maxent" and cfg.cutoff == 2 and cfg.l2_sigma == 3.5
    assert cfg.use_msg_boundary is None and cfg.lowercase is True
    assert cfg.templates == (FeatureTemplate("u0", (0,)), FeatureTemplate("b0:1", (0, 1)))
    assert cfg.optimizer.gradient_tolerance == 1e-7
    assert cfg.neural.hidden_dim == 12 and cfg.neural.dropout == 0.25
    assert parse_config(format_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["unknown_key = 1", "cutoff = many", "no equals sign",
                                  "model = svm", "markov_order = 3", "dropout = 1.5",
                                  "use_msg_boundary = maybe", "templates = u0@9"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_defaults_and_auto_flags():
    cfg = RunConfig()
    assert cfg.templates == DEFAULT_TEMPLATES and cfg.markov_order == 2
    assert cfg.msg_boundary_for(Corpus([], SourceKind.MESSAGE))
    assert not cfg.msg_boundary_for(Corpus([], SourceKind.PHONE))
    assert cfg.lowercase_for(Corpus([], SourceKind.PHONE))
    assert load_config(None, model="maxent").model == "maxent"


def test_missing_dictionary_path():
    cfg = RunConfig(dictionaries=("/nonexistent/dict.tsv",))
    with pytest.raises(ConfigError):
        run_cv(generate_synthetic(20), make_folds(generate_synthetic(20), 2, 0), cfg)


@pytest.mark.parametrize("profile", PROFILES)
def test_synthetic_corpus_shape(profile):
    gen = SyntheticGenerator(5, profile)
    c = gen.generate(80)
    assert len(c) == 80 and c.labeled
    assert all(3 <= len(s) <= 40 for s in c)
    assert count_chunks(c) == gen.segments_emitted
    for s in c:
        spans = segments_from_tags(s.tags)
        assert spans[0][0] == 0 and spans[-1][1] == len(s)
        assert all(1 <= e - st <= 8 for st, e in spans)


def test_synthetic_determinism():
    assert generate_synthetic(1, 3) == generate_synthetic(1, 3)
    assert generate_synthetic(30, 3, "phone") == generate_synthetic(30, 3, "phone")
    assert generate_synthetic(30, 3) != generate_synthetic(30, 4)


def test_profiles_differ():
    msg = generate_synthetic(100, 0, "message")
    phone = generate_synthetic(100, 0, "phone")
    assert msg.source_kind is SourceKind.MESSAGE and phone.source_kind is SourceKind.PHONE
    msg_words = {t.text for s in msg for t in s.tokens}
    phone_words = {t.text for s in phone for t in s.tokens}
    assert {"ck", "ko", "j"} & msg_words
    assert {"ờ", "ừm"} & phone_words
    assert sum(t.msg_start for s in msg for t in s.tokens) > len(msg)
    assert not any(t.msg_start for s in phone for t in s.tokens)


def test_synthetic_config_error():
    with pytest.raises(ConfigError):
        generate_synthetic(0)
    with pytest.raises(ConfigError):
        generate_synthetic(5, profile="fax")


def test_run_cv_writes_artifacts_and_is_deterministic(tmp_path):
    c = generate_synthetic(40, 2)
    plan = make_folds(c, 3, 0)
    r1 = run_cv(c, plan, RunConfig(model="maxent"), tmp_path / "a")
    r2 = run_cv(c, plan, RunConfig(model="maxent"), tmp_path / "b")
    assert [r.as_dict() for r in r1.fold_reports] == [r.as_dict() for r in r2.fold_reports]
    for k in range(3):
        fdir = tmp_path / "a" / f"fold{k}"
        assert {p.name for p in fdir.iterdir()} == {"model.txt", "trace.csv", "report.txt",
                                                    "predictions.txt"}
        pred = load_corpus(fdir / "predictions.txt", expect_labels=True)
        assert {s.key for s in pred} == set(plan.fold_keys(k))
    summary = (tmp_path / "a" / "summary.txt").read_text()
    assert summary == (tmp_path / "b" / "summary.txt").read_text()
    assert not [p for p in os.listdir(tmp_path / "a") if ".tmp" in p]
    assert r1.pooled.gold_chunks == count_chunks(c)


def test_run_cv_neural_deterministic():
    c = generate_synthetic(12, 2)
    cfg = RunConfig(model="bilstm-crf", neural=NeuralConfig(embedding_dim=5, hidden_dim=4,
                                                            epochs=2))
    plan = make_folds(c, 2, 0)
    a = run_cv(c, plan, cfg)
    b = run_cv(c, plan, cfg)
    assert a.mean.as_dict() == b.mean.as_dict()


def test_run_cv_requires_labels():
    c = Corpus([make_seq(["a"], turn=f"t{k}") for k in range(4)])
    with pytest.raises(ConfigError):
        run_cv(c, make_folds(c, 2, 0), RunConfig())


def test_fold_failure_reports_index():
    c = generate_synthetic(20, 2)
    # a vanishing prior width makes the penalty infinite, so the optimizer aborts
    bad = RunConfig(model="crf", l2_sigma=1e-300)
    with pytest.raises(FoldError) as exc:
        run_cv(c, make_folds(c, 2, 0), bad)
    assert exc.value.fold == 0


def test_compare_models_transition_corpus():
    c = generate_synthetic(60, 0, "transition")
    out = compare_models(c, 3, 0, {"maxent": RunConfig(model="maxent"),
                                   "crf": RunConfig(model="crf")})
    assert set(out["chunk_f1"]) == {"maxent", "crf"}
    assert isinstance(out["flags"], list)
