"""Per-token maximum entropy (multinomial logistic) tagger."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import modelio
from .corpus import TAGSET, Corpus, CorpusError, Tag, TaggedSequence
from .features import (DEFAULT_TEMPLATES, DesignMatrix, FeatureTemplate, FeatureVocabulary,
                       build_vocabulary, design_matrix, parse_templates, serialize_templates)
from .optim import OptimizationTrace, OptimizerConfig, minimize


@dataclass
class MaxEntModel:
    weights: np.ndarray                  # (K, |tagset|)
    vocab: FeatureVocabulary
    templates: tuple[FeatureTemplate, ...] = DEFAULT_TEMPLATES
    use_msg_boundary: bool = False
    l2_sigma: float = 1.0
    tagset: tuple[Tag, ...] = TAGSET

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.vocab), len(self.tagset)):
            raise ValueError(f"weights shape {self.weights.shape} does not match "
                             f"{len(self.vocab)} features x {len(self.tagset)} tags")

    @classmethod
    def zeros(cls, vocab: FeatureVocabulary, **kw) -> "MaxEntModel":
        return cls(np.zeros((len(vocab), len(TAGSET))), vocab, **kw)

    def design(self, sequences: Sequence[TaggedSequence], with_gold: bool = False) -> DesignMatrix:
        return design_matrix(sequences, self.vocab, self.templates, self.use_msg_boundary,
                             with_gold=with_gold)

    def save(self, path) -> None:
        header = {
            "model_type": "maxent",
            "markov_order": "0",
            "tagset": ",".join(t.value for t in self.tagset),
            "templates": serialize_templates(self.templates),
            "l2_sigma": repr(float(self.l2_sigma)),
            "cutoff": str(self.vocab.cutoff),
            "use_msg_boundary": str(int(self.use_msg_boundary)),
        }
        modelio.write_weighted(path, modelio.WeightedModelFile(
            header, list(self.vocab.features), self.weights))

    @classmethod
    def load(cls, path) -> "MaxEntModel":
        wm = modelio.read_weighted(path)
        if wm.header["model_type"] != "maxent":
            raise modelio.ModelFormatError(f"{path}: model_type is {wm.header['model_type']}")
        vocab = FeatureVocabulary(tuple(wm.features), int(wm.header.get("cutoff", 1)))
        return cls(wm.weights, vocab, parse_templates(wm.header["templates"]),
                   wm.header.get("use_msg_boundary", "0") == "1",
                   float(wm.header.get("l2_sigma", 1.0)), wm.tagset)


def _softmax_rows(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    z = e.sum(axis=1, keepdims=True)
    return e / z, (np.log(z) + m)[:, 0]


def me_probability(model: MaxEntModel, x: np.ndarray) -> np.ndarray:
    """P(tag | active feature ids ``x``) over ``model.tagset``."""
    x = np.asarray(x, dtype=np.int64)
    scores = model.weights[x].sum(axis=0) if x.size else np.zeros(len(model.tagset))
    p, _ = _softmax_rows(scores[None, :])
    return p[0]


class MaxEntObjective:
    """Negative penalized log-likelihood over a fixed design matrix."""

    def __init__(self, dm: DesignMatrix, n_tags: int, l2_sigma: float):
        if dm.gold is None:
            raise CorpusError("objective needs a labeled corpus")
        self.X = dm.X
        self.XT = dm.X.T.tocsr()
        self.K = dm.X.shape[1]
        self.T = n_tags
        self.inv_var = 1.0 / (l2_sigma * l2_sigma)
        self.Y = np.zeros((dm.X.shape[0], n_tags))
        self.Y[np.arange(len(dm.gold)), dm.gold] = 1.0
        self.gold = dm.gold
        self.empirical = self.XT @ self.Y

    def __call__(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        W = w.reshape(self.K, self.T)
        scores = np.asarray(self.X @ W)
        P, logz = _softmax_rows(scores)
        gold_score = scores[np.arange(len(self.gold)), self.gold]
        value = float(np.sum(logz - gold_score)) + 0.5 * self.inv_var * float(w @ w)
        grad = (self.XT @ P - self.empirical).ravel() + self.inv_var * w
        return value, grad


def me_train(corpus: Corpus, templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
             cutoff: int = 1, l2_sigma: float = 1.0, cfg: OptimizerConfig | None = None,
             use_msg_boundary: bool = False) -> tuple[MaxEntModel, OptimizationTrace]:
    if len(corpus) == 0:
        raise CorpusError("cannot train on an empty corpus")
    templates = tuple(templates)
    vocab = build_vocabulary(corpus, templates, cutoff, use_msg_boundary)
    model = MaxEntModel.zeros(vocab, templates=templates, use_msg_boundary=use_msg_boundary,
                              l2_sigma=l2_sigma)
    obj = MaxEntObjective(model.design(corpus.sequences, with_gold=True), len(TAGSET), l2_sigma)
    w, trace = minimize(obj, model.weights.ravel(), cfg)
    model.weights = w.reshape(model.weights.shape)
    return model, trace


def me_decode(model: MaxEntModel, seq: TaggedSequence) -> list[Tag]:
    return me_decode_many(model, [seq])[0]


def me_decode_many(model: MaxEntModel, sequences: Sequence[TaggedSequence]) -> list[list[Tag]]:
    dm = model.design(sequences)
    scores = np.asarray(dm.X @ model.weights)
    best = np.argmax(scores, axis=1)           # first maximum -> B-fs on ties
    return [[model.tagset[j] for j in best[dm.rows(s)]] for s in range(dm.n_sequences)]
