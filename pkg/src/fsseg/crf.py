"""Linear-chain CRF of Markov order 1 or 2 over the B/I tagset.

Order 2 runs a first-order recursion over composite states ``(prev, cur)``.
The previous-tag slot has an extra ``BOS`` value used only at position 0;
transitions out of ``(BOS, y0)`` carry no weight, so the transition table
holds exactly ``|tagset| ** (order + 1)`` parameters and emission features
fire per ``(feature, current tag)`` as in the MaxEnt model.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels, modelio
from .corpus import TAG_INDEX, TAGSET, Corpus, CorpusError, Tag, TaggedSequence
from .features import (DEFAULT_TEMPLATES, DesignMatrix, FeatureTemplate, FeatureVocabulary,
                       build_vocabulary, design_matrix, parse_templates, serialize_templates)
from .optim import OptimizationTrace, OptimizerConfig, minimize

NEG_INF = -np.inf


class StateSpace:
    """Maps tag-level potentials onto the composite-state lattice."""

    def __init__(self, order: int, n_tags: int = len(TAGSET)):
        if order not in (1, 2):
            raise ValueError(f"markov order must be 1 or 2, got {order}")
        self.order = order
        self.T = T = n_tags
        if order == 1:
            self.S = T
            self.cur = np.arange(T)
            self.prev = np.full(T, -1)
        else:
            # state p*T + c, p == T is the BOS placeholder
            self.S = (T + 1) * T
            self.cur = np.tile(np.arange(T), T + 1)
            self.prev = np.repeat(np.arange(T + 1), T)
        self.is_start = self.prev == (T if order == 2 else -1)
        self.trans_shape = (T,) * (order + 1)

    def pair(self, trans: np.ndarray) -> np.ndarray:
        trans = np.asarray(trans, dtype=np.float64)
        if trans.shape != self.trans_shape:
            raise ValueError(f"transition shape {trans.shape} != {self.trans_shape}")
        if self.order == 1:
            return trans.copy()
        T = self.T
        pair = np.full((self.S, self.S), NEG_INF)
        for a in range(T + 1):
            for b in range(T):
                for c in range(T):
                    src, dst = a * T + b, b * T + c
                    pair[src, dst] = 0.0 if a == T else trans[a, b, c]
        return pair

    def unary(self, emissions: np.ndarray, offsets: np.ndarray | None = None) -> np.ndarray:
        """Composite unary table for stacked per-tag emission scores (N, T)."""
        emissions = np.asarray(emissions, dtype=np.float64)
        if offsets is None:
            offsets = np.array([0, emissions.shape[0]])
        u = emissions[:, self.cur]
        if self.order == 2:
            first = np.zeros(emissions.shape[0], dtype=bool)
            first[offsets[:-1]] = True
            u = np.where(first[:, None] == self.is_start[None, :], u, NEG_INF)
        return u

    def tag_marginals(self, gamma: np.ndarray) -> np.ndarray:
        out = np.zeros((gamma.shape[0], self.T))
        for c in range(self.T):
            out[:, c] = gamma[:, self.cur == c].sum(axis=1)
        return out

    def trans_expectations(self, pair_counts: np.ndarray) -> np.ndarray:
        if self.order == 1:
            return pair_counts.copy()
        T = self.T
        out = np.zeros(self.trans_shape)
        for a in range(T):
            for b in range(T):
                for c in range(T):
                    out[a, b, c] = pair_counts[a * T + b, b * T + c]
        return out

    def gold_trans_counts(self, gold: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        counts = np.zeros(self.trans_shape)
        k = self.order
        for s in range(len(offsets) - 1):
            y = gold[offsets[s]:offsets[s + 1]]
            for t in range(k, len(y)):
                counts[tuple(y[t - k:t + 1])] += 1
        return counts

    def tags(self, path: np.ndarray) -> np.ndarray:
        return self.cur[path]


@dataclass
class CrfModel:
    weights: np.ndarray                  # emission weights (K, |tagset|)
    transitions: np.ndarray              # |tagset| ** (order + 1)
    vocab: FeatureVocabulary
    templates: tuple[FeatureTemplate, ...] = DEFAULT_TEMPLATES
    use_msg_boundary: bool = False
    l2_sigma: float = 1.0
    markov_order: int = 2
    tagset: tuple[Tag, ...] = TAGSET

    def __post_init__(self):
        self.space = StateSpace(self.markov_order, len(self.tagset))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        if self.weights.shape != (len(self.vocab), len(self.tagset)):
            raise ValueError("emission weight shape does not match vocabulary x tagset")
        if self.transitions.shape != self.space.trans_shape:
            raise ValueError(f"transition shape {self.transitions.shape} "
                             f"!= {self.space.trans_shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.transitions))):
            raise ValueError("CRF weights must be finite")

    @classmethod
    def zeros(cls, vocab: FeatureVocabulary, markov_order: int = 2, **kw) -> "CrfModel":
        T = len(TAGSET)
        return cls(np.zeros((len(vocab), T)), np.zeros((T,) * (markov_order + 1)), vocab,
                   markov_order=markov_order, **kw)

    @property
    def n_params(self) -> int:
        return self.weights.size + self.transitions.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.transitions.ravel()])

    def set_flat(self, w: np.ndarray) -> None:
        k = self.weights.size
        self.weights = np.array(w[:k]).reshape(self.weights.shape)
        self.transitions = np.array(w[k:]).reshape(self.transitions.shape)

    def design(self, sequences: Sequence[TaggedSequence], with_gold: bool = False) -> DesignMatrix:
        return design_matrix(sequences, self.vocab, self.templates, self.use_msg_boundary,
                             with_gold=with_gold)

    def emissions(self, seq: TaggedSequence) -> np.ndarray:
        return np.asarray(self.design([seq]).X @ self.weights)

    def save(self, path) -> None:
        header = {
            "model_type": "crf",
            "markov_order": str(self.markov_order),
            "tagset": ",".join(t.value for t in self.tagset),
            "templates": serialize_templates(self.templates),
            "l2_sigma": repr(float(self.l2_sigma)),
            "cutoff": str(self.vocab.cutoff),
            "use_msg_boundary": str(int(self.use_msg_boundary)),
        }
        trans = {tuple(self.tagset[i] for i in idx): float(self.transitions[idx])
                 for idx in itertools.product(range(len(self.tagset)),
                                              repeat=self.markov_order + 1)}
        modelio.write_weighted(path, modelio.WeightedModelFile(
            header, list(self.vocab.features), self.weights, trans))

    @classmethod
    def load(cls, path) -> "CrfModel":
        wm = modelio.read_weighted(path)
        if wm.header["model_type"] != "crf":
            raise modelio.ModelFormatError(f"{path}: model_type is {wm.header['model_type']}")
        order = int(wm.header["markov_order"])
        T = len(wm.tagset)
        trans = np.zeros((T,) * (order + 1))
        for hist, w in wm.transitions.items():
            if len(hist) != order + 1:
                raise modelio.ModelFormatError(f"{path}: transition {hist} has wrong order")
            trans[tuple(TAG_INDEX[t] for t in hist)] = w
        vocab = FeatureVocabulary(tuple(wm.features), int(wm.header.get("cutoff", 1)))
        return cls(wm.weights, trans, vocab, parse_templates(wm.header["templates"]),
                   wm.header.get("use_msg_boundary", "0") == "1",
                   float(wm.header.get("l2_sigma", 1.0)), order, wm.tagset)


@dataclass
class Lattice:
    unary: np.ndarray
    pair: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    log_z: float
    log_z_backward: float
    space: StateSpace

    def state_marginals(self) -> np.ndarray:
        return np.exp(self.alpha + self.beta - self.log_z)

    def tag_marginals(self) -> np.ndarray:
        return self.space.tag_marginals(self.state_marginals())


def build_lattice(emissions: np.ndarray, transitions: np.ndarray, order: int) -> Lattice:
    """Forward-backward tables for injected per-position tag scores."""
    space = StateSpace(order, emissions.shape[1])
    unary = space.unary(emissions)
    pair = space.pair(transitions)
    alpha, log_z = kernels.forward(unary, pair)
    beta = kernels.backward(unary, pair)
    log_z_b = float(np.logaddexp.reduce(unary[0] + beta[0]))
    return Lattice(unary, pair, alpha, beta, log_z, log_z_b, space)


def viterbi_scores(emissions: np.ndarray, transitions: np.ndarray, order: int
                   ) -> tuple[np.ndarray, float]:
    space = StateSpace(order, emissions.shape[1])
    path, score = kernels.viterbi(space.unary(emissions), space.pair(transitions))
    return space.tags(path), score


def path_score(emissions: np.ndarray, transitions: np.ndarray, tags: Sequence[int]) -> float:
    """Unnormalized log score of one tag-index path."""
    k = transitions.ndim - 1
    s = float(sum(emissions[t, y] for t, y in enumerate(tags)))
    for t in range(k, len(tags)):
        s += float(transitions[tuple(tags[t - k:t + 1])])
    return s


def crf_log_partition(model: CrfModel, seq: TaggedSequence) -> tuple[float, Lattice]:
    lat = build_lattice(model.emissions(seq), model.transitions, model.markov_order)
    return lat.log_z, lat


class CrfObjective:
    """Negative penalized conditional log-likelihood over a fixed corpus."""

    def __init__(self, dm: DesignMatrix, space: StateSpace, l2_sigma: float):
        if dm.gold is None:
            raise CorpusError("objective needs a labeled corpus")
        self.X = dm.X
        self.XT = dm.X.T.tocsr()
        self.offsets = dm.offsets
        self.gold = dm.gold
        self.space = space
        self.K = dm.X.shape[1]
        self.T = space.T
        self.inv_var = 1.0 / (l2_sigma * l2_sigma)
        Y = np.zeros((dm.X.shape[0], self.T))
        Y[np.arange(len(dm.gold)), dm.gold] = 1.0
        self.Y = Y
        self.empirical_emit = self.XT @ Y
        self.empirical_trans = space.gold_trans_counts(dm.gold, dm.offsets)
        self.n_emit = self.K * self.T

    def data_term(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        W = w[:self.n_emit].reshape(self.K, self.T)
        trans = w[self.n_emit:].reshape(self.space.trans_shape)
        E = np.asarray(self.X @ W)
        unary = self.space.unary(E, self.offsets)
        logz, gamma, pair_counts = kernels.corpus_expectations(unary, self.offsets,
                                                               self.space.pair(trans))
        gold = float(np.sum(E[np.arange(len(self.gold)), self.gold])
                     + np.sum(self.empirical_trans * trans))
        value = float(np.sum(logz)) - gold
        P = self.space.tag_marginals(gamma)
        g_emit = self.XT @ P - self.empirical_emit
        g_trans = self.space.trans_expectations(pair_counts) - self.empirical_trans
        return value, np.concatenate([g_emit.ravel(), g_trans.ravel()])

    def __call__(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        value, grad = self.data_term(w)
        value += 0.5 * self.inv_var * float(w @ w)
        grad += self.inv_var * w
        return value, grad


def _objective(model: CrfModel, corpus: Corpus | Sequence[TaggedSequence]) -> CrfObjective:
    seqs = corpus.sequences if isinstance(corpus, Corpus) else list(corpus)
    for seq in seqs:
        if len(seq.tags) != len(seq.tokens):
            raise CorpusError(f"turn {seq.key}: {len(seq.tags)} tags for {len(seq)} tokens")
    return CrfObjective(model.design(seqs, with_gold=True), model.space, model.l2_sigma)


def crf_loglik_grad(model: CrfModel, corpus: Corpus | Sequence[TaggedSequence]
                    ) -> tuple[float, np.ndarray]:
    """Penalized negative log-likelihood and its gradient at the model's weights.

    The gradient is laid out as ``[emission weights (K*T), transitions]``.
    """
    return _objective(model, corpus)(model.flat())


def crf_train(corpus: Corpus, templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
              cutoff: int = 1, l2_sigma: float = 1.0, order: int = 2,
              cfg: OptimizerConfig | None = None, use_msg_boundary: bool = False
              ) -> tuple[CrfModel, OptimizationTrace]:
    if len(corpus) == 0:
        raise CorpusError("cannot train on an empty corpus")
    templates = tuple(templates)
    vocab = build_vocabulary(corpus, templates, cutoff, use_msg_boundary)
    model = CrfModel.zeros(vocab, markov_order=order, templates=templates,
                           use_msg_boundary=use_msg_boundary, l2_sigma=l2_sigma)
    w, trace = minimize(_objective(model, corpus), model.flat(), cfg)
    model.set_flat(w)
    return model, trace


def crf_decode(model: CrfModel, seq: TaggedSequence) -> tuple[list[Tag], float]:
    tags, score = viterbi_scores(model.emissions(seq), model.transitions, model.markov_order)
    return [model.tagset[j] for j in tags], score


def crf_decode_many(model: CrfModel, sequences: Sequence[TaggedSequence]) -> list[list[Tag]]:
    dm = model.design(sequences)
    E = np.asarray(dm.X @ model.weights)
    pair = model.space.pair(model.transitions)
    out = []
    for s in range(dm.n_sequences):
        unary = model.space.unary(E[dm.rows(s)])
        path, _ = kernels.viterbi(unary, pair)
        out.append([model.tagset[j] for j in model.space.tags(path)])
    return out
