"""Bi-LSTM-CRF tagger in plain numpy with hand-written backpropagation.

Architecture: token embeddings -> forward and backward LSTMs -> concatenated
hidden states (dropout in training) -> linear projection to tag scores ->
first-order CRF with BOS/EOS transitions.  The CRF layer here is a separate
implementation from :mod:`fsseg.crf`; the two are cross-checked in tests.
"""
from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import TAGSET, Corpus, CorpusError, Tag, TaggedSequence

NEURAL_MAGIC = "fsseg-neural v1"
UNK = "<UNK>"

PARAM_NAMES = ("embeddings", "fwd_Wx", "fwd_Wh", "fwd_b", "bwd_Wx", "bwd_Wh", "bwd_b",
               "proj_W", "proj_b", "transitions")


@dataclass(frozen=True)
class NeuralConfig:
    embedding_dim: int = 50
    hidden_dim: int = 50
    dropout: float = 0.5
    learning_rate: float = 0.01
    clip: float = 5.0
    epochs: int = 30
    seed: int = 0
    unk_replace: float = 0.5

    def __post_init__(self):
        if self.embedding_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning rate must be non-negative")


@dataclass
class NeuralModel:
    vocab: tuple[str, ...]
    params: dict[str, np.ndarray]
    config: NeuralConfig = field(default_factory=NeuralConfig)
    tagset: tuple[Tag, ...] = TAGSET

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        if not self.vocab or self.vocab[0] != UNK:
            raise ValueError(f"vocabulary id 0 must be {UNK}")
        self.index = {w: k for k, w in enumerate(self.vocab)}
        V, d, h, T = len(self.vocab), self.config.embedding_dim, self.config.hidden_dim, len(self.tagset)
        shapes = param_shapes(V, d, h, T)
        for name in PARAM_NAMES:
            if name not in self.params:
                raise ValueError(f"missing parameter block {name}")
            self.params[name] = np.asarray(self.params[name], dtype=np.float64)
            if self.params[name].shape != shapes[name]:
                raise ValueError(f"{name}: shape {self.params[name].shape} != {shapes[name]}")

    @property
    def n_tags(self) -> int:
        return len(self.tagset)

    def token_ids(self, seq: TaggedSequence) -> np.ndarray:
        return np.array([self.index.get(t.text, 0) for t in seq.tokens], dtype=np.int64)

    def copy(self) -> "NeuralModel":
        return NeuralModel(self.vocab, {k: v.copy() for k, v in self.params.items()},
                           self.config, self.tagset)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in PARAM_NAMES])

    def set_flat(self, w: np.ndarray) -> None:
        k = 0
        for n in PARAM_NAMES:
            size = self.params[n].size
            self.params[n] = np.array(w[k:k + size]).reshape(self.params[n].shape)
            k += size

    def save(self, path) -> None:
        save_neural(self, path)

    @classmethod
    def load(cls, path) -> "NeuralModel":
        return load_neural(path)


def param_shapes(V: int, d: int, h: int, T: int) -> dict[str, tuple[int, ...]]:
    return {
        "embeddings": (V, d),
        "fwd_Wx": (4 * h, d), "fwd_Wh": (4 * h, h), "fwd_b": (4 * h,),
        "bwd_Wx": (4 * h, d), "bwd_Wh": (4 * h, h), "bwd_b": (4 * h,),
        "proj_W": (T, 2 * h), "proj_b": (T,),
        # rows/cols 0..T-1 are tags, T is BOS, T+1 is EOS
        "transitions": (T + 2, T + 2),
    }


def init_model(vocab: Sequence[str], config: NeuralConfig, rng: np.random.Generator | None = None,
               zero: bool = False) -> NeuralModel:
    vocab = tuple(vocab)
    if not vocab or vocab[0] != UNK:
        vocab = (UNK,) + tuple(w for w in vocab if w != UNK)
    T = len(TAGSET)
    shapes = param_shapes(len(vocab), config.embedding_dim, config.hidden_dim, T)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if zero or name.endswith("_b") or name == "transitions":
            params[name] = np.zeros(shape)
        elif name == "embeddings":
            bound = math.sqrt(3.0 / shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    if not zero:
        h = config.hidden_dim
        params["fwd_b"][h:2 * h] = 1.0
        params["bwd_b"][h:2 * h] = 1.0
    return NeuralModel(vocab, params, config)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class _Cache:
    ids: np.ndarray
    x: np.ndarray
    fwd: tuple
    bwd: tuple
    H: np.ndarray
    mask: np.ndarray | None
    Hd: np.ndarray
    scores: np.ndarray


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray | None:
    if rate <= 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _encode(model: NeuralModel, ids: np.ndarray, mask: np.ndarray | None) -> _Cache:
    p = model.params
    x = p["embeddings"][ids]
    fwd = kernels.lstm_forward(x, p["fwd_Wx"], p["fwd_Wh"], p["fwd_b"], reverse=False)
    bwd = kernels.lstm_forward(x, p["bwd_Wx"], p["bwd_Wh"], p["bwd_b"], reverse=True)
    H = np.concatenate([fwd[0], bwd[0]], axis=1)
    Hd = H * mask if mask is not None else H
    scores = Hd @ p["proj_W"].T + p["proj_b"]
    return _Cache(ids, x, fwd, bwd, H, mask, Hd, scores)


def nn_forward(model: NeuralModel, seq: TaggedSequence, train_mode: bool = False,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-position tag scores, shape ``(len(seq), n_tags)``."""
    ids = model.token_ids(seq)
    mask = None
    if train_mode:
        rng = rng if rng is not None else np.random.default_rng(model.config.seed)
        mask = dropout_mask((len(ids), 2 * model.config.hidden_dim), model.config.dropout, rng)
    return _encode(model, ids, mask).scores


# ---------------------------------------------------------------------------
# CRF output layer
# ---------------------------------------------------------------------------

def _lse(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else float(out.ravel()[0])


def crf_layer_log_partition(scores: np.ndarray, transitions: np.ndarray
                            ) -> tuple[float, np.ndarray, np.ndarray]:
    """log Z, forward table and backward table for the BOS/EOS-augmented chain."""
    n, T = scores.shape
    A = transitions[:T, :T]
    start = transitions[T, :T]
    end = transitions[:T, T + 1]
    alpha = np.empty((n, T))
    beta = np.empty((n, T))
    alpha[0] = start + scores[0]
    for t in range(1, n):
        alpha[t] = scores[t] + _lse(alpha[t - 1][:, None] + A, axis=0)
    beta[-1] = end
    for t in range(n - 2, -1, -1):
        beta[t] = _lse(A + (scores[t + 1] + beta[t + 1])[None, :], axis=1)
    return _lse(alpha[-1] + end), alpha, beta


def crf_layer_score(scores: np.ndarray, transitions: np.ndarray, tags: Sequence[int]) -> float:
    T = scores.shape[1]
    s = transitions[T, tags[0]] + transitions[tags[-1], T + 1]
    s += sum(scores[t, y] for t, y in enumerate(tags))
    s += sum(transitions[a, b] for a, b in zip(tags[:-1], tags[1:]))
    return float(s)


def crf_layer_viterbi(scores: np.ndarray, transitions: np.ndarray) -> tuple[list[int], float]:
    n, T = scores.shape
    A = transitions[:T, :T]
    delta = transitions[T, :T] + scores[0]
    back = np.zeros((n, T), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + A
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(T)] + scores[t]
    delta = delta + transitions[:T, T + 1]
    last = int(np.argmax(delta))
    path = [last]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1], float(delta[last])


def crf_layer_loss_grad(scores: np.ndarray, transitions: np.ndarray, gold: Sequence[int]
                        ) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative log-likelihood with gradients w.r.t. scores and transitions."""
    n, T = scores.shape
    log_z, alpha, beta = crf_layer_log_partition(scores, transitions)
    loss = log_z - crf_layer_score(scores, transitions, gold)
    marg = np.exp(alpha + beta - log_z)
    d_scores = marg.copy()
    d_scores[np.arange(n), gold] -= 1.0
    d_trans = np.zeros_like(transitions)
    A = transitions[:T, :T]
    if n > 1:
        xi = alpha[:-1, :, None] + A[None] + (scores[1:] + beta[1:])[:, None, :] - log_z
        d_trans[:T, :T] = np.exp(xi).sum(axis=0)
    d_trans[T, :T] = marg[0]
    d_trans[:T, T + 1] = marg[-1]
    d_trans[T, gold[0]] -= 1.0
    d_trans[gold[-1], T + 1] -= 1.0
    for a, b in zip(gold[:-1], gold[1:]):
        d_trans[a, b] -= 1.0
    return loss, d_scores, d_trans


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def _loss_grad_ids(model: NeuralModel, ids: np.ndarray, gold: np.ndarray,
                   mask: np.ndarray | None) -> tuple[float, dict[str, np.ndarray]]:
    p = model.params
    h = model.config.hidden_dim
    cache = _encode(model, ids, mask)
    loss, d_scores, d_trans = crf_layer_loss_grad(cache.scores, p["transitions"], gold)
    grads = {"transitions": d_trans,
             "proj_W": d_scores.T @ cache.Hd,
             "proj_b": d_scores.sum(axis=0)}
    dH = d_scores @ p["proj_W"]
    if mask is not None:
        dH = dH * mask
    dx_f, grads["fwd_Wx"], grads["fwd_Wh"], grads["fwd_b"] = kernels.lstm_backward(
        dH[:, :h], cache.x, p["fwd_Wx"], p["fwd_Wh"], *cache.fwd, reverse=False)
    dx_b, grads["bwd_Wx"], grads["bwd_Wh"], grads["bwd_b"] = kernels.lstm_backward(
        dH[:, h:], cache.x, p["bwd_Wx"], p["bwd_Wh"], *cache.bwd, reverse=True)
    d_emb = np.zeros_like(p["embeddings"])
    np.add.at(d_emb, ids, dx_f + dx_b)
    grads["embeddings"] = d_emb
    return float(loss), grads


def _gold(model: NeuralModel, seq: TaggedSequence) -> np.ndarray:
    if not seq.tags:
        raise CorpusError(f"turn {seq.key} is unlabeled")
    index = {t: k for k, t in enumerate(model.tagset)}
    return np.array([index[t] for t in seq.tags], dtype=np.int64)


def nn_loss_grad(model: NeuralModel, seq: TaggedSequence, mask: np.ndarray | None = None
                 ) -> tuple[float, dict[str, np.ndarray]]:
    """Sentence-level CRF negative log-likelihood and gradients for every block.

    ``mask`` is an optional fixed dropout mask over the encoder output.
    """
    return _loss_grad_ids(model, model.token_ids(seq), _gold(model, seq), mask)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale in place so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# training and decoding
# ---------------------------------------------------------------------------

def nn_train(corpus: Corpus, cfg: NeuralConfig | None = None) -> tuple[NeuralModel, list[float]]:
    cfg = cfg or NeuralConfig()
    if len(corpus) == 0:
        raise CorpusError("cannot train on an empty corpus")
    counts = Counter(t.text for seq in corpus for t in seq.tokens)
    vocab = (UNK,) + tuple(sorted(counts))
    singletons = np.array([counts.get(w, 0) == 1 for w in vocab])
    rng = np.random.default_rng(cfg.seed)
    model = init_model(vocab, cfg, rng)
    data = [(model.token_ids(seq), _gold(model, seq)) for seq in corpus]
    trace: list[float] = []
    for _ in range(cfg.epochs):
        total = 0.0
        for k in rng.permutation(len(data)):
            ids, gold = data[k]
            if cfg.unk_replace > 0:
                drop = singletons[ids] & (rng.random(len(ids)) < cfg.unk_replace)
                ids = np.where(drop, 0, ids)
            mask = dropout_mask((len(ids), 2 * cfg.hidden_dim), cfg.dropout, rng)
            loss, grads = _loss_grad_ids(model, ids, gold, mask)
            total += loss
            clip_gradients(grads, cfg.clip)
            if cfg.learning_rate > 0:
                for name, g in grads.items():
                    model.params[name] -= cfg.learning_rate * g
        trace.append(total)
    return model, trace


def nn_decode(model: NeuralModel, seq: TaggedSequence) -> list[Tag]:
    scores = nn_forward(model, seq, train_mode=False)
    path, _ = crf_layer_viterbi(scores, model.params["transitions"])
    return [model.tagset[j] for j in path]


def nn_decode_many(model: NeuralModel, sequences: Sequence[TaggedSequence]) -> list[list[Tag]]:
    return [nn_decode(model, s) for s in sequences]


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def save_neural(model: NeuralModel, path) -> None:
    """Header ``key=value`` lines, ``[vocab]`` with one token per line, then
    ``[block <name> <rows> <cols>]`` sections holding rows of ``repr`` floats."""
    lines = [NEURAL_MAGIC]
    for f in fields(NeuralConfig):
        lines.append(f"{f.name}={getattr(model.config, f.name)!r}")
    lines.append(f"vocab_size={len(model.vocab)}")
    lines.append(f"tagset={','.join(t.value for t in model.tagset)}")
    lines.append("[vocab]")
    lines.extend(model.vocab)
    for name in PARAM_NAMES:
        arr = model.params[name]
        mat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        lines.append(f"[block {name} {mat.shape[0]} {mat.shape[1]}]")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in mat)
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_neural(path) -> NeuralModel:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines[0].strip() != NEURAL_MAGIC:
        raise ValueError(f"{path}: not a {NEURAL_MAGIC!r} file")
    header: dict[str, str] = {}
    k = 1
    while lines[k] != "[vocab]":
        key, _, value = lines[k].partition("=")
        header[key] = value
        k += 1
    defaults = NeuralConfig()
    cfg = NeuralConfig(**{f.name: type(getattr(defaults, f.name))(header[f.name])
                          for f in fields(NeuralConfig) if f.name in header})
    V = int(header["vocab_size"])
    vocab = lines[k + 1:k + 1 + V]
    k += 1 + V
    params = {}
    while k < len(lines) and lines[k].startswith("[block "):
        _, name, rows, cols = lines[k].strip("[]").split()
        rows, cols = int(rows), int(cols)
        mat = np.array([[float(v) for v in lines[k + 1 + r].split()] for r in range(rows)])
        params[name] = mat.reshape(rows, cols)
        k += 1 + rows
    T = len(header["tagset"].split(","))
    shapes = param_shapes(V, cfg.embedding_dim, cfg.hidden_dim, T)
    params = {n: params[n].reshape(shapes[n]) for n in PARAM_NAMES}
    tagset = tuple(Tag(t) for t in header["tagset"].split(","))
    return NeuralModel(tuple(vocab), params, cfg, tagset)
