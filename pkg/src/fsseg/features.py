"""N-gram feature templates, vocabulary and sparse observation vectors."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import TAG_INDEX, Corpus, CorpusError, TaggedSequence

BOS = "<BOS>"
EOS = "<EOS>"
MB_FEATURE = "MB=1"
MAX_OFFSET = 2


@dataclass(frozen=True)
class FeatureTemplate:
    name: str
    offsets: tuple[int, ...]

    def __post_init__(self):
        offsets = tuple(int(o) for o in self.offsets)
        object.__setattr__(self, "offsets", offsets)
        if not 1 <= len(offsets) <= 3:
            raise ValueError(f"template {self.name}: 1 to 3 offsets required")
        if list(offsets) != sorted(offsets):
            raise ValueError(f"template {self.name}: offsets must be ascending")
        if any(abs(o) > MAX_OFFSET for o in offsets):
            raise ValueError(f"template {self.name}: offsets must lie within +-{MAX_OFFSET}")
        if not self.name or any(c in self.name for c in "=@;,\t \n"):
            raise ValueError(f"bad template name {self.name!r}")

    @classmethod
    def ngram(cls, *offsets: int) -> "FeatureTemplate":
        prefix = {1: "u", 2: "b", 3: "t"}[len(offsets)]
        if len(offsets) == 1:
            return cls(f"{prefix}{offsets[0]}", offsets)
        return cls(f"{prefix}{offsets[0]}:{offsets[-1]}", offsets)


DEFAULT_TEMPLATES: tuple[FeatureTemplate, ...] = (
    FeatureTemplate.ngram(-2),
    FeatureTemplate.ngram(-1),
    FeatureTemplate.ngram(0),
    FeatureTemplate.ngram(1),
    FeatureTemplate.ngram(2),
    FeatureTemplate.ngram(-1, 0),
    FeatureTemplate.ngram(0, 1),
    FeatureTemplate.ngram(-1, 0, 1),
)


def serialize_templates(templates: Sequence[FeatureTemplate]) -> str:
    """``u0@0;b-1:0@-1,0`` style one-line form used in model headers."""
    return ";".join(f"{t.name}@{','.join(str(o) for o in t.offsets)}" for t in templates)


def parse_templates(text: str) -> tuple[FeatureTemplate, ...]:
    out = []
    for item in text.strip().split(";"):
        name, sep, offs = item.partition("@")
        if not sep:
            raise ValueError(f"malformed template {item!r}")
        out.append(FeatureTemplate(name, tuple(int(o) for o in offs.split(","))))
    return tuple(out)


def extract_token_features(seq: TaggedSequence, pos: int,
                           templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
                           use_msg_boundary: bool = False) -> list[str]:
    n = len(seq.tokens)
    feats = []
    for tpl in templates:
        parts = []
        for off in tpl.offsets:
            j = pos + off
            if j < 0:
                parts.append(BOS)
            elif j >= n:
                parts.append(EOS)
            else:
                parts.append(seq.tokens[j].text)
        feats.append(f"{tpl.name}={'|'.join(parts)}")
    if use_msg_boundary and seq.tokens[pos].msg_start:
        feats.append(MB_FEATURE)
    return feats


def sequence_features(seq: TaggedSequence, templates=DEFAULT_TEMPLATES,
                      use_msg_boundary: bool = False) -> list[list[str]]:
    return [extract_token_features(seq, k, templates, use_msg_boundary) for k in range(len(seq))]


@dataclass(frozen=True)
class FeatureVocabulary:
    features: tuple[str, ...]
    cutoff: int = 1
    index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        index = {f: k for k, f in enumerate(self.features)}
        if len(index) != len(self.features):
            raise ValueError("duplicate feature strings in vocabulary")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.features)

    def __contains__(self, feat: str) -> bool:
        return feat in self.index

    def ids(self, feats: Iterable[str]) -> np.ndarray:
        idx = self.index
        return np.array(sorted({idx[f] for f in feats if f in idx}), dtype=np.int64)


def build_vocabulary(corpus: Corpus, templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
                     cutoff: int = 1, use_msg_boundary: bool = False) -> FeatureVocabulary:
    if len(corpus) == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for seq in corpus:
        for feats in sequence_features(seq, templates, use_msg_boundary):
            counts.update(feats)
    kept = sorted(f for f, c in counts.items() if c >= cutoff)
    return FeatureVocabulary(tuple(kept), cutoff)


def vectorize(seq: TaggedSequence, pos: int, vocab: FeatureVocabulary,
              templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
              use_msg_boundary: bool = False) -> np.ndarray:
    """Sorted ids of the in-vocabulary features active at ``pos``."""
    return vocab.ids(extract_token_features(seq, pos, templates, use_msg_boundary))


@dataclass
class DesignMatrix:
    """All token positions of a corpus stacked as rows of a binary CSR matrix.

    ``offsets[s]:offsets[s+1]`` are the rows of sequence ``s``.
    """

    X: sp.csr_matrix
    offsets: np.ndarray
    gold: np.ndarray | None = None

    @property
    def n_sequences(self) -> int:
        return len(self.offsets) - 1

    def rows(self, s: int) -> slice:
        return slice(int(self.offsets[s]), int(self.offsets[s + 1]))


def design_matrix(sequences: Sequence[TaggedSequence], vocab: FeatureVocabulary,
                  templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
                  use_msg_boundary: bool = False, with_gold: bool = True) -> DesignMatrix:
    indptr = [0]
    indices: list[int] = []
    offsets = [0]
    gold: list[int] = []
    for seq in sequences:
        for k in range(len(seq)):
            ids = vectorize(seq, k, vocab, templates, use_msg_boundary)
            indices.extend(ids.tolist())
            indptr.append(len(indices))
        offsets.append(offsets[-1] + len(seq))
        if with_gold:
            if not seq.tags:
                raise CorpusError(f"turn {seq.key} is unlabeled")
            gold.extend(TAG_INDEX[t] for t in seq.tags)
    data = np.ones(len(indices), dtype=np.float64)
    X = sp.csr_matrix((data, np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
                      shape=(len(indptr) - 1, len(vocab)))
    return DesignMatrix(X, np.array(offsets, dtype=np.int64),
                        np.array(gold, dtype=np.int64) if with_gold else None)
