"""Dictionary-based standardization of chat slang and dialect phrases."""
from __future__ import annotations

import enum
import os
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

from .corpus import Corpus, CorpusError, TaggedSequence, Token

MAX_PHRASE = 4


class DictionaryError(ValueError):
    pass


class DuplicateKeyError(DictionaryError):
    pass


class ClosureError(DictionaryError):
    def __init__(self, chain: list[str], where: str = ""):
        self.chain = chain
        super().__init__(f"{where}rewrite chain: {' -> '.join(chain)}")


class AlignmentError(CorpusError):
    pass


class DictKind(enum.Enum):
    CHAT = "chat"
    DIALECT = "dialect"


Phrase = tuple[str, ...]


@dataclass(frozen=True)
class Dictionary:
    entries: tuple[tuple[Phrase, Phrase], ...]
    kind: DictKind = DictKind.CHAT
    _lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple((tuple(v.lower() for v in var), tuple(std)) for var, std in self.entries)
        object.__setattr__(self, "entries", entries)
        lookup: dict[Phrase, Phrase] = {}
        for var, std in entries:
            for phrase in (var, std):
                if not 1 <= len(phrase) <= MAX_PHRASE:
                    raise DictionaryError(f"phrase length must be 1..{MAX_PHRASE}: {phrase}")
            if var in lookup:
                raise DuplicateKeyError(f"duplicate variant {' '.join(var)!r}")
            lookup[var] = std
        object.__setattr__(self, "_lookup", lookup)
        chain = find_chain(lookup)
        if chain:
            raise ClosureError(chain)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, phrase: Phrase) -> Phrase | None:
        return self._lookup.get(phrase)

    @property
    def max_len(self) -> int:
        return max((len(v) for v, _ in self.entries), default=0)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str]], kind: DictKind = DictKind.CHAT):
        return cls(tuple((tuple(v.split()), tuple(s.split())) for v, s in pairs), kind)


def find_chain(lookup: dict[Phrase, Phrase]) -> list[str] | None:
    """Return a rewrite chain ``[v, std, std2]`` if some standard side is a variant.

    Sub-phrases of a standard side count too, since greedy matching would
    rewrite them on a second pass.
    """
    for var, std in lookup.items():
        for n in range(len(std), 0, -1):
            for i in range(len(std) - n + 1):
                sub = std[i:i + n]
                if sub in lookup:
                    return [" ".join(var), " ".join(std), " ".join(lookup[sub])]
    return None


def load_dictionary(path: str | os.PathLike, kind: DictKind | str | None = None) -> Dictionary:
    """Read a ``variant<TAB>standard`` TSV file.

    When ``kind`` is omitted it is taken from a ``# kind=<chat|dialect>``
    comment, defaulting to chat.
    """
    path = os.fspath(path)
    file_kind = None
    pairs: list[tuple[Phrase, Phrase]] = []
    seen: dict[Phrase, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("kind="):
                    file_kind = DictKind(body[5:].strip().lower())
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0].strip() or not cols[1].strip():
                raise DictionaryError(f"{path}:{line_no}: expected 'variant<TAB>standard'")
            var = tuple(cols[0].lower().split())
            std = tuple(cols[1].split())
            if var in seen:
                raise DuplicateKeyError(
                    f"{path}:{line_no}: duplicate variant {' '.join(var)!r} (first on line {seen[var]})")
            seen[var] = line_no
            pairs.append((var, std))
    if kind is None:
        kind = file_kind or DictKind.CHAT
    try:
        return Dictionary(tuple(pairs), DictKind(kind))
    except ClosureError as exc:
        raise ClosureError(exc.chain, f"{path}: ") from None


def bundled_dictionary(kind: DictKind | str) -> Dictionary:
    kind = DictKind(kind)
    ref = resources.files("fsseg") / "data" / f"{kind.value}_dict.tsv"
    with resources.as_file(ref) as p:
        return load_dictionary(p, kind)


@dataclass
class NormalizationReport:
    replacements: int = 0
    per_entry_hits: Counter = field(default_factory=Counter)
    tokens_in: int = 0
    tokens_out: int = 0

    def merge(self, other: "NormalizationReport") -> None:
        self.replacements += other.replacements
        self.per_entry_hits.update(other.per_entry_hits)
        self.tokens_in += other.tokens_in
        self.tokens_out += other.tokens_out


def _order(dicts: Sequence[Dictionary]) -> list[Dictionary]:
    # chat slang first, then dialect; stable within a kind
    return sorted(dicts, key=lambda d: 0 if d.kind is DictKind.CHAT else 1)


def _rewrite(tokens: list[Token], d: Dictionary, report: NormalizationReport) -> list[Token]:
    out: list[Token] = []
    keys = [t.text.lower() for t in tokens]
    longest = d.max_len
    i = 0
    while i < len(tokens):
        hit = None
        for n in range(min(longest, len(tokens) - i), 0, -1):
            var = tuple(keys[i:i + n])
            std = d.lookup(var)
            if std is not None:
                hit = (var, std)
                break
        if hit is None:
            out.append(tokens[i])
            i += 1
            continue
        var, std = hit
        out.append(Token(std[0], tokens[i].msg_start))
        out.extend(Token(w) for w in std[1:])
        report.replacements += 1
        report.per_entry_hits[" ".join(var)] += 1
        i += len(var)
    return out


def normalize_sequence(seq: TaggedSequence, dicts: Sequence[Dictionary],
                       lowercase: bool = False) -> tuple[TaggedSequence, NormalizationReport]:
    report = NormalizationReport(tokens_in=len(seq))
    tokens = list(seq.tokens)
    if lowercase:
        tokens = [Token(t.text.lower(), t.msg_start) for t in tokens]
    for d in _order(dicts):
        tokens = _rewrite(tokens, d, report)
    report.tokens_out = len(tokens)
    if seq.tags and len(tokens) != len(seq.tags):
        raise AlignmentError(
            f"turn {seq.dialogue_id}/{seq.turn_id}: normalization changes token count "
            f"{len(seq.tags)} -> {len(tokens)} on a labeled sequence")
    return TaggedSequence(seq.dialogue_id, seq.turn_id, seq.speaker, tokens, seq.tags), report


def normalize_corpus(corpus: Corpus, dicts: Sequence[Dictionary],
                     lowercase: bool = False) -> tuple[Corpus, NormalizationReport]:
    total = NormalizationReport()
    out = []
    for seq in corpus:
        new, rep = normalize_sequence(seq, dicts, lowercase)
        out.append(new)
        total.merge(rep)
    return corpus.replace(out), total
