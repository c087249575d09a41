"""Turn/segment data model and the tagged-corpus file format.

A corpus file is UTF-8 text.  Each turn is introduced by a header comment
``# dialogue=<id> turn=<id> speaker=<s>`` followed by one token per line::

    <token>\t<tag>[\tMB]      (labeled)
    <token>[\tMB]             (unlabeled)

and terminated by a blank line.  ``MB`` marks a token that starts a new
message inside the turn.  Other ``#`` lines are comments; a leading
``# source_kind=<KIND>`` line records where the corpus came from.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, message: str, line_no: int | None = None, path: str | None = None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}:"
        super().__init__(f"{where} {message}" if where else message)


class TagError(ParseError):
    pass


class EmptyCorpusError(CorpusError):
    pass


class CoverageError(CorpusError):
    pass


class InvariantError(CorpusError):
    pass


class Tag(enum.Enum):
    B_FS = "B-fs"
    I_FS = "I-fs"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Tag":
        try:
            return cls(text)
        except ValueError:
            raise TagError(f"unknown tag {text!r} (expected 'B-fs' or 'I-fs')") from None


B, I = Tag.B_FS, Tag.I_FS
TAGSET: tuple[Tag, ...] = (B, I)
TAG_INDEX = {t: k for k, t in enumerate(TAGSET)}


class SourceKind(enum.Enum):
    MESSAGE = "MESSAGE"
    PHONE = "PHONE"
    SYNTHETIC = "SYNTHETIC"


@dataclass(frozen=True)
class Token:
    text: str
    msg_start: bool = False

    def __post_init__(self):
        if not self.text or any(c.isspace() for c in self.text):
            raise InvariantError(f"token text must be non-empty without whitespace: {self.text!r}")


class Segment(NamedTuple):
    """Half-open token span ``[start, end)``."""

    start: int
    end: int


@dataclass(frozen=True)
class TaggedSequence:
    dialogue_id: str
    turn_id: str
    speaker: str
    tokens: tuple[Token, ...]
    tags: tuple[Tag, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if not self.tokens:
            raise InvariantError(f"turn {self.key} has no tokens")
        if self.tags and len(self.tags) != len(self.tokens):
            raise InvariantError(
                f"turn {self.key}: {len(self.tags)} tags for {len(self.tokens)} tokens"
            )
        for name in ("dialogue_id", "turn_id", "speaker"):
            value = getattr(self, name)
            if not value or any(c.isspace() for c in value):
                raise InvariantError(f"{name} must be non-empty without whitespace: {value!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.dialogue_id, self.turn_id)

    @property
    def labeled(self) -> bool:
        return bool(self.tags)

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    def with_tags(self, tags: Iterable[Tag]) -> "TaggedSequence":
        return TaggedSequence(self.dialogue_id, self.turn_id, self.speaker, self.tokens, tuple(tags))

    def unlabeled(self) -> "TaggedSequence":
        return TaggedSequence(self.dialogue_id, self.turn_id, self.speaker, self.tokens, ())

    def segments(self) -> list[Segment]:
        if not self.tags:
            raise CorpusError(f"turn {self.key} is unlabeled")
        return segments_from_tags(self.tags)

    @classmethod
    def from_text(cls, text: str, dialogue_id: str = "d0", turn_id: str = "t0",
                  speaker: str = "A") -> "TaggedSequence":
        """Whitespace-split ``text`` into an unlabeled single-message turn.

        A ``|`` token marks a segment boundary; when present the turn is
        returned labeled.
        """
        raw = text.split()
        words, tags, start = [], [], True
        for w in raw:
            if w == "|":
                start = True
                continue
            words.append(w)
            tags.append(B if start else I)
            start = False
        tokens = [Token(w, msg_start=(k == 0)) for k, w in enumerate(words)]
        return cls(dialogue_id, turn_id, speaker, tokens, tags if "|" in raw else ())


@dataclass(frozen=True)
class Corpus:
    sequences: tuple[TaggedSequence, ...]
    source_kind: SourceKind = SourceKind.SYNTHETIC
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        index = {}
        for k, seq in enumerate(self.sequences):
            if seq.key in index:
                raise InvariantError(f"duplicate dialogue/turn id {seq.key}")
            index[seq.key] = k
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, k):
        return self.sequences[k]

    def get(self, key: tuple[str, str]) -> TaggedSequence:
        return self.sequences[self._index[key]]

    @property
    def labeled(self) -> bool:
        return all(s.labeled for s in self.sequences)

    def subset(self, keys: Iterable[tuple[str, str]]) -> "Corpus":
        return Corpus([self.get(k) for k in keys], self.source_kind)

    def replace(self, sequences: Sequence[TaggedSequence]) -> "Corpus":
        return Corpus(sequences, self.source_kind)

    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sequences)


def segments_from_tags(tags: Sequence[Tag]) -> list[Segment]:
    """Split a tag string into covering segments.

    Every ``B-fs`` opens a segment; position 0 opens one whatever its tag.
    """
    if len(tags) == 0:
        raise CorpusError("empty tag list")
    starts = [k for k, t in enumerate(tags) if k == 0 or t is B]
    ends = starts[1:] + [len(tags)]
    return [Segment(s, e) for s, e in zip(starts, ends)]


def tags_from_segments(segments: Sequence[Segment | tuple[int, int]], length: int) -> list[Tag]:
    pos = 0
    tags: list[Tag] = []
    for start, end in segments:
        if start != pos:
            kind = "gap" if start > pos else "overlap"
            raise CoverageError(f"{kind} at token {min(start, pos)}: segment ({start}, {end})")
        if end <= start:
            raise CoverageError(f"empty or reversed segment ({start}, {end})")
        tags.append(B)
        tags.extend([I] * (end - start - 1))
        pos = end
    if pos != length or length == 0:
        raise CoverageError(f"segments cover [0, {pos}) but sequence length is {length}")
    return tags


_HEADER_KEYS = ("dialogue", "turn", "speaker")


def _parse_header(body: str, line_no: int, path: str) -> dict[str, str]:
    fields = {}
    for item in body.split():
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"malformed turn header item {item!r}", line_no, path)
        fields[key] = value
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise ParseError(f"turn header missing {', '.join(missing)}", line_no, path)
    return fields


def load_corpus(path: str | os.PathLike, expect_labels: bool = False,
                source_kind: SourceKind | None = None) -> Corpus:
    """Read a corpus file.

    ``source_kind`` overrides the kind recorded in the file (if any).
    """
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")

    kind = SourceKind.SYNTHETIC
    sequences: list[TaggedSequence] = []
    header: dict[str, str] | None = None
    header_line = 0
    tokens: list[Token] = []
    tags: list[Tag] = []
    labeled: bool | None = None

    def flush(line_no):
        nonlocal header, tokens, tags, labeled
        if header is None:
            return
        if not tokens:
            raise ParseError("turn has no tokens", header_line, path)
        if expect_labels and not labeled:
            raise ParseError(f"turn {header['dialogue']}/{header['turn']} is unlabeled",
                             header_line, path)
        try:
            sequences.append(TaggedSequence(header["dialogue"], header["turn"],
                                            header["speaker"], tokens, tags))
        except InvariantError as exc:
            raise ParseError(str(exc), header_line, path) from None
        header, tokens, tags, labeled = None, [], [], None

    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r")
        if not line.strip():
            flush(line_no)
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("dialogue="):
                flush(line_no)
                header = _parse_header(body, line_no, path)
                header_line = line_no
            elif body.startswith("source_kind="):
                value = body.partition("=")[2].strip()
                try:
                    kind = SourceKind(value)
                except ValueError:
                    raise ParseError(f"unknown source kind {value!r}", line_no, path) from None
            continue
        if header is None:
            raise ParseError("token line outside a turn block (missing '# dialogue=' header)",
                             line_no, path)
        cols = line.split("\t")
        if len(cols) > 3 or not cols[0] or any(c.isspace() for c in cols[0]):
            raise ParseError(f"malformed token line {line!r}", line_no, path)
        msg_start = False
        if len(cols) >= 2 and cols[-1] == "MB":
            msg_start = True
            cols = cols[:-1]
        if len(cols) > 2:
            raise ParseError(f"malformed token line {line!r}", line_no, path)
        has_tag = len(cols) == 2
        if labeled is None:
            labeled = has_tag
        elif labeled != has_tag:
            raise ParseError("turn mixes labeled and unlabeled token lines", line_no, path)
        if has_tag:
            try:
                tags.append(Tag.parse(cols[1]))
            except TagError as exc:
                raise TagError(str(exc).strip(), line_no, path) from None
        tokens.append(Token(cols[0], msg_start))
    flush(len(lines))

    if not sequences:
        raise EmptyCorpusError(f"{path}: corpus contains no turns")
    try:
        return Corpus(sequences, source_kind or kind)
    except InvariantError as exc:
        raise ParseError(str(exc), None, path) from None


def format_corpus(corpus: Corpus) -> str:
    out = [f"# source_kind={corpus.source_kind.value}"]
    for seq in corpus.sequences:
        out.append(f"# dialogue={seq.dialogue_id} turn={seq.turn_id} speaker={seq.speaker}")
        for k, tok in enumerate(seq.tokens):
            cols = [tok.text]
            if seq.tags:
                cols.append(seq.tags[k].value)
            if tok.msg_start:
                cols.append("MB")
            out.append("\t".join(cols))
        out.append("")
    return "\n".join(out) + "\n"


def save_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    text = format_corpus(corpus)
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
