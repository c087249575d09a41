"""Cross-validation driver, synthetic corpora and model dispatch."""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import modelio
from .corpus import (B, I, Corpus, SourceKind, Tag, TaggedSequence, Token, save_corpus,
                     segments_from_tags)
from .crf import CrfModel, crf_decode_many, crf_train
from .features import DEFAULT_TEMPLATES, FeatureTemplate, parse_templates, serialize_templates
from .maxent import MaxEntModel, me_decode_many, me_train
from .metrics import MetricsReport, evaluate, mean_report
from .neural import NeuralConfig, NeuralModel, nn_decode_many, nn_train
from .normalize import Dictionary, load_dictionary, normalize_corpus
from .optim import OptimizationTrace, OptimizerConfig

log = logging.getLogger(__name__)

MODEL_KINDS = ("maxent", "crf", "bilstm-crf")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    model: str = "crf"
    templates: tuple[FeatureTemplate, ...] = DEFAULT_TEMPLATES
    cutoff: int = 1
    use_msg_boundary: bool | None = None      # None: on for MESSAGE corpora only
    l2_sigma: float = 1.0
    markov_order: int = 2
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    neural: NeuralConfig = field(default_factory=NeuralConfig)
    dictionaries: tuple[str, ...] = ()
    lowercase: bool | None = None             # None: on for PHONE corpora only
    dialogue_folds: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}; choose from {MODEL_KINDS}")
        if self.markov_order not in (1, 2):
            raise ConfigError("markov_order must be 1 or 2")
        if self.cutoff < 1:
            raise ConfigError("cutoff must be >= 1")
        if self.l2_sigma <= 0:
            raise ConfigError("l2_sigma must be positive")

    def msg_boundary_for(self, corpus: Corpus) -> bool:
        if self.use_msg_boundary is None:
            return corpus.source_kind is SourceKind.MESSAGE
        return self.use_msg_boundary

    def lowercase_for(self, corpus: Corpus) -> bool:
        if self.lowercase is None:
            return corpus.source_kind is SourceKind.PHONE
        return self.lowercase

    def check_paths(self) -> None:
        for p in self.dictionaries:
            if not os.path.exists(p):
                raise ConfigError(f"dictionary not found: {p}")


_TOP_KEYS = {
    "model": str, "cutoff": int, "l2_sigma": float, "markov_order": int,
    "dialogue_folds": _parse_bool, "out_dir": str,
}
_OPT_KEYS = {f.name: f.type for f in dataclasses.fields(OptimizerConfig)}
_NN_KEYS = {f.name: f.type for f in dataclasses.fields(NeuralConfig)}
_CASTS = {"int": int, "float": float}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    cfg = base or RunConfig()
    top: dict = {}
    opt: dict = {}
    nn: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        try:
            if key in _TOP_KEYS:
                top[key] = _TOP_KEYS[key](value)
            elif key == "templates":
                top[key] = parse_templates(value)
            elif key in ("use_msg_boundary", "lowercase"):
                top[key] = None if value.lower() == "auto" else _parse_bool(value)
            elif key == "dictionaries":
                top[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key in _OPT_KEYS:
                opt[key] = _CASTS[_OPT_KEYS[key]](value)
            elif key in _NN_KEYS:
                nn[key] = _CASTS[_NN_KEYS[key]](value)
            else:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {line_no}: bad value for {key!r}: {exc}") from None
    try:
        return dataclasses.replace(
            cfg, **top,
            optimizer=dataclasses.replace(cfg.optimizer, **opt),
            neural=dataclasses.replace(cfg.neural, **nn))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike | None, **overrides) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), cfg)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = [f"model = {cfg.model}",
             f"templates = {serialize_templates(cfg.templates)}",
             f"cutoff = {cfg.cutoff}",
             f"use_msg_boundary = {'auto' if cfg.use_msg_boundary is None else int(cfg.use_msg_boundary)}",
             f"l2_sigma = {cfg.l2_sigma!r}",
             f"markov_order = {cfg.markov_order}",
             f"lowercase = {'auto' if cfg.lowercase is None else int(cfg.lowercase)}",
             f"dialogue_folds = {int(cfg.dialogue_folds)}"]
    if cfg.dictionaries:
        lines.append(f"dictionaries = {','.join(cfg.dictionaries)}")
    for f in dataclasses.fields(OptimizerConfig):
        lines.append(f"{f.name} = {getattr(cfg.optimizer, f.name)!r}")
    for f in dataclasses.fields(NeuralConfig):
        lines.append(f"{f.name} = {getattr(cfg.neural, f.name)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model dispatch
# ---------------------------------------------------------------------------

Model = MaxEntModel | CrfModel | NeuralModel


def prepare_corpus(corpus: Corpus, cfg: RunConfig) -> Corpus:
    dicts: list[Dictionary] = [load_dictionary(p) for p in cfg.dictionaries]
    lower = cfg.lowercase_for(corpus)
    if not dicts and not lower:
        return corpus
    out, report = normalize_corpus(corpus, dicts, lower)
    log.info("normalized corpus: %d replacements", report.replacements)
    return out


def train_model(corpus: Corpus, cfg: RunConfig) -> tuple[Model, OptimizationTrace | list[float]]:
    mb = cfg.msg_boundary_for(corpus)
    if cfg.model == "maxent":
        return me_train(corpus, cfg.templates, cfg.cutoff, cfg.l2_sigma, cfg.optimizer, mb)
    if cfg.model == "crf":
        return crf_train(corpus, cfg.templates, cfg.cutoff, cfg.l2_sigma, cfg.markov_order,
                         cfg.optimizer, mb)
    return nn_train(corpus, cfg.neural)


def decode_many(model: Model, sequences: Sequence[TaggedSequence]) -> list[list[Tag]]:
    if isinstance(model, MaxEntModel):
        return me_decode_many(model, sequences)
    if isinstance(model, CrfModel):
        return crf_decode_many(model, sequences)
    return nn_decode_many(model, sequences)


def load_model(path: str | os.PathLike) -> Model:
    kind = modelio.model_kind(path)
    if kind == "maxent":
        return MaxEntModel.load(path)
    if kind == "crf":
        return CrfModel.load(path)
    return NeuralModel.load(path)


def write_trace(trace: OptimizationTrace | list[float], path: str | os.PathLike) -> None:
    if isinstance(trace, OptimizationTrace):
        trace.to_csv(path)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for k, v in enumerate(trace, start=1):
            fh.write(f"{k},{v!r}\n")


# ---------------------------------------------------------------------------
# folds and cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignments: dict[tuple[str, str], int]

    def fold_keys(self, fold: int) -> list[tuple[str, str]]:
        return [key for key, f in self.assignments.items() if f == fold]

    def sizes(self) -> list[int]:
        return [len(self.fold_keys(f)) for f in range(self.k)]


def make_folds(corpus: Corpus, k: int = 5, seed: int = 0, by_dialogue: bool = False) -> FoldPlan:
    """Seeded shuffle followed by round-robin assignment.

    With ``by_dialogue`` whole dialogues are the unit being shuffled, so no
    dialogue straddles two folds.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    if by_dialogue:
        units: dict[str, list[tuple[str, str]]] = {}
        for seq in corpus:
            units.setdefault(seq.dialogue_id, []).append(seq.key)
        groups = [units[d] for d in sorted(units)]
    else:
        groups = [[seq.key] for seq in corpus]
    if len(groups) < k:
        raise ConfigError(f"{len(groups)} units cannot fill {k} folds")
    assignments = {}
    for rank, g in enumerate(rng.permutation(len(groups))):
        for key in groups[g]:
            assignments[key] = rank % k
    return FoldPlan(k, seed, assignments)


@dataclass
class CVResult:
    fold_reports: list[MetricsReport]
    mean: MetricsReport
    pooled: MetricsReport


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        self.fold = fold
        super().__init__(f"fold {fold} failed: {cause}")


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_cv(corpus: Corpus, plan: FoldPlan, cfg: RunConfig,
           out_dir: str | os.PathLike | None = None) -> CVResult:
    if not corpus.labeled:
        raise ConfigError("cross-validation needs a labeled corpus")
    cfg.check_paths()
    corpus = prepare_corpus(corpus, cfg)
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir is not None:
        out_dir = os.fspath(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        _write_text(os.path.join(out_dir, "config.txt"), format_config(cfg))

    reports = []
    all_gold: list[list[Tag]] = []
    all_pred: list[list[Tag]] = []
    for fold in range(plan.k):
        test_keys = set(plan.fold_keys(fold))
        train = Corpus([s for s in corpus if s.key not in test_keys], corpus.source_kind)
        test = [s for s in corpus if s.key in test_keys]
        assert not test_keys & {s.key for s in train}, "test turns leaked into training"
        try:
            model, trace = train_model(train, cfg)
            pred = decode_many(model, test)
        except Exception as exc:
            raise FoldError(fold, exc) from exc
        gold = [list(s.tags) for s in test]
        rep = evaluate(gold, pred)
        reports.append(rep)
        all_gold += gold
        all_pred += pred
        log.info("fold %d/%d  chunk F1 %.4f  micro F1 %.4f", fold + 1, plan.k,
                 rep.chunk.f1, rep.micro.f1)
        if out_dir is not None:
            fdir = os.path.join(out_dir, f"fold{fold}")
            os.makedirs(fdir, exist_ok=True)
            model.save(os.path.join(fdir, "model.txt"))
            write_trace(trace, os.path.join(fdir, "trace.csv"))
            save_corpus(Corpus([s.with_tags(p) for s, p in zip(test, pred)], corpus.source_kind),
                        os.path.join(fdir, "predictions.txt"))
            _write_text(os.path.join(fdir, "report.txt"), rep.format())

    result = CVResult(reports, mean_report(reports), evaluate(all_gold, all_pred))
    if out_dir is not None:
        _write_text(os.path.join(out_dir, "summary.txt"), format_cv(result, cfg.model))
    return result


def format_cv(result: CVResult, model: str = "") -> str:
    parts = [f"# model={model} folds={len(result.fold_reports)}",
             "## mean over folds", result.mean.format_table(),
             "", "## pooled counts", result.pooled.format_table(), ""]
    for k, rep in enumerate(result.fold_reports):
        parts.append(f"fold{k}.chunk.f1={rep.chunk.f1!r}")
    parts.append(result.mean.format_kv())
    return "\n".join(parts) + "\n"


def compare_models(corpus: Corpus, k: int = 5, seed: int = 0,
                   cfgs: dict[str, RunConfig] | None = None) -> dict:
    """Mean chunk F1 per model kind on the same folds.

    The expected ordering CRF >= MaxEnt is checked and any deviation is
    flagged in the result rather than raised.
    """
    cfgs = cfgs or {kind: RunConfig(model=kind) for kind in MODEL_KINDS}
    plan = make_folds(corpus, k, seed)
    scores = {kind: run_cv(corpus, plan, cfg).mean.chunk.f1 for kind, cfg in cfgs.items()}
    out: dict = {"chunk_f1": scores, "flags": []}
    if "crf" in scores and "maxent" in scores and scores["crf"] < scores["maxent"]:
        out["flags"].append("unexpected ordering: CRF chunk F1 below MaxEnt")
    for kind, f1 in scores.items():
        log.info("%-11s mean chunk F1 %.4f", kind, f1)
    for flag in out["flags"]:
        log.warning(flag)
    return out


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

CUE_WORDS = ("xin", "nhưng", "vậy", "còn", "thế", "vâng", "dạ", "tôi", "cậu", "bạn",
             "mình", "anh", "em", "hôm", "sao", "ok")
FINAL_PARTICLES = ("nhé", "ạ", "nhỉ", "chứ", "mà", "?", ":)", "!", "đấy", ":3")
CONTENT_WORDS = (
    "làm", "học", "ăn", "cơm", "thời", "gian", "ngắn", "quá", "sợ", "đề", "tài", "chung",
    "hướng", "dẫn", "dần", "bắt", "đầu", "biết", "nhiều", "đặc", "sản", "quê", "hương",
    "sông", "cá", "biển", "nhà", "trường", "bài", "tập", "ngày", "mai", "tuần", "sau",
    "gặp", "nói", "chuyện", "thật", "vui", "buồn", "mệt", "khỏe", "chơi", "xem", "phim",
    "mua", "sách", "về", "lúc", "nào", "công", "việc", "tiền", "xe", "đường", "xa", "gần",
    "mưa", "nắng", "lạnh", "nóng", "chồng", "vợ", "được", "gì", "rồi", "cũng", "trước",
    "với", "đi", "đang", "không", "hết", "thích", "yêu", "nhớ", "chờ", "hỏi",
)
# one-token slang covered by the bundled chat dictionary (content side only)
SLANG = {"chồng": "ck", "vợ": "vk", "được": "dc", "gì": "j", "rồi": "r", "cũng": "cx",
         "trước": "trc", "với": "vs", "đi": "ik", "đang": "đg", "không": "ko"}
HESITATIONS = ("ờ", "à", "ừm", "ơ")

PROFILES = ("message", "phone", "transition")


class SyntheticGenerator:
    """Learnable-but-noisy turns for tests and demos.

    A segment starts with a cue word with probability 0.8; when it does not,
    the previous segment is forced to end in a final particle so the boundary
    is still visible from the token window.  ``segments_emitted`` counts
    every generated segment.
    """

    def __init__(self, seed: int = 0, profile: str = "message"):
        if profile not in PROFILES:
            raise ConfigError(f"unknown synthetic profile {profile!r}")
        self.rng = np.random.default_rng(seed)
        self.profile = profile
        self.segments_emitted = 0

    def _pick(self, words):
        return words[int(self.rng.integers(len(words)))]

    def _segments(self, n_tokens: int) -> list[list[str]]:
        rng = self.rng
        segs: list[list[str]] = []
        total = 0
        while total < n_tokens:
            if self.profile == "transition":
                length = min(3, n_tokens - total)
            else:
                length = min(int(rng.integers(1, 9)), n_tokens - total)
            words = [self._pick(CONTENT_WORDS) for _ in range(length)]
            if self.profile == "transition":
                if rng.random() < 0.3:
                    words[0] = self._pick(CUE_WORDS)
            else:
                cue = rng.random() < 0.8
                if segs and not cue:
                    if len(segs[-1]) >= 2:
                        segs[-1][-1] = self._pick(FINAL_PARTICLES)
                    else:
                        cue = True
                if cue:
                    words[0] = self._pick(CUE_WORDS)
                if length >= 2 and rng.random() < 0.4:
                    words[-1] = self._pick(FINAL_PARTICLES)
            segs.append(words)
            total += length
        return segs

    def sequence(self, dialogue_id: str, turn_id: str, speaker: str) -> TaggedSequence:
        rng = self.rng
        segs = self._segments(int(rng.integers(3, 41)))
        self.segments_emitted += len(segs)
        tokens: list[Token] = []
        tags: list[Tag] = []
        for seg in segs:
            for j, w in enumerate(seg):
                inner = 0 < j < len(seg) - 1
                if self.profile == "phone" and inner and w in CONTENT_WORDS:
                    r = rng.random()
                    if r < 0.08:
                        w = self._pick(HESITATIONS)
                    elif r < 0.16 and tokens and tokens[-1].text in CONTENT_WORDS:
                        w = tokens[-1].text
                msg = False
                if self.profile == "message":
                    if w in SLANG and rng.random() < 0.3:
                        w = SLANG[w]
                    if not tokens:
                        msg = True
                    elif j == 0:
                        msg = rng.random() < 0.5
                    else:
                        msg = rng.random() < 0.05
                tokens.append(Token(w, msg))
                tags.append(B if j == 0 else I)
        return TaggedSequence(dialogue_id, turn_id, speaker, tokens, tags)

    def generate(self, n_sequences: int) -> Corpus:
        if n_sequences < 1:
            raise ConfigError("need at least one sequence")
        seqs = []
        dialogue, turn = 0, 0
        turns_left = int(self.rng.integers(4, 13))
        for _ in range(n_sequences):
            speaker = "S" if turn % 2 == 0 else "A"
            seqs.append(self.sequence(f"d{dialogue:04d}", f"t{turn:03d}", speaker))
            turn += 1
            turns_left -= 1
            if turns_left == 0:
                dialogue, turn = dialogue + 1, 0
                turns_left = int(self.rng.integers(4, 13))
        kind = {"message": SourceKind.MESSAGE, "phone": SourceKind.PHONE}.get(
            self.profile, SourceKind.SYNTHETIC)
        return Corpus(seqs, kind)


def generate_synthetic(n_sequences: int, seed: int = 0, profile: str = "message") -> Corpus:
    return SyntheticGenerator(seed, profile).generate(n_sequences)


def count_chunks(corpus: Corpus) -> int:
    return sum(len(segments_from_tags(s.tags)) for s in corpus)
