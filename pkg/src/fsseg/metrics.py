"""Label-based and chunk-based precision/recall/F1, and Fleiss' kappa."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import TAGSET, Tag, segments_from_tags

DEGENERATE_KAPPA = "perfect-agreement-degenerate"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, predicted: int, gold: int) -> "PRF":
        p = correct / predicted if predicted else 0.0
        r = correct / gold if gold else 0.0
        return cls(p, r, f1_score(p, r))


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class LabelCounts:
    tp: dict[Tag, int] = field(default_factory=lambda: {t: 0 for t in TAGSET})
    predicted: dict[Tag, int] = field(default_factory=lambda: {t: 0 for t in TAGSET})
    gold: dict[Tag, int] = field(default_factory=lambda: {t: 0 for t in TAGSET})


@dataclass
class MetricsReport:
    per_tag: dict[Tag, PRF] = field(default_factory=dict)
    macro: PRF | None = None
    micro: PRF | None = None
    chunk: PRF | None = None
    label_counts: LabelCounts | None = None
    gold_chunks: int = 0
    predicted_chunks: int = 0
    correct_chunks: int = 0

    def rows(self) -> list[tuple[str, PRF]]:
        out = [(t.value, self.per_tag[t]) for t in TAGSET if t in self.per_tag]
        if self.macro is not None:
            out.append(("Average_macro", self.macro))
        if self.micro is not None:
            out.append(("Average_micro", self.micro))
        if self.chunk is not None:
            out.append(("Chunk", self.chunk))
        return out

    def format_table(self) -> str:
        """Aligned table in percent, two decimals."""
        lines = [f"{'Label':<15}{'Precision':>10}{'Recall':>10}{'F1-score':>10}"]
        for name, prf in self.rows():
            lines.append(f"{name:<15}{100 * prf.precision:>10.2f}{100 * prf.recall:>10.2f}"
                         f"{100 * prf.f1:>10.2f}")
        return "\n".join(lines)

    def as_dict(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name, prf in self.rows():
            key = name.lower()
            out[f"{key}.precision"] = prf.precision
            out[f"{key}.recall"] = prf.recall
            out[f"{key}.f1"] = prf.f1
        if self.chunk is not None:
            out["chunk.gold"] = self.gold_chunks
            out["chunk.predicted"] = self.predicted_chunks
            out["chunk.correct"] = self.correct_chunks
        return out

    def format_kv(self) -> str:
        return "\n".join(f"{k}={v!r}" for k, v in self.as_dict().items())

    def format(self) -> str:
        return self.format_table() + "\n\n" + self.format_kv() + "\n"


def _check_shapes(gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]) -> None:
    if len(gold) != len(pred):
        raise EvaluationError(f"{len(gold)} gold sequences vs {len(pred)} predicted")
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise EvaluationError(f"sequence {k}: {len(g)} gold tags vs {len(p)} predicted")


def label_metrics(gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]) -> MetricsReport:
    _check_shapes(gold, pred)
    counts = LabelCounts()
    for g_seq, p_seq in zip(gold, pred):
        for g, p in zip(g_seq, p_seq):
            counts.gold[g] += 1
            counts.predicted[p] += 1
            if g == p:
                counts.tp[g] += 1
    per_tag = {t: PRF.from_counts(counts.tp[t], counts.predicted[t], counts.gold[t])
               for t in TAGSET}
    macro_p = float(np.mean([per_tag[t].precision for t in TAGSET]))
    macro_r = float(np.mean([per_tag[t].recall for t in TAGSET]))
    # macro F1 is the harmonic mean of macro P and macro R (matches the published tables)
    macro = PRF(macro_p, macro_r, f1_score(macro_p, macro_r))
    micro = PRF.from_counts(sum(counts.tp.values()), sum(counts.predicted.values()),
                            sum(counts.gold.values()))
    return MetricsReport(per_tag=per_tag, macro=macro, micro=micro, label_counts=counts)


def chunk_metrics(gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]) -> MetricsReport:
    _check_shapes(gold, pred)
    n_gold = n_pred = n_correct = 0
    for g_seq, p_seq in zip(gold, pred):
        if len(g_seq) == 0:
            continue
        g_spans = set(segments_from_tags(g_seq))
        p_spans = segments_from_tags(p_seq)
        n_gold += len(g_spans)
        n_pred += len(p_spans)
        n_correct += sum(1 for s in p_spans if s in g_spans)
    return MetricsReport(chunk=PRF.from_counts(n_correct, n_pred, n_gold), gold_chunks=n_gold,
                         predicted_chunks=n_pred, correct_chunks=n_correct)


def evaluate(gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]) -> MetricsReport:
    rep = label_metrics(gold, pred)
    ch = chunk_metrics(gold, pred)
    rep.chunk = ch.chunk
    rep.gold_chunks, rep.predicted_chunks, rep.correct_chunks = (
        ch.gold_chunks, ch.predicted_chunks, ch.correct_chunks)
    return rep


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of each P/R/F1 field across reports (e.g. CV folds)."""
    if not reports:
        raise EvaluationError("no reports to average")

    def avg(get):
        vals = [get(r) for r in reports]
        return PRF(*(float(np.mean([getattr(v, a) for v in vals]))
                     for a in ("precision", "recall", "f1")))

    out = MetricsReport()
    out.per_tag = {t: avg(lambda r, t=t: r.per_tag[t]) for t in TAGSET}
    out.macro = avg(lambda r: r.macro)
    out.micro = avg(lambda r: r.micro)
    out.chunk = avg(lambda r: r.chunk)
    out.gold_chunks = sum(r.gold_chunks for r in reports)
    out.predicted_chunks = sum(r.predicted_chunks for r in reports)
    out.correct_chunks = sum(r.correct_chunks for r in reports)
    return out


def fleiss_kappa(ratings) -> float | str:
    """Fleiss' kappa for an items x categories matrix of rater counts.

    Returns :data:`DEGENERATE_KAPPA` when chance agreement is 1 (every
    rating falls in a single category), where kappa is undefined.
    """
    M = np.asarray(ratings, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] == 0 or M.shape[1] == 0:
        raise EvaluationError("ratings must be a non-empty items x categories matrix")
    if np.any(M < 0) or np.any(M != np.round(M)):
        raise EvaluationError("ratings must be non-negative integer counts")
    n_raters = M.sum(axis=1)
    if np.any(n_raters != n_raters[0]):
        raise EvaluationError("every item must be rated by the same number of raters")
    n = n_raters[0]
    if n < 2:
        raise EvaluationError("at least two raters per item are required")
    N = M.shape[0]
    p_j = M.sum(axis=0) / (N * n)
    P_i = (np.sum(M * M, axis=1) - n) / (n * (n - 1))
    P_bar = float(P_i.mean())
    P_e = float(np.sum(p_j * p_j))
    if np.isclose(P_e, 1.0, rtol=0, atol=1e-15):
        return DEGENERATE_KAPPA
    return (P_bar - P_e) / (1.0 - P_e)
