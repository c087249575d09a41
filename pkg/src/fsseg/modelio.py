"""Text format shared by the MaxEnt and CRF models.

::

    fsseg-model v1
    model_type=crf
    markov_order=2
    tagset=B-fs,I-fs
    templates=u-2@-2;u-1@-1;...
    l2_sigma=1.0
    cutoff=1
    use_msg_boundary=0
    num_features=<K>
    <feature>\t<tag>\t<weight>            (K x |tagset| lines, vocabulary order)
    __T__<prev2>|<prev>|<cur>\t<cur>\t<weight>   (transitions, CRF only)

Weights are written with ``repr`` so a reload is bit-exact.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import TAGSET, Tag

MAGIC = "fsseg-model v1"
TRANSITION_PREFIX = "__T__"


class ModelFormatError(ValueError):
    pass


@dataclass
class WeightedModelFile:
    header: dict[str, str]
    features: list[str]
    weights: np.ndarray                      # (K, |tagset|)
    transitions: dict[tuple[Tag, ...], float] = field(default_factory=dict)

    @property
    def tagset(self) -> tuple[Tag, ...]:
        return tuple(Tag(t) for t in self.header["tagset"].split(","))


def write_weighted(path: str | os.PathLike, wm: WeightedModelFile) -> None:
    tagset = wm.tagset
    lines = [MAGIC]
    header = dict(wm.header)
    header["num_features"] = str(len(wm.features))
    lines += [f"{k}={v}" for k, v in header.items()]
    for k, feat in enumerate(wm.features):
        for j, tag in enumerate(tagset):
            lines.append(f"{feat}\t{tag.value}\t{float(wm.weights[k, j])!r}")
    for hist, w in wm.transitions.items():
        name = TRANSITION_PREFIX + "|".join(t.value for t in hist)
        lines.append(f"{name}\t{hist[-1].value}\t{float(w)!r}")
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_weighted(path: str | os.PathLike) -> WeightedModelFile:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != MAGIC:
        raise ModelFormatError(f"{path}: not a {MAGIC!r} file")
    header: dict[str, str] = {}
    k = 1
    while k < len(lines) and "\t" not in lines[k] and lines[k].strip():
        key, sep, value = lines[k].partition("=")
        if not sep:
            raise ModelFormatError(f"{path}:{k + 1}: malformed header line")
        header[key.strip()] = value.strip()
        k += 1
    for key in ("model_type", "tagset", "templates", "num_features"):
        if key not in header:
            raise ModelFormatError(f"{path}: header lacks {key}")
    tagset = tuple(Tag(t) for t in header["tagset"].split(","))
    if tagset != TAGSET:
        raise ModelFormatError(f"{path}: unsupported tagset {header['tagset']}")
    tag_col = {t.value: j for j, t in enumerate(tagset)}
    K = int(header["num_features"])
    features: list[str] = []
    index: dict[str, int] = {}
    weights = np.zeros((K, len(tagset)))
    transitions: dict[tuple[Tag, ...], float] = {}
    for line_no in range(k, len(lines)):
        line = lines[line_no]
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ModelFormatError(f"{path}:{line_no + 1}: expected 3 tab-separated fields")
        feat, tag, w = cols
        try:
            if feat.startswith(TRANSITION_PREFIX):
                hist = tuple(Tag(t) for t in feat[len(TRANSITION_PREFIX):].split("|"))
                transitions[hist] = float(w)
                continue
            col, value = tag_col[tag], float(w)
        except (KeyError, ValueError):
            raise ModelFormatError(f"{path}:{line_no + 1}: bad tag or weight in {line!r}") from None
        if feat not in index:
            if len(features) >= K:
                raise ModelFormatError(f"{path}:{line_no + 1}: more than {K} features")
            index[feat] = len(features)
            features.append(feat)
        weights[index[feat], col] = value
    if len(features) != K:
        raise ModelFormatError(f"{path}: expected {K} features, found {len(features)}")
    return WeightedModelFile(header, features, weights, transitions)


def model_kind(path: str | os.PathLike) -> str:
    """``maxent``/``crf`` for weighted files, ``bilstm-crf`` for neural files."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first == MAGIC:
            for line in fh:
                if line.startswith("model_type="):
                    return line.partition("=")[2].strip()
            raise ModelFormatError(f"{path}: header lacks model_type")
    from .neural import NEURAL_MAGIC

    if first == NEURAL_MAGIC:
        return "bilstm-crf"
    raise ModelFormatError(f"{path}: unrecognized model file")
