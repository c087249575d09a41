import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from fsseg import kernels
from fsseg.corpus import B, I, Corpus, SourceKind
from helpers import make_seq


@pytest.fixture
def toy_corpus():
    """Marker-token corpus: 'SEP' always opens a segment."""
    rng = np.random.default_rng(7)
    words = ["a", "b", "c", "d", "e"]
    seqs = []
    for k in range(30):
        toks, tags = [], []
        for _ in range(int(rng.integers(1, 4))):
            seg_len = int(rng.integers(1, 4))
            toks.append("SEP")
            tags.append(B)
            for _ in range(seg_len):
                toks.append(words[int(rng.integers(len(words)))])
                tags.append(I)
        seqs.append(make_seq(toks, tags, turn=f"t{k}"))
    return Corpus(seqs, SourceKind.SYNTHETIC)


@pytest.fixture(params=["numpy", "numba"])
def each_backend(request):
    if request.param == "numba" and kernels.NUMBA is None:
        pytest.skip("numba unavailable")
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
