"""Hot inner loops: lattice recursions and LSTM time steps.

Every kernel has a numba ``@njit`` implementation and a pure-numpy one.
The numba path is used when numba imports and ``FSSEG_DISABLE_JIT`` is
unset (or ``0``); :func:`use_backend` switches at runtime.

Lattice kernels work on a first-order chain over ``S`` (composite) states:

* ``unary[t, s]``  log-potential of state ``s`` at position ``t``
  (``-inf`` marks a state that is not allowed there),
* ``pair[s', s]``  log-potential of moving from ``s'`` to ``s``.
"""
from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

NEG_INF = -np.inf

try:
    import numba as nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("FSSEG_DISABLE_JIT", "0").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _lse_np(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _forward_np(unary, pair):
    n, S = unary.shape
    alpha = np.empty((n, S))
    alpha[0] = unary[0]
    for t in range(1, n):
        alpha[t] = unary[t] + _lse_np(alpha[t - 1][:, None] + pair, axis=0)
    return alpha, float(_lse_np(alpha[-1], axis=0))


def _backward_np(unary, pair):
    n, S = unary.shape
    beta = np.empty((n, S))
    beta[-1] = 0.0
    for t in range(n - 2, -1, -1):
        beta[t] = _lse_np(pair + (unary[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def _viterbi_np(unary, pair):
    n, S = unary.shape
    delta = unary[0].copy()
    back = np.zeros((n, S), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + pair
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(S)] + unary[t]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    score = float(delta[path[-1]])
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, score


def _corpus_expectations_np(unary, offsets, pair):
    N, S = unary.shape
    gamma = np.zeros((N, S))
    counts = np.zeros((S, S))
    logz = np.empty(len(offsets) - 1)
    for k in range(len(offsets) - 1):
        a, b = offsets[k], offsets[k + 1]
        u = unary[a:b]
        alpha, lz = _forward_np(u, pair)
        beta = _backward_np(u, pair)
        logz[k] = lz
        gamma[a:b] = np.exp(alpha + beta - lz)
        if b - a > 1:
            xi = alpha[:-1, :, None] + pair[None, :, :] + (u[1:] + beta[1:])[:, None, :] - lz
            counts += np.exp(xi).sum(axis=0)
    return logz, gamma, counts


def _lstm_forward_py(x, Wx, Wh, bias, reverse):
    n = x.shape[0]
    h = bias.shape[0] // 4
    H = np.zeros((n, h))
    C = np.zeros((n, h))
    G = np.zeros((n, 4 * h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for step in range(n):
        t = n - 1 - step if reverse else step
        z = Wx @ x[t] + Wh @ h_prev + bias
        g = np.empty(4 * h)
        for j in range(3 * h):
            g[j] = 1.0 / (1.0 + math.exp(-z[j]))
        for j in range(3 * h, 4 * h):
            g[j] = math.tanh(z[j])
        c = g[h:2 * h] * c_prev + g[:h] * g[3 * h:]
        hh = g[2 * h:3 * h] * np.tanh(c)
        G[t] = g
        C[t] = c
        H[t] = hh
        h_prev = hh
        c_prev = c
    return H, C, G


def _lstm_backward_py(dH, x, Wx, Wh, H, C, G, reverse):
    """Backprop through time; gate layout is [input, forget, output, cell]."""
    n = x.shape[0]
    h = H.shape[1]
    dWx = np.zeros(Wx.shape)
    dWh = np.zeros(Wh.shape)
    WxT = np.ascontiguousarray(Wx.T)
    WhT = np.ascontiguousarray(Wh.T)
    db = np.zeros(4 * h)
    dx = np.zeros(x.shape)
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for step in range(n):
        # walk opposite to the forward direction
        t = step if reverse else n - 1 - step
        tp = t + 1 if reverse else t - 1
        has_prev = tp >= 0 and tp < n
        g = G[t]
        i_g = g[:h]
        f_g = g[h:2 * h]
        o_g = g[2 * h:3 * h]
        c_g = g[3 * h:]
        tc = np.tanh(C[t])
        dh = dH[t] + dh_next
        do = dh * tc
        dc = dh * o_g * (1.0 - tc * tc) + dc_next
        if has_prev:
            c_prev = C[tp]
            h_prev = H[tp]
        else:
            c_prev = np.zeros(h)
            h_prev = np.zeros(h)
        dz = np.empty(4 * h)
        dz[:h] = dc * c_g * i_g * (1.0 - i_g)
        dz[h:2 * h] = dc * c_prev * f_g * (1.0 - f_g)
        dz[2 * h:3 * h] = do * o_g * (1.0 - o_g)
        dz[3 * h:] = dc * i_g * (1.0 - c_g * c_g)
        dWx += np.outer(dz, x[t])
        dWh += np.outer(dz, h_prev)
        db += dz
        dx[t] = WxT @ dz
        dh_next = WhT @ dz
        dc_next = dc * f_g
    return dx, dWx, dWh, db


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = nb.njit(cache=True, nogil=True)

    @_jit
    def _lse_vec(v):
        m = NEG_INF
        for x in v:
            if x > m:
                m = x
        if m == NEG_INF:
            return NEG_INF
        s = 0.0
        for x in v:
            s += math.exp(x - m)
        return m + math.log(s)

    @_jit
    def _forward_nb(unary, pair):
        n, S = unary.shape
        alpha = np.empty((n, S))
        tmp = np.empty(S)
        for s in range(S):
            alpha[0, s] = unary[0, s]
        for t in range(1, n):
            for s in range(S):
                if unary[t, s] == NEG_INF:
                    alpha[t, s] = NEG_INF
                    continue
                for r in range(S):
                    tmp[r] = alpha[t - 1, r] + pair[r, s]
                alpha[t, s] = unary[t, s] + _lse_vec(tmp)
        return alpha, _lse_vec(alpha[n - 1])

    @_jit
    def _backward_nb(unary, pair):
        n, S = unary.shape
        beta = np.empty((n, S))
        tmp = np.empty(S)
        for s in range(S):
            beta[n - 1, s] = 0.0
        for t in range(n - 2, -1, -1):
            for r in range(S):
                for s in range(S):
                    tmp[s] = pair[r, s] + unary[t + 1, s] + beta[t + 1, s]
                beta[t, r] = _lse_vec(tmp)
        return beta

    @_jit
    def _viterbi_nb(unary, pair):
        n, S = unary.shape
        delta = np.empty(S)
        new = np.empty(S)
        back = np.zeros((n, S), dtype=np.int64)
        for s in range(S):
            delta[s] = unary[0, s]
        for t in range(1, n):
            for s in range(S):
                best = NEG_INF
                arg = 0
                for r in range(S):
                    v = delta[r] + pair[r, s]
                    if v > best:
                        best = v
                        arg = r
                back[t, s] = arg
                new[s] = best + unary[t, s]
            for s in range(S):
                delta[s] = new[s]
        path = np.empty(n, dtype=np.int64)
        best = NEG_INF
        arg = 0
        for s in range(S):
            if delta[s] > best:
                best = delta[s]
                arg = s
        path[n - 1] = arg
        for t in range(n - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return path, best

    @_jit
    def _corpus_expectations_nb(unary, offsets, pair):
        N, S = unary.shape
        gamma = np.zeros((N, S))
        counts = np.zeros((S, S))
        nseq = offsets.shape[0] - 1
        logz = np.empty(nseq)
        for k in range(nseq):
            a = offsets[k]
            b = offsets[k + 1]
            u = unary[a:b]
            alpha, lz = _forward_nb(u, pair)
            beta = _backward_nb(u, pair)
            logz[k] = lz
            for t in range(b - a):
                for s in range(S):
                    gamma[a + t, s] = math.exp(alpha[t, s] + beta[t, s] - lz)
            for t in range(1, b - a):
                for r in range(S):
                    if alpha[t - 1, r] == NEG_INF:
                        continue
                    for s in range(S):
                        v = alpha[t - 1, r] + pair[r, s] + u[t, s] + beta[t, s] - lz
                        if v > NEG_INF:
                            counts[r, s] += math.exp(v)
        return logz, gamma, counts

    _lstm_forward_nb = _jit(_lstm_forward_py)
    _lstm_backward_nb = _jit(_lstm_backward_py)


NUMPY = SimpleNamespace(
    name="numpy",
    forward=_forward_np,
    backward=_backward_np,
    viterbi=_viterbi_np,
    corpus_expectations=_corpus_expectations_np,
    lstm_forward=_lstm_forward_py,
    lstm_backward=_lstm_backward_py,
)

NUMBA = SimpleNamespace(
    name="numba",
    forward=_forward_nb,
    backward=_backward_nb,
    viterbi=_viterbi_nb,
    corpus_expectations=_corpus_expectations_nb,
    lstm_forward=_lstm_forward_nb,
    lstm_backward=_lstm_backward_nb,
) if HAVE_NUMBA else None

_active = NUMPY if (not HAVE_NUMBA or _env_disabled()) else NUMBA


def backend() -> str:
    return _active.name


def use_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _active
    prev = _active.name
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not importable")
        _active = NUMBA
    elif name == "numpy":
        _active = NUMPY
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def forward(unary, pair):
    """Forward log-table ``alpha`` and log partition."""
    alpha, logz = _active.forward(_f64(unary), _f64(pair))
    return alpha, float(logz)


def backward(unary, pair):
    return _active.backward(_f64(unary), _f64(pair))


def viterbi(unary, pair):
    """Best state path and its score; ties go to the lowest state index."""
    path, score = _active.viterbi(_f64(unary), _f64(pair))
    return path, float(score)


def corpus_expectations(unary, offsets, pair):
    """Per-sequence log partitions, state marginals and summed pair marginals."""
    return _active.corpus_expectations(_f64(unary), np.ascontiguousarray(offsets, dtype=np.int64),
                                       _f64(pair))


def lstm_forward(x, Wx, Wh, bias, reverse=False):
    """Run one LSTM direction; returns hidden states, cells and gate activations."""
    return _active.lstm_forward(_f64(x), _f64(Wx), _f64(Wh), _f64(bias), bool(reverse))


def lstm_backward(dH, x, Wx, Wh, H, C, G, reverse=False):
    return _active.lstm_backward(_f64(dH), _f64(x), _f64(Wx), _f64(Wh), _f64(H), _f64(C),
                                 _f64(G), bool(reverse))
