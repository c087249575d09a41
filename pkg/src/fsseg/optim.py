"""Limited-memory BFGS with a strong-Wolfe line search.

Objectives are callables ``f(x) -> (value, gradient)`` and are minimized.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

MAX_LINE_SEARCH_EVALS = 40


class OptimizationError(RuntimeError):
    def __init__(self, message: str, trace: "OptimizationTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class NumericalError(OptimizationError):
    pass


class LineSearchError(OptimizationError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    history_size: int = 10
    max_iterations: int = 300
    gradient_tolerance: float = 1e-5
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.gradient_tolerance < 0 or self.max_iterations < 0:
            raise ValueError("tolerance and iteration cap must be non-negative")


@dataclass
class OptimizationTrace:
    iterations: int = 0
    final_value: float = math.nan
    final_gradient_norm: float = math.nan
    converged: bool = False
    per_iteration: list[tuple[float, float, float]] = field(default_factory=list)
    evaluations: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "value", "gradient_norm", "step_length"])
            for k, (v, g, s) in enumerate(self.per_iteration):
                w.writerow([k, repr(v), repr(g), repr(s)])


def _max_norm(g: np.ndarray) -> float:
    return float(np.max(np.abs(g))) if g.size else 0.0


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da), (b, fb, db), or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if math.isfinite(t) else None


class _LineFunction:
    def __init__(self, f: Objective, x: np.ndarray, p: np.ndarray, trace: OptimizationTrace):
        self.f, self.x, self.p, self.trace = f, x, p, trace
        self.n_evals = 0

    def __call__(self, alpha: float):
        if self.n_evals >= MAX_LINE_SEARCH_EVALS:
            raise LineSearchError(
                f"no strong-Wolfe step after {MAX_LINE_SEARCH_EVALS} trial steps", self.trace)
        self.n_evals += 1
        self.trace.evaluations += 1
        x = self.x + alpha * self.p
        value, grad = self.f(x)
        value = float(value)
        grad = np.asarray(grad, dtype=np.float64)
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NumericalError(f"objective not finite at step {alpha!r}", self.trace)
        return x, value, grad, float(grad @ self.p)


def strong_wolfe(phi: _LineFunction, f0: float, d0: float, alpha0: float,
                 c1: float, c2: float):
    """Bracketing phase followed by zoom; returns (alpha, x, f, g)."""
    prev_a, prev_f, prev_d = 0.0, f0, d0
    a = alpha0
    first = True
    while True:
        x, fa, g, da = phi(a)
        if fa > f0 + c1 * a * d0 or (not first and fa >= prev_f):
            return _zoom(phi, f0, d0, c1, c2, prev_a, prev_f, prev_d, a, fa, da)
        if abs(da) <= -c2 * d0:
            return a, x, fa, g
        if da >= 0:
            return _zoom(phi, f0, d0, c1, c2, a, fa, da, prev_a, prev_f, prev_d)
        prev_a, prev_f, prev_d = a, fa, da
        a = a * 2.0
        first = False


def _zoom(phi, f0, d0, c1, c2, lo, f_lo, d_lo, hi, f_hi, d_hi):
    while True:
        width = hi - lo
        t = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
        # keep the trial point inside the central part of the bracket
        left, right = sorted((lo, hi))
        margin = 0.1 * abs(width)
        if t is None or not (left + margin <= t <= right - margin):
            t = lo + 0.5 * width
        x, ft, g, dt = phi(t)
        if ft > f0 + c1 * t * d0 or ft >= f_lo:
            hi, f_hi, d_hi = t, ft, dt
            continue
        if abs(dt) <= -c2 * d0:
            return t, x, ft, g
        if dt * (hi - lo) >= 0:
            hi, f_hi, d_hi = lo, f_lo, d_lo
        lo, f_lo, d_lo = t, ft, dt


def minimize(f: Objective, x0: np.ndarray, cfg: OptimizerConfig | None = None,
             callback: Callable[[int, np.ndarray, float], None] | None = None
             ) -> tuple[np.ndarray, OptimizationTrace]:
    cfg = cfg or OptimizerConfig()
    trace = OptimizationTrace()
    x = np.array(x0, dtype=np.float64, copy=True)
    value, g = f(x)
    value = float(value)
    g = np.asarray(g, dtype=np.float64)
    trace.evaluations = 1
    if not math.isfinite(value) or not np.all(np.isfinite(g)):
        raise NumericalError("objective is not finite at the starting point", trace)

    s_hist: deque[np.ndarray] = deque(maxlen=cfg.history_size)
    y_hist: deque[np.ndarray] = deque(maxlen=cfg.history_size)
    rho_hist: deque[float] = deque(maxlen=cfg.history_size)
    gnorm = _max_norm(g)
    trace.per_iteration.append((value, gnorm, 0.0))

    while gnorm > cfg.gradient_tolerance and trace.iterations < cfg.max_iterations:
        p = _two_loop(g, s_hist, y_hist, rho_hist)
        d0 = float(g @ p)
        if not d0 < 0:
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            p = -g
            d0 = float(g @ p)
        alpha0 = 1.0 if s_hist else min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1e-300))
        try:
            alpha, x_new, v_new, g_new = strong_wolfe(
                _LineFunction(f, x, p, trace), value, d0, alpha0, cfg.wolfe_c1, cfg.wolfe_c2)
        except LineSearchError:
            if not s_hist:
                raise
            log.debug("line search failed; restarting from steepest descent")
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            continue

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
        x, value, g = x_new, v_new, g_new
        gnorm = _max_norm(g)
        trace.iterations += 1
        trace.per_iteration.append((value, gnorm, alpha))
        if callback is not None:
            callback(trace.iterations, x, value)
        log.debug("iter %d  f=%.10g  |g|max=%.3e  step=%.3g", trace.iterations, value, gnorm, alpha)

    trace.final_value = value
    trace.final_gradient_norm = gnorm
    trace.converged = gnorm <= cfg.gradient_tolerance
    return x, trace


def _two_loop(g, s_hist, y_hist, rho_hist) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def check_gradient(f: Objective, x: np.ndarray, epsilon: float = 1e-5,
                   coords: np.ndarray | None = None) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    Numeric derivatives are central differences.  ``coords`` restricts the
    check to a subset of coordinates.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    _, g = f(x)
    g = np.asarray(g, dtype=np.float64)
    if coords is None:
        coords = np.arange(x.size)
    worst = 0.0
    for i in coords:
        old = x[i]
        x[i] = old + epsilon
        fp = float(f(x)[0])
        x[i] = old - epsilon
        fm = float(f(x)[0])
        x[i] = old
        num = (fp - fm) / (2 * epsilon)
        err = abs(g[i] - num) / max(1.0, abs(g[i]))
        worst = max(worst, err)
    return worst
