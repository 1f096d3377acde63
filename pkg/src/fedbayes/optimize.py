"""Limited-memory BFGS with a strong Wolfe line search and a hard iteration cap.

The cap counts outer quasi-Newton iterations (accepted steps), not function
evaluations. Each call starts with an empty curvature history, so a warm
start only carries the point, never stale curvature pairs.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import OptimizerError

# Iteration ceiling that stands in for "run to convergence".
UNLIMITED_ITERATIONS = 10000

__all__ = [
    "UNLIMITED_ITERATIONS",
    "OptimizerConfig",
    "OptimizeReport",
    "Termination",
    "minimize",
]


class Termination(str, enum.Enum):
    ITERATION_CAP = "iteration_cap"
    GRADIENT_TOLERANCE = "gradient_tolerance"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`minimize`.

    ``max_iterations`` may be 0, in which case the start point is returned
    untouched.
    """

    max_iterations: int = 5
    memory: int = 10
    grad_tolerance: float = 1e-5
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 20

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.memory < 1:
            raise ValueError("memory must be positive")
        if self.grad_tolerance < 0:
            raise ValueError("grad_tolerance must be nonnegative")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.max_line_search_steps < 1:
            raise ValueError("max_line_search_steps must be positive")


@dataclass
class OptimizeReport:
    final_point: np.ndarray
    final_value: float
    final_gradient: np.ndarray
    iterations_used: int
    # Objective at the start point followed by one entry per accepted step.
    objective_trace: list = field(default_factory=list)
    termination: Termination = Termination.ITERATION_CAP
    n_evaluations: int = 0


class _Counted:
    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        f, g = self.fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not math.isfinite(f) or not np.isfinite(g).all():
            raise OptimizerError(f"non-finite objective or gradient (f={f})")
        return f, g


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * s.dot(q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= s.dot(y) / y.dot(y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * y.dot(q)
        q += (a - b) * s
    return -q


def _cubic_min(a, fa, da, b, fb, db):
    # Minimiser of the cubic interpolating (a, fa, da) and (b, fb, db), or None.
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _line_search(fun, x, f0, g0, d, step, cfg):
    """Strong Wolfe search along ``d``; returns (step, f, g) or None."""
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    dphi0 = g0.dot(d)
    budget = cfg.max_line_search_steps

    def phi(a):
        f, g = fun(x + a * d)
        return f, g, g.dot(d)

    def zoom(lo, flo, dlo, hi, fhi, dhi, budget):
        while budget > 0:
            width = hi - lo
            if abs(width) <= 1e-16 * max(1.0, abs(lo)):
                return None
            a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            left, right = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if a is None or not left <= a <= right:
                a = lo + 0.5 * width
            fa, ga, da = phi(a)
            budget -= 1
            if fa > f0 + c1 * a * dphi0 or fa >= flo:
                hi, fhi, dhi = a, fa, da
            else:
                if abs(da) <= -c2 * dphi0:
                    return a, fa, ga
                if da * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = a, fa, da
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = step
    for i in range(budget):
        fa, ga, da = phi(a)
        left = budget - i - 1
        if fa > f0 + c1 * a * dphi0 or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, fa, da, left)
        if abs(da) <= -c2 * dphi0:
            return a, fa, ga
        if da >= 0:
            return zoom(a, fa, da, a_prev, f_prev, d_prev, left)
        a_prev, f_prev, d_prev = a, fa, da
        a = 2.0 * a
    return None


def minimize(objective, start, config: OptimizerConfig | None = None) -> OptimizeReport:
    """Minimise ``objective`` from ``start`` with at most ``max_iterations`` steps.

    Parameters
    ----------
    objective : callable
        ``objective(x) -> (value, gradient)``.
    start : array-like of shape (d,)
    config : OptimizerConfig, optional

    Returns
    -------
    OptimizeReport
        A line-search failure is not an error: the report carries the last
        accepted point with ``termination == LINE_SEARCH_FAILURE``.

    Raises
    ------
    OptimizerError
        If the objective is non-finite at any evaluated point.
    """
    cfg = config or OptimizerConfig()
    fun = _Counted(objective)
    x = np.array(start, dtype=float, copy=True)
    f, g = fun(x)
    if g.shape != x.shape:
        raise OptimizerError(f"gradient shape {g.shape} does not match start {x.shape}")
    pairs = deque(maxlen=cfg.memory)
    trace = [f]
    termination = Termination.ITERATION_CAP
    iterations = 0

    while iterations < cfg.max_iterations:
        if np.max(np.abs(g)) <= cfg.grad_tolerance:
            termination = Termination.GRADIENT_TOLERANCE
            break
        if pairs:
            d = _two_loop(g, pairs)
            step = 1.0
            if not g.dot(d) < 0:
                pairs.clear()
        if not pairs:
            d = -g
            step = 1.0 / np.linalg.norm(g)
        assert g.dot(d) < 0, "search direction is not a descent direction"

        found = _line_search(fun, x, f, g, d, step, cfg)
        if found is None:
            termination = Termination.LINE_SEARCH_FAILURE
            break
        a, f_new, g_new = found
        s = a * d
        y = g_new - g
        sy = s.dot(y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x = x + s
        f, g = f_new, g_new
        trace.append(f)
        iterations += 1
    else:
        if np.max(np.abs(g), initial=0.0) <= cfg.grad_tolerance:
            termination = Termination.GRADIENT_TOLERANCE

    return OptimizeReport(
        final_point=x,
        final_value=f,
        final_gradient=g,
        iterations_used=iterations,
        objective_trace=trace,
        termination=termination,
        n_evaluations=fun.n,
    )
