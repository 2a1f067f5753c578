"""Nonlinear conjugate-gradient ascent (Polak-Ribiere+ with strong Wolfe).

The line search works on ``phi(a) = -J(theta + a d)``. When it cannot find
an ascent step longer than ``step_tol`` even along the gradient, the iterate
is reported as converged provided the gradient norm has shrunk to at most
``stall_ratio`` times its starting value: this is the usual end state for
objectives with kinks, where the gradient norm never drops below
``grad_tol``. A stall without that reduction, whether the search finds no
step or only accepts steps shorter than ``step_tol``, is a line-search
failure. Trial points where
the objective or gradient is not finite (IS/PO weight overflow, or a step
out of the model's domain) are handled by halving the step, up to
``max_halvings`` times, before the search gives up with ``DIVERGED``.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .models import DomainError
from .objective import EstimationProblem, value_and_gradient

__all__ = [
    "Status",
    "OptimizerConfig",
    "OptimizationTrace",
    "maximize",
    "finite_diff_gradient",
]


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILED = "line_search_failed"
    DIVERGED = "diverged"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 500
    grad_tol: float = 1e-6
    step_tol: float = 1e-10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.1
    restart_period: int | None = None  # None -> dim(theta)
    max_halvings: int = 30
    max_ls_evals: int = 40
    stall_ratio: float = 0.1

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class OptimizationTrace:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    status: Status | None = None
    n_evals: int = 0

    @property
    def iterations(self) -> int:
        return max(len(self.objective) - 1, 0)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "objective", "grad_norm", "step"])
        for i, row in enumerate(zip(self.objective, self.grad_norm, self.step)):
            writer.writerow([i, *(repr(float(v)) for v in row)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


class _Objective:
    """Wraps ``theta -> (J, grad J)`` and counts evaluations."""

    def __init__(self, fun):
        self.fun = fun
        self.n_evals = 0

    def __call__(self, theta):
        self.n_evals += 1
        try:
            value, grad = self.fun(theta)
        except DomainError:
            return np.nan, None
        grad = np.asarray(grad, dtype=float)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return np.nan, None
        return float(value), grad


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.copysign(np.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _line_search(obj, theta, d, f0, g0, a_init, cfg):
    """Strong-Wolfe search on ``phi(a) = -J(theta + a d)``.

    Returns ``(a, J, grad, reason)``; ``a`` is None on failure and ``reason``
    is then ``"diverged"``, ``"stalled"`` (no ascent for any step longer than
    ``step_tol`` in the infinity norm) or ``"failed"``.
    """
    phi0 = -f0
    dphi0 = -float(g0 @ d)
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    halvings = 0
    evals = 0
    a_tol = cfg.step_tol / max(float(np.max(np.abs(d))), 1e-300)

    def evaluate(a):
        val, grad = obj(theta + a * d)
        if grad is None:
            return None
        return -val, -float(grad @ d), val, grad

    def zoom(lo, hi):
        nonlocal evals
        best = lo
        while evals < cfg.max_ls_evals:
            a_lo, phi_lo, dphi_lo = lo[0], lo[1], lo[2]
            a_hi = hi[0]
            width = a_hi - a_lo
            a = None
            if hi[1] is not None:
                a = _cubic_min(a_lo, phi_lo, dphi_lo, a_hi, hi[1], hi[2])
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if a is None or not np.isfinite(a) or not lo_b <= a <= hi_b:
                a = a_lo + 0.5 * width
            evals += 1
            res = evaluate(a)
            if res is None:
                hi = (a, None, None, None, None)
                continue
            phi_a, dphi_a, val, grad = res
            if phi_a > phi0 + c1 * a * dphi0 or phi_a >= phi_lo:
                hi = (a, phi_a, dphi_a, val, grad)
            else:
                if abs(dphi_a) <= -c2 * dphi0:
                    return a, val, grad, None
                if dphi_a * width >= 0:
                    hi = lo
                lo = (a, phi_a, dphi_a, val, grad)
                best = lo
            if abs(hi[0] - lo[0]) <= a_tol:
                break
        if best[0] > 0 and best[1] < phi0:
            return best[0], best[3], best[4], None
        return None, None, None, "stalled" if abs(hi[0] - lo[0]) <= a_tol else "failed"

    prev = (0.0, phi0, dphi0, f0, g0)
    a = a_init
    while evals < cfg.max_ls_evals:
        evals += 1
        res = evaluate(a)
        if res is None:
            halvings += 1
            if halvings > cfg.max_halvings:
                return None, None, None, "diverged"
            a = prev[0] + 0.5 * (a - prev[0])
            continue
        phi_a, dphi_a, val, grad = res
        cur = (a, phi_a, dphi_a, val, grad)
        if phi_a > phi0 + c1 * a * dphi0 or (prev[0] > 0 and phi_a >= prev[1]):
            return zoom(prev, cur)
        if abs(dphi_a) <= -c2 * dphi0:
            return a, val, grad, None
        if dphi_a >= 0:
            return zoom(cur, prev)
        prev = cur
        a = 2.0 * a
    if prev[0] > 0:
        return prev[0], prev[3], prev[4], None
    return None, None, None, "failed"


def _reduced(trace, cfg) -> bool:
    """Whether a stalled run has cut its gradient enough to count as converged."""
    return trace.grad_norm[-1] <= cfg.stall_ratio * trace.grad_norm[0]


def maximize(problem, theta0, config: OptimizerConfig | None = None):
    """Maximize the objective with PR+ conjugate gradients.

    Parameters
    ----------
    problem : EstimationProblem or callable
        Either an estimation problem, or any callable returning
        ``(value, gradient)`` of the function to maximize.
    theta0 : array_like
        Starting point; the objective must be finite there.
    config : OptimizerConfig, optional

    Returns
    -------
    theta_hat : ndarray
        Best point found (the last accepted iterate).
    trace : OptimizationTrace
    """
    cfg = config or OptimizerConfig()
    if isinstance(problem, EstimationProblem):
        fun: Callable = lambda th: value_and_gradient(problem, th)  # noqa: E731
    else:
        fun = problem
    obj = _Objective(fun)
    theta = np.array(theta0, dtype=float)
    f, g = obj(theta)
    if g is None:
        raise ValueError("objective is not finite at the starting point")

    restart = cfg.restart_period or theta.size
    trace = OptimizationTrace(objective=[f], grad_norm=[float(np.max(np.abs(g)))], step=[0.0])
    d = g.copy()
    since_restart = 0
    a_prev, slope_prev = None, None
    status = Status.MAX_ITERS

    for _ in range(cfg.max_iters):
        if trace.grad_norm[-1] < cfg.grad_tol:
            status = Status.CONVERGED
            break
        slope = float(g @ d)
        if slope <= 0:
            d, slope, since_restart = g.copy(), float(g @ g), 0
        if a_prev is None:
            a_init = min(1.0, 1.0 / np.max(np.abs(d)))
        else:
            a_init = min(a_prev * slope_prev / slope, 1e10 / max(np.max(np.abs(d)), 1e-300))
        a, f_new, g_new, reason = _line_search(obj, theta, d, f, g, a_init, cfg)
        if a is None and since_restart > 0:
            # retry once along steepest ascent before giving up
            d, since_restart = g.copy(), 0
            slope = float(g @ g)
            a_init = min(1.0, 1.0 / np.max(np.abs(d)))
            a, f_new, g_new, reason = _line_search(obj, theta, d, f, g, a_init, cfg)
        if a is None:
            if reason == "diverged":
                status = Status.DIVERGED
            elif reason == "stalled" and _reduced(trace, cfg):
                status = Status.CONVERGED
            else:
                status = Status.LINE_SEARCH_FAILED
            break

        step = a * d
        theta = theta + step
        a_prev, slope_prev = a, slope
        step_norm = float(np.max(np.abs(step)))
        trace.objective.append(f_new)
        trace.grad_norm.append(float(np.max(np.abs(g_new))))
        trace.step.append(step_norm)

        since_restart += 1
        if since_restart >= restart:
            beta, since_restart = 0.0, 0
        else:
            beta = max(0.0, float(g_new @ (g_new - g)) / float(g @ g))
        d = g_new + beta * d
        f, g = f_new, g_new
        if step_norm < cfg.step_tol:
            status = Status.CONVERGED if _reduced(trace, cfg) else Status.LINE_SEARCH_FAILED
            break
    else:
        if trace.grad_norm[-1] < cfg.grad_tol:
            status = Status.CONVERGED

    trace.status = status
    trace.n_evals = obj.n_evals
    return theta, trace


def finite_diff_gradient(f, theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return grad
