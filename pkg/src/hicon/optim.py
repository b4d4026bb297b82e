"""Preconditioned limited-memory BFGS with Armijo backtracking."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def lbfgs(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    gtol: float = 1e-8,
    maxiter: int = 5000,
    memory: int = 10,
    c1: float = 1e-4,
    max_backtracks: int = 40,
) -> OptimResult:
    """Minimize ``f`` from ``x0``; stops when ``||grad|| <= gtol``.

    ``precond`` applies an approximate inverse Hessian and seeds the two-loop
    recursion.  The recorded trace of function values is non-increasing since
    only Armijo-accepted steps are taken.
    """
    apply_p = precond if precond is not None else (lambda v: v)
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    trace = [float(f)]
    pairs: deque = deque(maxlen=memory)
    gnorm = float(np.linalg.norm(g))
    it = 0
    message = "max iterations reached"
    converged = False
    while True:
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            message = "non-finite energy or gradient"
            break
        if gnorm <= gtol:
            converged, message = True, "gradient tolerance reached"
            break
        if it >= maxiter:
            break
        d = -_two_loop(g, pairs, apply_p)
        slope = float(g @ d)
        if slope >= 0:
            pairs.clear()
            d = -apply_p(g)
            slope = float(g @ d)
            if slope >= 0:
                message = "preconditioner is not positive definite"
                break
        alpha = 1.0
        for _ in range(max_backtracks):
            x_new = x + alpha * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope:
                break
            alpha *= 0.5
        else:
            message = "line search failed"
            break
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-300:
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        trace.append(float(f))
        it += 1
    return OptimResult(x, float(f), gnorm, it, converged, message, trace)


def _two_loop(g, pairs, apply_p):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    r = apply_p(q)
    if pairs:
        s, y, rho = pairs[-1]
        Py = apply_p(y)
        r *= float(s @ y) / float(y @ Py)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return r
