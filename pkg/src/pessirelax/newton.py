"""Damped Newton method for square smooth systems (dense LU, Armijo backtracking)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .expr import ExprDomainError

__all__ = ["NewtonOptions", "NewtonStats", "solve", "TERMINATIONS"]

TERMINATIONS = ("converged", "stagnated", "max_iters", "step_too_small", "eval_failure")


@dataclass(frozen=True)
class NewtonOptions:
    max_iters: int = 500
    residual_tol: float = 1e-7
    stagnation_tol: float = 1e-9
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    min_step: float = 1e-12
    tikhonov_nu0: float = 1e-8
    # cap on ||step|| relative to max(1, ||z||); None disables
    max_step: float | None = None
    # a Newton step needing s < newton_min_step is replaced by a regularized Gauss-Newton step
    newton_min_step: float = 1e-4

    def __post_init__(self):
        for name in ("max_iters", "residual_tol", "stagnation_tol", "armijo_c", "min_step", "tikhonov_nu0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass
class NewtonStats:
    iterations: int
    final_residual_norm: float
    residual_history: list = field(default_factory=list)
    termination: str = "max_iters"
    regularized_steps: int = 0


def _evaluate(fn, z):
    try:
        with np.errstate(all="ignore"):
            r = np.asarray(fn(z), dtype=float)
    except (ExprDomainError, FloatingPointError, ZeroDivisionError, OverflowError):
        return None
    return r if np.all(np.isfinite(r)) else None


def _direction(J, r, nu0):
    """Solve J d = -r; falls back to (J + nu I) d = -r with nu doubling."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            lu = sla.lu_factor(J, check_finite=False)
            if np.all(np.abs(np.diag(lu[0])) > 0):
                d = sla.lu_solve(lu, -r, check_finite=False)
                if np.all(np.isfinite(d)):
                    return d, False
        except (ValueError, np.linalg.LinAlgError):
            pass
        nu = nu0
        eye = np.eye(J.shape[0])
        for _ in range(200):
            try:
                lu = sla.lu_factor(J + nu * eye, check_finite=False)
                if np.all(np.abs(np.diag(lu[0])) > 0):
                    d = sla.lu_solve(lu, -r, check_finite=False)
                    if np.all(np.isfinite(d)):
                        return d, True
            except (ValueError, np.linalg.LinAlgError):
                pass
            nu *= 2.0
    return None, True


def _lm_direction(J, r, nu):
    """argmin ||J d + r||^2 + nu ||d||^2, solved as an augmented least-squares problem."""
    k = J.shape[1]
    A = np.vstack([J, math.sqrt(nu) * np.eye(k)])
    b = np.concatenate([-r, np.zeros(k)])
    try:
        return np.linalg.lstsq(A, b, rcond=None)[0]
    except np.linalg.LinAlgError:
        return np.full(k, np.nan)


def _capped(d, z, factor):
    cap = factor * max(1.0, float(np.linalg.norm(z)))
    dn = float(np.linalg.norm(d))
    return d * (cap / dn) if dn > cap else d


def _line_search(fn, z, d, merit, slope, opts, smin):
    """Armijo backtracking; returns (z_new, r_new, status)."""
    s, finite = 1.0, False
    while s >= smin:
        zt = z + s * d
        rt = _evaluate(fn, zt) if np.all(np.isfinite(zt)) else None
        if rt is not None:
            finite = True
            if 0.5 * float(rt @ rt) <= merit + opts.armijo_c * s * slope:
                return zt, rt, "ok"
        s *= opts.backtrack_factor
    return None, None, "decrease_failed" if finite else "eval_failed"


def solve(residual_fn: Callable, jacobian_fn: Callable, z0, opts: NewtonOptions | None = None):
    """Return (z, NewtonStats).  Domain errors during the line search reject the trial step."""
    opts = opts or NewtonOptions()
    z = np.array(z0, dtype=float)
    r = _evaluate(residual_fn, z)
    if r is None:
        return z, NewtonStats(0, float("inf"), [float("inf")], "eval_failure")
    if r.shape != z.shape:
        raise ValueError("residual and iterate dimensions differ")
    norm = float(np.linalg.norm(r))
    stats = NewtonStats(0, norm, [norm], "max_iters")
    while True:
        if norm < opts.residual_tol:
            stats.termination = "converged"
            break
        if stats.iterations >= opts.max_iters:
            stats.termination = "max_iters"
            break
        J = np.asarray(jacobian_fn(z), dtype=float)
        if J.shape != (z.size, z.size):
            raise ValueError("Jacobian must be square and match the iterate")
        if not np.all(np.isfinite(J)):
            stats.termination = "eval_failure"
            break
        d, reg = _direction(J, r, opts.tikhonov_nu0)
        stats.regularized_steps += reg
        merit = 0.5 * norm * norm
        grad = J.T @ r
        zt, rt, status = None, None, "none"
        if d is not None and opts.max_step is not None:
            d = _capped(d, z, opts.max_step)
        # Newton direction first, provided it is a reasonable descent direction
        slope = float(grad @ d) if d is not None else 0.0
        if d is not None and slope < 0:
            zt, rt, status = _line_search(residual_fn, z, d, merit, slope, opts, opts.newton_min_step)
        if status != "ok":
            # regularized Gauss-Newton step (J^T J + nu I) d = -J^T r with nu ~ ||r||
            d = _lm_direction(J, r, min(max(opts.tikhonov_nu0, norm), 1e6))
            if opts.max_step is not None:
                d = _capped(d, z, opts.max_step)
            stats.regularized_steps += 1
            slope = float(grad @ d)
            status2 = "none"
            if np.all(np.isfinite(d)) and slope < 0:
                zt, rt, status2 = _line_search(residual_fn, z, d, merit, slope, opts, opts.min_step)
            if status2 != "ok":
                # only a search that found nothing but non-finite trials is an evaluation failure;
                # no descent direction at all counts as a vanishing step
                tried = (status, status2)
                eval_only = "eval_failed" in tried and "decrease_failed" not in tried
                stats.termination = "eval_failure" if eval_only else "step_too_small"
                break
        z, r = zt, rt
        prev, norm = norm, float(np.linalg.norm(rt))
        stats.iterations += 1
        stats.residual_history.append(norm)
        if norm >= opts.residual_tol and abs(prev - norm) < opts.stagnation_tol:
            stats.termination = "stagnated"
            break
    stats.final_residual_norm = norm
    return z, stats
