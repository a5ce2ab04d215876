"""Outer relaxation loop: drive t to zero, warm-starting each smoothed stage."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fbsys import IterateLayout, System
from .newton import NewtonOptions, solve
from .problem import ProblemSpec
from .relax import Scheme, parse_scheme

__all__ = ["SolveOptions", "StageRecord", "SolveReport", "default_start", "run", "stage_values"]


@dataclass(frozen=True)
class SolveOptions:
    scheme: Scheme = Scheme.S
    t0: float = 1e-3
    t_reduction: float = 0.05
    epsilon: float = 1e-3
    outer_cap: int = 50
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    seed: int = 0
    # optional eps_k = max(epsilon_min, epsilon_factor * t_k)
    epsilon_schedule: bool = False
    epsilon_min: float = 1e-9
    epsilon_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", parse_scheme(self.scheme))
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if not 0 < self.t_reduction < 1:
            raise ValueError("t_reduction must lie in (0, 1)")
        if self.outer_cap < 1:
            raise ValueError("outer_cap must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    def with_(self, **kw) -> "SolveOptions":
        return replace(self, **kw)


def stage_values(opts: SolveOptions, k: int) -> tuple[float, float]:
    """(t_k, eps_k) of outer stage k."""
    t = opts.t0 * opts.t_reduction ** k
    if opts.epsilon_schedule:
        return t, max(opts.epsilon_min, opts.epsilon_factor * t)
    return t, opts.epsilon


@dataclass
class StageRecord:
    t: float
    epsilon: float
    start_norm: float
    end_norm: float
    inner_iterations: int
    termination: str
    residual_history: list


@dataclass
class SolveReport:
    problem: str
    scheme: Scheme
    zeta: np.ndarray
    layout: IterateLayout
    outer_iterations: int
    total_inner_iterations: int
    wall_time: float
    final_residual_norm: float
    stages: list
    termination: str  # converged | stagnated | max_outer | failed

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def final_t(self) -> float:
        return self.stages[-1].t

    def parts(self) -> dict:
        return self.layout.split(self.zeta)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "scheme": self.scheme.value,
            "termination": self.termination,
            "outer_iterations": self.outer_iterations,
            "total_inner_iterations": self.total_inner_iterations,
            "wall_time_s": self.wall_time,
            "final_residual": self.final_residual_norm,
            "final_t": self.final_t,
            "zeta": {k: [float(a) for a in v] for k, v in self.parts().items()},
            "stages": [
                {"t": s.t, "epsilon": s.epsilon, "start_norm": s.start_norm, "end_norm": s.end_norm,
                 "inner_iterations": s.inner_iterations, "termination": s.termination,
                 "residual_history": list(s.residual_history)}
                for s in self.stages
            ],
        }


def default_start(spec: ProblemSpec, scheme, seed: int) -> np.ndarray:
    """Random (x, y) in the start box, every multiplier and u set to one."""
    lay = IterateLayout.of(spec, scheme)
    rng = np.random.default_rng(seed)
    bx = np.array(spec.box_x, dtype=float).reshape(spec.n, 2)
    by = np.array(spec.box_y, dtype=float).reshape(spec.m, 2)
    x0 = rng.uniform(bx[:, 0], bx[:, 1])
    y0 = rng.uniform(by[:, 0], by[:, 1])
    z = np.ones(lay.N)
    sl = lay.slices()
    z[sl["x"]] = x0
    z[sl["y"]] = y0
    return z


def run(spec: ProblemSpec, scheme, zeta0, opts: Optional[SolveOptions] = None) -> SolveReport:
    scheme = parse_scheme(scheme)
    opts = (opts or SolveOptions(scheme=scheme)).with_(scheme=scheme)
    lay = IterateLayout.of(spec, scheme)
    z = np.array(zeta0, dtype=float)
    if z.shape != (lay.N,):
        raise ValueError(f"start vector must have length {lay.N} for scheme {scheme.value}")
    tol = opts.newton.residual_tol
    stages: list[StageRecord] = []
    inner = 0
    termination = "max_outer"
    tic = time.perf_counter()
    for k in range(opts.outer_cap):
        t, eps = stage_values(opts, k)
        sys_k = System(spec, scheme, t, eps)
        z_new, st = solve(sys_k.residual, sys_k.jacobian, z, opts.newton)
        stages.append(StageRecord(t, eps, st.residual_history[0], st.final_residual_norm,
                                  st.iterations, st.termination, list(st.residual_history)))
        inner += st.iterations
        if st.termination == "eval_failure":
            termination = "failed"
            break
        z = z_new
        # the warm start already solves the new stage: the sequence has settled
        if k > 0 and st.termination == "converged" and st.iterations == 0:
            termination = "converged"
            break
        if (k > 0 and st.termination == "stagnated"
                and stages[-2].termination == "stagnated"):
            termination = "stagnated"
            break
    wall = time.perf_counter() - tic
    return SolveReport(spec.name, scheme, z, lay, len(stages), inner, wall,
                       stages[-1].end_norm, stages, termination)
