"""Multi-start experiment harness, summary table and Dolan-More performance profiles."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .expr import evaluate
from .outer import SolveOptions, default_start, run
from .problem import ProblemSpec
from .relax import Scheme, parse_scheme
from .verify import accuracy, certify, eoc, feasibility

__all__ = [
    "RunRecord", "ProfileCurve", "run_one", "run_suite", "run_eoc", "perf_profile",
    "profile_from_costs", "rho_at",
    "summary_table", "summary_markdown", "records_csv", "read_records_csv", "profiles_csv",
    "read_profiles_csv", "RECORD_HEADER", "TABLE_ROWS", "T_GRID", "MEASURES",
]

RECORD_HEADER = ("problem", "scheme", "seed", "outer_iters", "inner_iters", "wall_time_s",
                 "final_residual", "feasible", "flavor", "accuracy", "eoc")
TABLE_ROWS = ("Average outer iter", "Average time", "Average inner iter", "Average accuracy",
              "C-stationarity", "Feasibility (%)", "EOC ≤ 1", "EOC > 1")
T_GRID = np.geomspace(1.0, 100.0, 64)
MEASURES = ("time", "outer_iters", "inner_iters")
_SCHEME_ORDER = {s.value: i for i, s in enumerate(Scheme)}


def _num(v) -> str:
    """Shortest round-trip text; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class RunRecord:
    problem: str
    scheme: str
    seed: int
    outer_iters: int
    inner_iters: int
    wall_time: float
    final_residual: float
    feasible: bool
    flavor: str
    accuracy: Optional[float] = None
    eoc: Optional[float] = None
    termination: str = ""
    F_value: Optional[float] = None

    def __post_init__(self):
        self.scheme = parse_scheme(self.scheme).value
        if self.outer_iters < 0 or self.inner_iters < 0 or self.wall_time < 0:
            raise ValueError("counts and times must be nonnegative")
        if self.flavor not in ("C", "M", "S", "none"):
            raise ValueError(f"bad flavor {self.flavor!r}")
        if self.flavor != "none" and not self.feasible:
            raise ValueError("a stationarity flavor requires a feasible point")

    @property
    def key(self):
        return (self.problem, _SCHEME_ORDER[self.scheme], self.seed)

    @property
    def solved(self) -> bool:
        """Profile success: the run ended at a feasible point."""
        return bool(self.feasible)

    def row(self) -> list[str]:
        return [self.problem, self.scheme, str(self.seed), str(self.outer_iters),
                str(self.inner_iters), _num(self.wall_time), _num(self.final_residual),
                str(bool(self.feasible)), self.flavor, _num(self.accuracy), _num(self.eoc)]

    def comparable(self) -> dict:
        """Everything except the wall-clock time."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def run_eoc(report) -> Optional[float]:
    """EOC of the last stage whose residual history holds at least three norms."""
    for st in reversed(report.stages):
        if len(st.residual_history) >= 3:
            return eoc(st.residual_history)
    return None


def run_one(spec: ProblemSpec, scheme, seed: int, opts: Optional[SolveOptions] = None) -> RunRecord:
    scheme = parse_scheme(scheme)
    opts = (opts or SolveOptions()).with_(scheme=scheme, seed=seed)
    tic = time.perf_counter()
    try:
        rep = run(spec, scheme, default_start(spec, scheme, seed), opts)
    except Exception as exc:  # a broken run is recorded, never raised
        return RunRecord(spec.name, scheme.value, seed, 0, 0, time.perf_counter() - tic,
                         float("nan"), False, "none", termination=f"error: {exc}")
    v = rep.parts()
    try:
        feas = feasibility(spec, v["x"], v["y"], v["u"]).feasible
    except Exception:
        feas = False
    flavor = "none"
    if feas:
        try:
            flavor = certify(spec, scheme, rep.zeta, rep.final_t).flavor
        except Exception:
            flavor = "none"
    try:
        Fv = float(evaluate(spec.F, v["x"], v["y"]))
    except Exception:
        Fv = None
    acc = accuracy(Fv, spec.F_pes) if Fv is not None else None
    return RunRecord(spec.name, scheme.value, seed, rep.outer_iterations,
                     rep.total_inner_iterations, rep.wall_time, rep.final_residual_norm,
                     feas, flavor, acc, run_eoc(rep), rep.termination, Fv)


def run_suite(problems: Sequence[ProblemSpec], schemes: Iterable, seeds: Sequence[int],
              opts: Optional[SolveOptions] = None, jobs: int = 1) -> list[RunRecord]:
    """One record per (problem, scheme, seed), ordered by that key."""
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    names = [p.name for p in problems]
    if len(set(names)) != len(names):
        raise ValueError("problem names must be distinct")
    schemes = [parse_scheme(s) for s in schemes]
    tasks = [(p, s, k) for p in problems for s in schemes for k in seeds]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            recs = list(pool.map(lambda a: run_one(a[0], a[1], a[2], opts), tasks))
    else:
        recs = [run_one(p, s, k, opts) for p, s, k in tasks]
    return sorted(recs, key=lambda r: r.key)


# -- summary table ----------------------------------------------------------------------

def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def summary_table(records: Sequence[RunRecord]) -> dict:
    """{"columns": [...schemes], "rows": {label: [value per scheme]}}; None marks n/a."""
    if not records:
        raise ValueError("no records")
    cols = sorted({r.scheme for r in records}, key=_SCHEME_ORDER.get)
    rows = {label: [] for label in TABLE_ROWS}
    for s in cols:
        rs = sorted((r for r in records if r.scheme == s), key=lambda r: r.key)
        rows["Average outer iter"].append(_mean([r.outer_iters for r in rs]))
        rows["Average time"].append(_mean([r.wall_time for r in rs]))
        rows["Average inner iter"].append(_mean([r.inner_iters for r in rs]))
        rows["Average accuracy"].append(_mean([r.accuracy for r in rs]))
        rows["C-stationarity"].append(sum(r.flavor != "none" for r in rs))
        rows["Feasibility (%)"].append(100.0 * sum(r.feasible for r in rs) / len(rs))
        rows["EOC ≤ 1"].append(sum(r.eoc is not None and r.eoc <= 1 for r in rs))
        rows["EOC > 1"].append(sum(r.eoc is not None and r.eoc > 1 for r in rs))
    return {"columns": cols, "rows": rows}


def summary_markdown(records: Sequence[RunRecord]) -> str:
    tab = summary_table(records)
    cols = tab["columns"]
    out = ["| | " + " | ".join(Scheme(c).name for c in cols) + " |",
           "|---|" + "---|" * len(cols)]
    for label in TABLE_ROWS:
        cells = ["n/a" if v is None else _num(v) for v in tab["rows"][label]]
        out.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(out) + "\n"


def records_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def read_records_csv(text: str) -> list[RunRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != RECORD_HEADER:
        raise ValueError("not a records file: header mismatch")

    def opt(s):
        return float(s) if s != "" else None

    out = []
    for r in rows[1:]:
        if not r:
            continue
        if len(r) != len(RECORD_HEADER):
            raise ValueError(f"records row has {len(r)} fields")
        out.append(RunRecord(r[0], r[1], int(r[2]), int(r[3]), int(r[4]), float(r[5]),
                             float(r[6]), r[7] == "True", r[8], opt(r[9]), opt(r[10])))
    return out


# -- performance profiles ---------------------------------------------------------------

@dataclass
class ProfileCurve:
    solver: str
    T: list
    rho: list
    ratios: list = field(default_factory=list)   # one per instance, inf when unsolved

    def __post_init__(self):
        if any(b < a for a, b in zip(self.rho, self.rho[1:])):
            raise ValueError("rho must be nondecreasing")
        if any(not 0.0 <= v <= 1.0 for v in self.rho):
            raise ValueError("rho must lie in [0, 1]")


def _measure(r: RunRecord, measure: str) -> float:
    if measure == "time":
        return r.wall_time
    # iteration counts start at one so that a zero-iteration run keeps ratios finite
    return float(max(getattr(r, measure), 1))


def rho_at(curve: ProfileCurve, T: float) -> float:
    """Exact rho_s(T) from the stored per-instance ratios."""
    n = len(curve.ratios)
    return sum(r <= T for r in curve.ratios) / n if n else 0.0


def profile_from_costs(costs: dict, T: Optional[Sequence[float]] = None) -> list[ProfileCurve]:
    """Curves from {solver: {instance: cost}}; inf or a missing entry marks a failure."""
    if not costs:
        raise ValueError("no solvers")
    grid = [float(v) for v in (T_GRID if T is None else T)]
    instances = sorted({i for c in costs.values() for i in c})
    if not instances:
        raise ValueError("no instances")
    best = {i: min(costs[s].get(i, math.inf) for s in costs) for i in instances}
    curves = []
    for s in costs:
        ratios = []
        for i in instances:
            c, b = costs[s].get(i, math.inf), best[i]
            if math.isinf(c):
                ratios.append(math.inf)
            elif b <= 0:
                ratios.append(1.0 if c <= 0 else math.inf)
            else:
                ratios.append(c / b)
        rho = [sum(r <= t for r in ratios) / len(ratios) for t in grid]
        curves.append(ProfileCurve(s, grid, rho, ratios))
    return curves


def perf_profile(records: Sequence[RunRecord], measure: str = "time",
                 T: Optional[Sequence[float]] = None) -> list[ProfileCurve]:
    """Dolan-More curves over instances (problem, seed); failed runs get r = inf."""
    if not records:
        raise ValueError("no records")
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}")
    solvers = sorted({r.scheme for r in records}, key=_SCHEME_ORDER.get)
    costs = {s: {} for s in solvers}
    for r in records:
        costs[r.scheme][(r.problem, r.seed)] = _measure(r, measure) if r.solved else math.inf
    return profile_from_costs(costs, T)


def profiles_csv(curves: Sequence[ProfileCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solver", "T", "rho"])
    for c in curves:
        for t, r in zip(c.T, c.rho):
            w.writerow([c.solver, _num(t), _num(r)])
    return buf.getvalue()


def read_profiles_csv(text: str) -> list[ProfileCurve]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["solver", "T", "rho"]:
        raise ValueError("not a profile file: header mismatch")
    by: dict = {}
    for s, t, r in rows[1:]:
        by.setdefault(s, ([], []))
        by[s][0].append(float(t))
        by[s][1].append(float(r))
    return [ProfileCurve(s, T, rho) for s, (T, rho) in by.items()]
