"""Command-line entry point: solve, bench, profile, check, sample, problems.

Exit codes: 0 success, 1 solver non-convergence (or a failed check), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, setlab
from .expr import check_derivatives, evaluate
from .fbsys import IterateLayout
from .newton import NewtonOptions
from .outer import SolveOptions, default_start, run
from .problem import ProblemFormatError, Registry
from .relax import ComplementarityError, Scheme, parse_scheme
from .verify import accuracy, certify, check_C, feasibility, fit_multipliers

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


# -- argument helpers ----------------------------------------------------------------------

def _scheme_arg(text: str):
    if text.strip().lower() == "all":
        return "all"
    try:
        return parse_scheme(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seeds_arg(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N..M or a comma list, got {text!r}") from None


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be nonnegative: {text!r}")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _box(text: str) -> list[tuple[float, float]]:
    try:
        out = []
        for part in text.split(","):
            lo, hi = part.split(":")
            out.append((float(lo), float(hi)))
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi,lo:hi,..., got {text!r}") from None


def _add_problem(p, many=False):
    if many:
        p.add_argument("--problem", action="append", metavar="NAME",
                       help="problem name (repeatable; default: every known problem)")
    else:
        p.add_argument("--problem", metavar="NAME", help="problem name")
    p.add_argument("--problem-dir", action="append", default=[], metavar="DIR",
                   help="extra directory of problem files")


def _add_solver(p):
    p.add_argument("--t0", type=_positive, default=1e-3, help="initial relaxation parameter")
    p.add_argument("--theta", type=_positive, default=0.05, help="t reduction factor in (0, 1)")
    p.add_argument("--epsilon", type=_nonneg, default=1e-3, help="smoothing parameter")
    p.add_argument("--epsilon-schedule", action="store_true",
                   help="use eps_k = max(1e-9, t_k) instead of a fixed epsilon")
    p.add_argument("--tol", type=_positive, default=1e-7, help="residual tolerance")
    p.add_argument("--outer-cap", type=_pos_int, default=50)
    p.add_argument("--max-iters", type=_pos_int, default=500, help="inner Newton iteration cap")


def _add_out(p, formats=("csv", "json")):
    p.add_argument("--out", metavar="PATH", help="write the machine-readable artifact here")
    p.add_argument("--format", choices=formats, default=formats[-1] if len(formats) > 1 else formats[0])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pessirelax",
                                 description="Relaxation solvers for pessimistic bilevel programs.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the relaxation method from one or more seeded starts")
    _add_problem(p)
    p.add_argument("--scheme", type=_scheme_arg, default=Scheme.S, help="s|lf|kdb|su|ks|all")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--seeds", type=_seeds_arg, default=None, metavar="N..M")
    _add_solver(p)
    _add_out(p)

    p = sub.add_parser("bench", help="multi-start suite with summary table")
    _add_problem(p, many=True)
    p.add_argument("--scheme", type=_scheme_arg, default="all")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--seeds", type=_seeds_arg, default=None, metavar="N..M")
    p.add_argument("--jobs", type=_pos_int, default=1)
    p.add_argument("--summary", metavar="PATH", help="also write the Markdown summary table")
    _add_solver(p)
    _add_out(p, ("json", "csv"))

    p = sub.add_parser("profile", help="performance profiles from run records")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--records", metavar="PATH", help="records CSV or JSON from solve/bench")
    src.add_argument("--curves", metavar="PATH", help="re-read a profile CSV written earlier")
    p.add_argument("--measure", choices=bench.MEASURES, default="time")
    _add_out(p, ("csv",))

    p = sub.add_parser("check", help="feasibility and stationarity of a point, or derivative checks")
    _add_problem(p)
    p.add_argument("--report", metavar="PATH", help="JSON written by solve or check")
    p.add_argument("--x", type=_floats)
    p.add_argument("--y", type=_floats)
    p.add_argument("--u", type=_floats)
    p.add_argument("--derivatives", action="store_true",
                   help="compare AD partials of every problem function with finite differences")
    p.add_argument("--seed", type=int, default=0, help="seed for derivative check points")
    _add_out(p, ("json",))

    p = sub.add_parser("sample", help="grid sample of D(x) or a relaxed set")
    _add_problem(p)
    p.add_argument("--x", type=_floats, required=True)
    p.add_argument("--set", dest="predicate", default="D", help="D or a scheme name")
    p.add_argument("--t", type=_positive, default=None, help="relaxation parameter for relaxed sets")
    p.add_argument("--step", type=_positive, default=1e-2)
    p.add_argument("--box", type=_box, default=None, metavar="lo:hi,...",
                   help="intervals for y1..ym then u1..uq")
    p.add_argument("--against", metavar="PATH", help="sample CSV to measure excess/Hausdorff against")
    _add_out(p, ("csv",))

    p = sub.add_parser("problems", help="list known problems")
    p.add_argument("--problem-dir", action="append", default=[], metavar="DIR")
    p.add_argument("--format", choices=("text", "json"), default="text")
    return ap


# -- shared plumbing -----------------------------------------------------------------------

def _registry(args) -> Registry:
    try:
        return Registry(args.problem_dir)
    except (ProblemFormatError, OSError) as exc:
        raise UsageError(str(exc)) from None


def _spec(reg: Registry, name):
    if not name:
        raise UsageError("--problem is required")
    try:
        return reg[name]
    except KeyError as exc:
        raise UsageError(f"{exc.args[0]}; known: {', '.join(reg.names())}") from None


def _schemes(value) -> list[Scheme]:
    return list(Scheme) if value == "all" else [value]


def _seeds(args, default) -> list[int]:
    if args.seeds is not None:
        return args.seeds
    if args.seed is not None:
        return [args.seed]
    return default


def _options(args) -> SolveOptions:
    if not args.theta < 1:
        raise UsageError("--theta must lie in (0, 1)")
    newton = NewtonOptions(max_iters=args.max_iters, residual_tol=args.tol)
    return SolveOptions(t0=args.t0, t_reduction=args.theta, epsilon=args.epsilon,
                        outer_cap=args.outer_cap, newton=newton,
                        epsilon_schedule=args.epsilon_schedule)


def _write(path, text: str):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _fmt(v) -> str:
    return "[" + ", ".join(repr(float(a)) for a in np.asarray(v).reshape(-1)) + "]"


# -- commands ------------------------------------------------------------------------------

def cmd_solve(args, out) -> int:
    reg = _registry(args)
    spec = _spec(reg, args.problem)
    opts = _options(args)
    results, records = [], []
    status = 0
    for scheme in _schemes(args.scheme):
        for seed in _seeds(args, [0]):
            rep = run(spec, scheme, default_start(spec, scheme, seed), opts.with_(seed=seed))
            v = rep.parts()
            verdict = feasibility(spec, v["x"], v["y"], v["u"])
            cert = certify(spec, scheme, rep.zeta, rep.final_t) if verdict.feasible else None
            ok = rep.termination in ("converged", "stagnated") and verdict.feasible
            status = max(status, 0 if ok else 1)
            flavor = cert.flavor if cert else "none"
            print(f"problem {spec.name}  scheme {scheme.value}  seed {seed}", file=out)
            print(f"  termination {rep.termination}  outer {rep.outer_iterations}  "
                  f"inner {rep.total_inner_iterations}  residual {rep.final_residual_norm!r}", file=out)
            print(f"  time {rep.wall_time:.3f}s", file=out)
            print(f"  x = {_fmt(v['x'])}  y = {_fmt(v['y'])}  u = {_fmt(v['u'])}", file=out)
            print(f"  feasible {verdict.feasible}  stationarity {flavor}", file=out)
            d = rep.to_dict()
            d.update(seed=seed, feasible=verdict.feasible, violations=verdict.violations,
                     certificate=cert.to_dict() if cert else None)
            results.append(d)
            Fv = float(evaluate(spec.F, v["x"], v["y"]))
            records.append(bench.RunRecord(
                spec.name, scheme.value, seed, rep.outer_iterations, rep.total_inner_iterations,
                rep.wall_time, rep.final_residual_norm, verdict.feasible, flavor,
                accuracy(Fv, spec.F_pes), bench.run_eoc(rep), rep.termination, Fv))
    if args.out:
        if args.format == "json":
            _write(args.out, json.dumps(results if len(results) > 1 else results[0], indent=1) + "\n")
        else:
            _write(args.out, bench.records_csv(records))
    return status


def _record_json(r) -> dict:
    return {"problem": r.problem, "scheme": r.scheme, "seed": r.seed, "outer_iters": r.outer_iters,
            "inner_iters": r.inner_iters, "wall_time_s": r.wall_time,
            "final_residual": r.final_residual, "feasible": r.feasible, "flavor": r.flavor,
            "accuracy": r.accuracy, "eoc": r.eoc, "termination": r.termination}


def cmd_bench(args, out) -> int:
    reg = _registry(args)
    names = args.problem or reg.names()
    specs = [_spec(reg, n) for n in names]
    recs = bench.run_suite(specs, _schemes(args.scheme), _seeds(args, list(range(10))),
                           _options(args), jobs=args.jobs)
    table = bench.summary_markdown(recs)
    print(table, end="", file=out)
    if args.summary:
        _write(args.summary, table)
    if args.out:
        if args.format == "csv":
            _write(args.out, bench.records_csv(recs))
        else:
            _write(args.out, json.dumps([_record_json(r) for r in recs], indent=1) + "\n")
    return 0


def _records_from(path) -> list:
    text = _read(path)
    try:
        if text.lstrip().startswith(("[", "{")):
            rows = json.loads(text)
            rows = rows if isinstance(rows, list) else [rows]
            recs = [bench.RunRecord(r["problem"], r["scheme"], int(r["seed"]), int(r["outer_iters"]),
                                    int(r["inner_iters"]), float(r["wall_time_s"]),
                                    float(r["final_residual"]), bool(r["feasible"]), r["flavor"],
                                    r.get("accuracy"), r.get("eoc"), r.get("termination", ""))
                    for r in rows]
        else:
            recs = bench.read_records_csv(text)
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise UsageError(f"{path}: not a records file ({exc})") from None
    if not recs:
        raise UsageError(f"{path}: no records")
    return recs


def cmd_profile(args, out) -> int:
    if args.curves:
        try:
            curves = bench.read_profiles_csv(_read(args.curves))
        except ValueError as exc:
            raise UsageError(f"{args.curves}: {exc}") from None
    else:
        curves = bench.perf_profile(_records_from(args.records), args.measure)
    for c in curves:
        print(f"{c.solver}: rho(1) = {c.rho[0]!r}  rho({c.T[-1]:g}) = {c.rho[-1]!r}", file=out)
    if args.out:
        _write(args.out, bench.profiles_csv(curves))
    return 0


def _derivative_report(spec, seed, out) -> dict:
    rng = np.random.default_rng(seed)
    bx = np.array(spec.box_x, dtype=float).reshape(spec.n, 2)
    by = np.array(spec.box_y, dtype=float).reshape(spec.m, 2)
    errs = {}
    for k in range(5):
        x = rng.uniform(bx[:, 0], bx[:, 1])
        y = rng.uniform(by[:, 0], by[:, 1])
        funcs = [("F", spec.F)] + [(f"G{j + 1}", e) for j, e in enumerate(spec.G)] \
            + [("f", spec.f)] + [(f"g{i + 1}", e) for i, e in enumerate(spec.g)]
        for name, e in funcs:
            errs[name] = max(errs.get(name, 0.0), check_derivatives(e, (x, y)))
    for name, v in errs.items():
        print(f"  {name}: max relative error {v:.3e}", file=out)
    return errs


def _best_fit(spec, x, y, u):
    order = ("none", "C", "M", "S")
    best = None
    try:
        fits = list(fit_multipliers(spec, x, y, u))
    except ComplementarityError:
        return None
    for a, b, g in fits:
        c = check_C(spec, x, y, u, a, b, g, method="least_squares")
        if best is None or order.index(c.flavor) > order.index(best.flavor):
            best = c
    return best


def _targets(args, reg) -> list:
    """(spec, scheme, zeta, t, x, y, u) per point to check."""
    if not args.report:
        spec = _spec(reg, args.problem)
        pts = (args.x, args.y, args.u)
        if all(v is None for v in pts):
            return [(spec, None, None, None, None, None, None)]
        if any(v is None for v in pts):
            raise UsageError("--x, --y and --u go together")
        return [(spec, None, None, None, *pts)]
    try:
        doc = json.loads(_read(args.report))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.report}: {exc}") from None
    out = []
    for d in doc if isinstance(doc, list) else [doc]:
        try:
            spec = _spec(reg, d.get("problem"))
            if "zeta" in d:
                scheme = parse_scheme(d["scheme"])
                lay = IterateLayout.of(spec, scheme)
                zeta = lay.join(**{k: np.asarray(v, dtype=float) for k, v in d["zeta"].items()})
                v = lay.split(zeta)
                out.append((spec, scheme, zeta, float(d["final_t"]), v["x"], v["y"], v["u"]))
            else:
                p = d["point"]
                out.append((spec, None, None, None, p["x"], p["y"], p["u"]))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise UsageError(f"{args.report}: not a solve or check report ({exc})") from None
    return out


def cmd_check(args, out) -> int:
    reg = _registry(args)
    results, status = [], 0
    for spec, scheme, zeta, t, x, y, u in _targets(args, reg):
        result: dict = {"problem": spec.name}
        if args.derivatives:
            print(f"derivatives of {spec.name}", file=out)
            errs = _derivative_report(spec, args.seed, out)
            result["derivative_errors"] = errs
            status = max(status, 0 if max(errs.values(), default=0.0) < 1e-5 else 1)
        if x is None:
            if not args.derivatives:
                raise UsageError("nothing to check: give --report, a point (--x --y --u) or --derivatives")
            results.append(result)
            continue
        x, y, u = (np.asarray(a, dtype=float).reshape(-1) for a in (x, y, u))
        if (x.size, y.size, u.size) != (spec.n, spec.m, spec.q):
            raise UsageError(f"point sizes must be n={spec.n}, m={spec.m}, q={spec.q}")
        verdict = feasibility(spec, x, y, u)
        print(f"{spec.name}: feasible {verdict.feasible}  max violation {verdict.max_violation!r}",
              file=out)
        for msg in verdict.violations:
            print(f"  violated: {msg}", file=out)
        cert = None
        if verdict.feasible:
            cert = certify(spec, scheme, zeta, t) if zeta is not None else _best_fit(spec, x, y, u)
        print(f"  stationarity {cert.flavor if cert else 'none'}", file=out)
        result.update(point={"x": x.tolist(), "y": y.tolist(), "u": u.tolist()},
                      feasible=verdict.feasible, violations=verdict.violations,
                      certificate=cert.to_dict() if cert else None)
        if zeta is not None:
            # keep the iterate so that re-checking this file reproduces the certificate
            result.update(scheme=scheme.value, final_t=t,
                          zeta={k: v.tolist() for k, v in IterateLayout.of(spec, scheme).split(zeta).items()})
        results.append(result)
        status = max(status, 0 if verdict.feasible else 1)
    if args.out:
        _write(args.out, json.dumps(results if len(results) > 1 else results[0], indent=1) + "\n")
    return status


def cmd_sample(args, out) -> int:
    reg = _registry(args)
    spec = _spec(reg, args.problem)
    if len(args.x) != spec.n:
        raise UsageError(f"--x needs {spec.n} values")
    try:
        S = setlab.sample(spec, args.predicate, args.x, args.box, args.step, t=args.t)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{S.predicate} at x = {_fmt(S.x)}: {len(S)} points (step {S.step!r})", file=out)
    if not S.empty:
        est = setlab.psi_approx(spec, "p" if S.predicate == "D" else args.predicate, args.x,
                                args.box, args.step, t=args.t)
        print(f"  max F over sample {est.value!r}  (lower bound; box-truncated {est.truncated})",
              file=out)
    if args.against:
        try:
            pts, m, q = setlab.read_csv(args.against)
        except (ValueError, OSError) as exc:
            raise UsageError(str(exc)) from None
        if (m, q) != (spec.m, spec.q):
            raise UsageError(f"{args.against}: dimensions (m={m}, q={q}) differ from the problem")
        print(f"  excess(sample, other) {setlab.excess(S, pts)!r}", file=out)
        print(f"  excess(other, sample) {setlab.excess(pts, S)!r}", file=out)
        print(f"  hausdorff {setlab.hausdorff(S, pts)!r}", file=out)
    if args.out:
        S.to_csv(args.out)
    return 0


def cmd_problems(args, out) -> int:
    reg = _registry(args)
    rows = []
    for name in reg.names():
        s = reg[name]
        rows.append({"name": name, "n": s.n, "m": s.m, "p": s.p, "q": s.q,
                     "origin": reg.origin(name), "F_pes": s.F_pes, "F_opt": s.F_opt})
    if args.format == "json":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        text = "".join(f"{r['name']}  n={r['n']} m={r['m']} p={r['p']} q={r['q']}  ({r['origin']})\n"
                       for r in rows)
    print(text, end="", file=out)
    return 0


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "profile": cmd_profile, "check": cmd_check,
            "sample": cmd_sample, "problems": cmd_problems}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"pessirelax {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
