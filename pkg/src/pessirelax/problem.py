"""Pessimistic bilevel instances: data model, TOML files, registry and the KKT map L."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

from .expr import CompiledJet, Expr, ExprSyntaxError, eval_jet, parse, to_text

__all__ = [
    "ProblemSpec", "ProblemFormatError", "PointData", "Registry",
    "load", "loads", "dumps", "lagrangian", "point_data", "builtin_names",
    "default_registry", "PATH_ENV", "point_data_reference",
]

PATH_ENV = "PESSIRELAX_PROBLEM_PATH"
BOX_DEFAULT = 10.0


class ProblemFormatError(ValueError):
    """Problem file is malformed; carries the file name and line when known."""

    def __init__(self, msg: str, path: str = "<string>", line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {msg}")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    n: int
    m: int
    p: int
    q: int
    F: Expr
    G: tuple
    f: Expr
    g: tuple
    box_x: tuple  # ((lo, hi), ...) length n
    box_y: tuple  # length m
    F_pes: Optional[float] = None
    F_opt: Optional[float] = None
    source: str = ""
    _compiled: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        if len(self.G) != self.p or len(self.g) != self.q:
            raise ValueError("p and q must equal the number of G and g entries")
        for box, d in ((self.box_x, self.n), (self.box_y, self.m)):
            if len(box) != d:
                raise ValueError("start box length must match the dimension")
            for lo, hi in box:
                if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                    raise ValueError(f"bad start interval [{lo}, {hi}]")
        for v in (self.F_pes, self.F_opt):
            if v is not None and not math.isfinite(v):
                raise ValueError("known values must be finite")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.n, self.m)


# -- file format ----------------------------------------------------------------

_REQUIRED = ("name", "n", "m", "p", "q", "F", "G", "f", "g")


def _line_of(text: str, key: str) -> Optional[int]:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for k, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return k
    return None


def loads(text: str, path: str = "<string>") -> ProblemSpec:
    """Parse and validate one problem from TOML text."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ProblemFormatError(exc.msg if hasattr(exc, "msg") else str(exc), path,
                                 getattr(exc, "lineno", None)) from None

    def err(msg, key):
        raise ProblemFormatError(msg, path, _line_of(text, key.split(".")[-1]))

    for key in _REQUIRED:
        if key not in doc:
            raise ProblemFormatError(f"missing required key {key!r}", path)
    dims = {}
    for key in "nmpq":
        v = doc[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            err(f"{key} must be a nonnegative integer", key)
        dims[key] = v
    if dims["n"] < 1 or dims["m"] < 1:
        err("n and m must be positive", "n")
    nm = (dims["n"], dims["m"])

    def expr(src, key, upper=False):
        if not isinstance(src, str):
            err(f"{key} must be an expression string", key)
        try:
            e = parse(src, (nm[0], 0) if upper else nm)
        except ExprSyntaxError as exc:
            err(f"{key}: {exc}", key)
        return e

    for key, dim in (("G", "p"), ("g", "q")):
        if not isinstance(doc[key], list):
            err(f"{key} must be an array of strings", key)
        if len(doc[key]) != dims[dim]:
            err(f"dimension mismatch: {dim} = {dims[dim]} but {key} has {len(doc[key])} entries", key)
    F = expr(doc["F"], "F")
    G = tuple(expr(s, "G", upper=True) for s in doc["G"])
    f = expr(doc["f"], "f")
    g = tuple(expr(s, "g") for s in doc["g"])

    box = doc.get("start_box", {})
    boxes = {}
    for grp, d in (("x", nm[0]), ("y", nm[1])):
        raw = box.get(grp)
        if raw is None:
            raw = [[None, None]] * d
        if not isinstance(raw, list) or len(raw) != d:
            err(f"start_box.{grp} must list {d} intervals", grp)
        out = []
        for iv in raw:
            if not isinstance(iv, list) or len(iv) != 2:
                err(f"start_box.{grp} entries must be [lo, hi]", grp)
            lo = -BOX_DEFAULT if iv[0] is None else float(iv[0])
            hi = BOX_DEFAULT if iv[1] is None else float(iv[1])
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                err(f"start_box.{grp} interval [{lo}, {hi}] must be finite and nonempty", grp)
            out.append((lo, hi))
        boxes[grp] = tuple(out)

    known = doc.get("known", {})
    vals = {}
    for key in ("F_pes", "F_opt"):
        v = known.get(key)
        if v is not None:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                err(f"known.{key} must be a finite number", key)
            v = float(v)
        vals[key] = v
    name = doc["name"]
    if not isinstance(name, str) or not name:
        err("name must be a nonempty string", "name")
    return ProblemSpec(name=name, n=nm[0], m=nm[1], p=dims["p"], q=dims["q"],
                       F=F, G=G, f=f, g=g, box_x=boxes["x"], box_y=boxes["y"],
                       F_pes=vals["F_pes"], F_opt=vals["F_opt"],
                       source=str(doc.get("source", "")))


def load(path) -> ProblemSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemFormatError(f"cannot read file ({exc.strerror})", str(path)) from None
    return loads(text, str(path))


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def dumps(spec: ProblemSpec) -> str:
    """Serialize to the problem file format; ``loads(dumps(s)) == s``."""
    lines = [
        f"name = {_q(spec.name)}",
        f"n = {spec.n}", f"m = {spec.m}", f"p = {spec.p}", f"q = {spec.q}",
        f"F = {_q(to_text(spec.F))}",
        "G = [" + ", ".join(_q(to_text(e)) for e in spec.G) + "]",
        f"f = {_q(to_text(spec.f))}",
        "g = [" + ", ".join(_q(to_text(e)) for e in spec.g) + "]",
        f"source = {_q(spec.source)}",
        "",
        "[start_box]",
        "x = [" + ", ".join(f"[{lo!r}, {hi!r}]" for lo, hi in spec.box_x) + "]",
        "y = [" + ", ".join(f"[{lo!r}, {hi!r}]" for lo, hi in spec.box_y) + "]",
    ]
    known = [(k, v) for k, v in (("F_pes", spec.F_pes), ("F_opt", spec.F_opt)) if v is not None]
    if known:
        lines += ["", "[known]"] + [f"{k} = {v!r}" for k, v in known]
    return "\n".join(lines) + "\n"


# -- registry -----------------------------------------------------------------------

def builtin_names() -> list[str]:
    return ["ex_linear", "ex_toy"]


def _builtin(name: str) -> ProblemSpec:
    res = resources.files(__package__).joinpath("data", f"{name}.toml")
    return loads(res.read_text(encoding="utf-8"), f"<builtin {name}>")


class Registry:
    """Name -> ProblemSpec; built-ins always present, extra directories scanned for *.toml."""

    def __init__(self, dirs: Iterable = (), use_env: bool = True):
        self._specs: dict[str, ProblemSpec] = {}
        self._origin: dict[str, str] = {}
        for name in builtin_names():
            self._specs[name] = _builtin(name)
            self._origin[name] = "builtin"
        search = [Path(d) for d in dirs]
        if use_env and os.environ.get(PATH_ENV):
            search += [Path(d) for d in os.environ[PATH_ENV].split(os.pathsep) if d]
        for d in search:
            self.add_dir(d)

    def add_dir(self, d) -> list[str]:
        d = Path(d)
        if not d.is_dir():
            raise ProblemFormatError("not a directory", str(d))
        added = []
        for path in sorted(d.glob("*.toml")):
            spec = load(path)
            if spec.name in self._specs and self._origin[spec.name] != str(path):
                raise ProblemFormatError(f"duplicate problem name {spec.name!r}", str(path))
            self._specs[spec.name] = spec
            self._origin[spec.name] = str(path)
            added.append(spec.name)
        return added

    def __getitem__(self, name: str) -> ProblemSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise KeyError(f"unknown problem {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._specs

    def names(self) -> list[str]:
        return sorted(self._specs)

    def origin(self, name: str) -> str:
        return self._origin[name]


_default: Optional[Registry] = None


def default_registry() -> Registry:
    global _default
    if _default is None:
        _default = Registry(use_env=False)
    return _default


# -- derivative bundle ---------------------------------------------------------------

@dataclass
class PointData:
    """Values and derivatives of all problem functions at one (x, y).

    Derivative axes run over w = (x, y), length k = n + m; G only over x.
    """
    F: float
    dF: np.ndarray
    d2F: np.ndarray
    G: np.ndarray
    dG: np.ndarray   # (p, n)
    d2G: np.ndarray  # (p, n, n)
    f: float
    df: np.ndarray
    d2f: np.ndarray
    d3f: Optional[np.ndarray]
    g: np.ndarray
    dg: np.ndarray   # (q, k)
    d2g: np.ndarray  # (q, k, k)
    d3g: Optional[np.ndarray]


def _compiled(spec: ProblemSpec, order: int) -> CompiledJet:
    """One straight-line jet for (F, G..., f, g...) in all of (x, y), cached on the ProblemSpec."""
    fn = spec._compiled.get(order)
    if fn is None:
        wrt = [("x", i) for i in range(spec.n)] + [("y", j) for j in range(spec.m)]
        fn = CompiledJet([spec.F, *spec.G, spec.f, *spec.g], wrt, order)
        spec._compiled[order] = fn
    return fn


def point_data(spec: ProblemSpec, x, y, order: int = 3) -> PointData:
    """Derivatives of F, G (up to min(order, 2)) and f, g (up to ``order``) at one point."""
    x = [float(v) for v in np.asarray(x, dtype=float).reshape(-1)]
    y = [float(v) for v in np.asarray(y, dtype=float).reshape(-1)]
    n, p = spec.n, spec.p
    v, gr, h, t = _compiled(spec, order)(x, y)
    lo = 1 + p

    def part(a, rows):
        return None if a is None else a[rows]

    return PointData(
        F=float(v[0]), dF=gr[0], d2F=part(h, 0),
        G=v[1:lo], dG=gr[1:lo, :n], d2G=None if h is None else h[1:lo, :n, :n],
        f=float(v[lo]), df=gr[lo], d2f=part(h, lo), d3f=part(t, lo),
        g=v[lo + 1:], dg=gr[lo + 1:], d2g=part(h, slice(lo + 1, None)),
        d3g=part(t, slice(lo + 1, None)),
    )


def point_data_reference(spec: ProblemSpec, x, y, order: int = 3) -> PointData:
    """Same as point_data but through the numpy jet route (independent check)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m, k = spec.n, spec.m, spec.n + spec.m
    o2 = min(order, 2)
    jF = eval_jet(spec.F, x, y, o2)
    wrt_x = [("x", i) for i in range(n)]
    jG = [eval_jet(e, x, y, o2, wrt_x) for e in spec.G]
    jf = eval_jet(spec.f, x, y, order)
    jg = [eval_jet(e, x, y, order) for e in spec.g]
    p, q = spec.p, spec.q
    return PointData(
        F=float(jF.value), dF=jF.grad, d2F=jF.hess if o2 >= 2 else None,
        G=np.array([float(j.value) for j in jG]),
        dG=np.array([j.grad for j in jG]).reshape(p, n),
        d2G=np.array([j.hess for j in jG]).reshape(p, n, n) if o2 >= 2 else None,
        f=float(jf.value), df=jf.grad, d2f=jf.hess,
        d3f=jf.third,
        g=np.array([float(j.value) for j in jg]),
        dg=np.array([j.grad for j in jg]).reshape(q, k),
        d2g=np.array([j.hess for j in jg]).reshape(q, k, k) if order >= 2 else None,
        d3g=np.array([j.third for j in jg]).reshape(q, k, k, k) if order >= 3 else None,
    )


def lagrangian(spec: ProblemSpec, x, y, u):
    """L = grad_y f + sum_i u_i grad_y g_i with its partials in x, y and u."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.q,):
        raise ValueError(f"u must have length q = {spec.q}")
    d = point_data(spec, x, y, order=2)
    n = spec.n
    L = d.df[n:] + u @ d.dg[:, n:]
    H = d.d2f + np.tensordot(u, d.d2g, axes=1)
    return L, H[n:, :n], H[n:, n:], d.dg[:, n:].T
