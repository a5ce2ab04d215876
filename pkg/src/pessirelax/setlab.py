"""Grid sampling of D(x) and its relaxations, set distances, value-function
estimates, and closed-form oracles for the two built-in examples.

Sampling works on the affine slice L(x, y, u) = 0: y runs over a grid, a
maximal set of "free" multipliers runs over a grid, and the remaining basic
multipliers are solved from L = 0.  Every returned point therefore satisfies
the stationarity equation to rounding, and membership reduces to the sign
rows checked by the kernels.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla

from . import kernels
from .expr import ExprDomainError, eval_jet, evaluate
from .problem import ProblemSpec
from .relax import Scheme, parse_scheme

__all__ = [
    "SampledSet", "PsiEstimate", "grid_1d", "default_box", "sample", "excess", "hausdorff",
    "psi_approx", "predicate_id", "read_csv", "oracle", "oracle_member", "oracle_psi",
    "OracleRangeError",
]

U_BOX = (-1.0, 2.0)
Y_PAD = 1.0
_Y_CHUNK = 512


@dataclass(frozen=True)
class SampledSet:
    """Grid points (y, u) that pass one membership predicate at a fixed x."""
    points: np.ndarray          # (K, m + q)
    m: int
    q: int
    x: tuple
    predicate: str
    box: tuple
    step: float
    tol: float
    notes: tuple = field(default=())

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0

    def __len__(self):
        return int(self.points.shape[0])

    @property
    def y(self) -> np.ndarray:
        return self.points[:, :self.m]

    @property
    def u(self) -> np.ndarray:
        return self.points[:, self.m:]

    def header(self) -> list[str]:
        return [f"y{j + 1}" for j in range(self.m)] + [f"u{i + 1}" for i in range(self.q)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.points:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def read_csv(path) -> tuple[np.ndarray, int, int]:
    """Points plus (m, q) from a file written by ``SampledSet.to_csv``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    head = rows[0]
    m = sum(1 for h in head if h.startswith("y"))
    q = sum(1 for h in head if h.startswith("u"))
    if head != [f"y{j + 1}" for j in range(m)] + [f"u{i + 1}" for i in range(q)]:
        raise ValueError(f"{path}: header must read y1..ym,u1..uq")
    pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, m + q)
    return pts, m, q


def grid_1d(lo: float, hi: float, step: float) -> np.ndarray:
    """lo, lo + step, ... <= hi, snapped to 12 decimals so that e.g. 0.1 lands on 0.1."""
    if not step > 0:
        raise ValueError("step must be positive")
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ValueError(f"bad interval [{lo}, {hi}]")
    count = int(math.floor((hi - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(count + 1), 12)


def default_box(spec: ProblemSpec) -> tuple:
    """Start box in y padded by one unit per side, and U_BOX for each multiplier."""
    by = [(float(a) - Y_PAD, float(b) + Y_PAD) for a, b in spec.box_y]
    return tuple(by + [U_BOX] * spec.q)


def predicate_id(scheme: Optional[Scheme], t: Optional[float]) -> str:
    return "D" if scheme is None else f"{scheme.value}@t={t!r}"


def _resolve(predicate, t):
    if predicate is None or (isinstance(predicate, str) and predicate.strip().upper() == "D"):
        return None, None
    scheme = parse_scheme(predicate)
    if t is None or not t > 0:
        raise ValueError("relaxed predicates need t > 0")
    return scheme, float(t)


def _lower_jets(spec: ProblemSpec, x: np.ndarray, Y: np.ndarray):
    """g (B, q), dg/dy (B, q, m) and df/dy (B, m) on a batch of y points (rows of Y)."""
    B = Y.shape[0]
    wrt = [("y", j) for j in range(spec.m)]
    xb = np.repeat(x[:, None], B, axis=1)
    yb = Y.T
    jf = eval_jet(spec.f, xb, yb, 1, wrt)
    g = np.empty((B, spec.q))
    gy = np.empty((B, spec.q, spec.m))
    for i, e in enumerate(spec.g):
        j = eval_jet(e, xb, yb, 1, wrt)
        g[:, i] = np.broadcast_to(j.value, (B,))
        gy[:, i, :] = np.broadcast_to(j.grad, (B, spec.m))
    return g, gy, np.broadcast_to(jf.grad, (B, spec.m))


def _chunk_jets(spec, x, Y):
    try:
        return _lower_jets(spec, x, Y), np.ones(Y.shape[0], dtype=bool)
    except ExprDomainError:
        pass
    # some point lies outside a function's domain: go one by one and drop it
    q, m = spec.q, spec.m
    g = np.zeros((Y.shape[0], q))
    gy = np.zeros((Y.shape[0], q, m))
    fy = np.zeros((Y.shape[0], m))
    ok = np.zeros(Y.shape[0], dtype=bool)
    for r in range(Y.shape[0]):
        try:
            a, b, c = _lower_jets(spec, x, Y[r:r + 1])
        except ExprDomainError:
            continue
        g[r], gy[r], fy[r], ok[r] = a[0], b[0], c[0], True
    return (g, gy, fy), ok


class _FreeGrids:
    def __init__(self, ubox, step):
        self.axes = [grid_1d(lo, hi, step) for lo, hi in ubox]
        self._cache = {}

    def __call__(self, free: tuple) -> np.ndarray:
        got = self._cache.get(free)
        if got is None:
            if free:
                mesh = np.meshgrid(*[self.axes[i] for i in free], indexing="ij")
                got = np.stack([a.reshape(-1) for a in mesh], axis=1)
            else:
                got = np.zeros((1, 0))
            self._cache[free] = got
        return got


def _basis(A: np.ndarray):
    """Pivoted-QR split of the columns of A (m x q) into basic and free index tuples."""
    m, q = A.shape
    if q == 0:
        return (), ()
    _, R, piv = sla.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R)) if R.size else np.zeros(0)
    scale = max(1.0, float(d[0])) if d.size else 1.0
    r = int(np.sum(d > 1e-12 * scale))
    return tuple(sorted(int(i) for i in piv[:r])), tuple(sorted(int(i) for i in piv[r:]))


def _sample_chunk(spec, x, Y, code, t, tol, ubox, grids):
    (g, gy, fy), ok = _chunk_jets(spec, x, Y)
    q = spec.q
    lo = np.array([b[0] for b in ubox]) - 1e-12
    hi = np.array([b[1] for b in ubox]) + 1e-12
    out_y, out_u = [], []
    for r in range(Y.shape[0]):
        if not ok[r]:
            continue
        A = gy[r].T                      # (m, q): L = fy + A u
        b = -fy[r]
        basic, free = _basis(A)
        UN = grids(free)
        U = np.empty((UN.shape[0], q))
        if free:
            U[:, list(free)] = UN
        if basic:
            rhs = b[:, None] - (A[:, list(free)] @ UN.T if free else 0.0)
            sol = np.linalg.lstsq(A[:, list(basic)], rhs, rcond=None)[0]
            U[:, list(basic)] = sol.T
        resid = np.abs(U @ A.T - b).max(axis=1) if A.shape[0] else np.zeros(U.shape[0])
        keep = (resid <= tol) & np.all((U >= lo) & (U <= hi), axis=1)
        if not keep.any():
            continue
        U = U[keep]
        G = np.broadcast_to(g[r], U.shape)
        mask = kernels.member_mask(code, G, U, t, tol)
        if mask.any():
            U = U[mask]
            out_u.append(U)
            out_y.append(np.broadcast_to(Y[r], (U.shape[0], Y.shape[1])))
    if not out_u:
        return np.zeros((0, Y.shape[1] + q))
    return np.hstack([np.vstack(out_y), np.vstack(out_u)])


def sample(spec: ProblemSpec, predicate="D", x=None, box: Optional[Sequence] = None,
           step: float = 1e-2, tol: float = 1e-9, t: Optional[float] = None,
           jobs: int = 1) -> SampledSet:
    """Grid points of D(x) (predicate "D") or of the relaxed set for a scheme at ``t``.

    ``box`` lists (lo, hi) for y1..ym then u1..uq; see ``default_box``.
    """
    scheme, t = _resolve(predicate, t)
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x if x is not None else np.zeros(spec.n), dtype=float).reshape(-1)
    if x.size != spec.n:
        raise ValueError(f"x must have length {spec.n}")
    box = tuple(tuple(float(v) for v in b) for b in (box if box is not None else default_box(spec)))
    if len(box) != spec.m + spec.q:
        raise ValueError(f"box needs {spec.m + spec.q} intervals (y then u)")
    for lo, hi in box:
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError("box must be finite with lo <= hi")
    ybox, ubox = box[:spec.m], box[spec.m:]
    axes = [grid_1d(lo, hi, step) for lo, hi in ybox]
    Y = np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=1) if axes \
        else np.zeros((1, 0))
    grids = _FreeGrids(ubox, step)
    code = kernels.CODE_D if scheme is None else scheme.code
    tt = 1.0 if t is None else t
    chunks = [Y[i:i + _Y_CHUNK] for i in range(0, Y.shape[0], _Y_CHUNK)]

    def work(chunk):
        return _sample_chunk(spec, x, chunk, code, tt, tol, ubox, grids)

    if jobs > 1 and len(chunks) > 1:
        # grids are built up front so that workers only read the cache
        for free in itertools.chain.from_iterable(
                itertools.combinations(range(spec.q), k) for k in range(spec.q + 1)):
            grids(tuple(free))
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    pts = np.vstack(parts) if parts else np.zeros((0, spec.m + spec.q))
    notes = ("empty",) if pts.shape[0] == 0 else ()
    return SampledSet(pts, spec.m, spec.q, tuple(float(v) for v in x),
                      predicate_id(scheme, t), box, float(step), float(tol), notes)


def _pts(a) -> np.ndarray:
    return a.points if isinstance(a, SampledSet) else np.asarray(a, dtype=float)


def excess(A: Union[SampledSet, np.ndarray], B: Union[SampledSet, np.ndarray]) -> float:
    """e(A, B) = sup_a dist(a, B); e(empty, B) = 0 and e(A, empty) = inf."""
    a, b = _pts(A), _pts(B)
    if a.size == 0:
        return 0.0
    if b.size == 0:
        return float("inf")
    return float(kernels.excess(a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1)))


def hausdorff(A, B) -> float:
    return max(excess(A, B), excess(B, A))


@dataclass(frozen=True)
class PsiEstimate:
    """Max of F over sampled members; a lower bound of the true supremum."""
    value: float
    argmax: Optional[tuple]
    points: int
    lower_bound: bool = True
    truncated: bool = False
    empty: bool = False


def psi_approx(spec: ProblemSpec, kind="p", x=None, box=None, step: float = 1e-2,
               t: Optional[float] = None, tol: float = 1e-9, jobs: int = 1) -> PsiEstimate:
    """kind "p" samples D(x); a scheme name samples the relaxed set at ``t``."""
    pred = "D" if str(kind).lower() in ("p", "d") else kind
    S = sample(spec, pred, x, box, step, tol, t, jobs)
    if S.empty:
        return PsiEstimate(float("nan"), None, 0, empty=True)
    xs = np.asarray(S.x, dtype=float)
    K = len(S)
    Fv = np.broadcast_to(evaluate(spec.F, np.repeat(xs[:, None], K, axis=1), S.y.T), (K,))
    i = int(np.argmax(Fv))
    best = S.points[i]
    lo = np.array([b[0] for b in S.box])
    hi = np.array([b[1] for b in S.box])
    touch = bool(np.any((best - lo < step) | (hi - best < step)))
    return PsiEstimate(float(Fv[i]), tuple(float(v) for v in best), K, True, touch, False)


# -- closed-form oracles for the two built-in examples -------------------------------------

class OracleRangeError(ValueError):
    """The closed forms only hold inside their stated parameter ranges."""


def _check_x(x):
    if not 0.0 <= x <= 1.0:
        raise OracleRangeError(f"x = {x} outside [0, 1]")


def _kdb_guard(example, x, t):
    if t is None or not t > 0:
        raise OracleRangeError("KDB queries need t > 0")
    if example == "ex_toy":
        if x == 0 and t > 0.5:
            raise OracleRangeError("ex_toy at x = 0 needs 0 < t <= 1/2")
        if x > 0 and not t < x / 2:
            raise OracleRangeError("ex_toy at x > 0 needs 0 < t < x/2")
    elif x > 0 and not t < x:
        raise OracleRangeError("ex_linear at x > 0 needs 0 < t < x")


def oracle_member(example: str, kind: str, x: float, y, u, t: Optional[float] = None,
                  tol: float = 1e-10) -> bool:
    """Closed-form membership of (y, u) in D(x) (kind "D") or D^t_KDB(x) (kind "kdb")."""
    x = float(x)
    _check_x(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    kind = kind.lower()
    if kind not in ("d", "kdb"):
        raise OracleRangeError(f"no closed form for {kind!r}")
    if kind == "kdb":
        _kdb_guard(example, x, t)
    le = lambda a, b: a <= b + tol  # noqa: E731
    eq = lambda a, b: abs(a - b) <= tol  # noqa: E731
    if example == "ex_toy":
        (yy,), (u1, u2) = y, u
        if not eq(u2, u1 - x):
            return False
        if kind == "d":
            if x > 0:
                return eq(yy, 0.0) and eq(u1, x)
            return eq(u1, 0.0) and le(0.0, yy) and le(yy, 1.0)
        if x > 0:
            return le(x - t, u1) and le(u1, x + t) and le(-t, yy) and le(yy, t)
        inner = le(-t, u1) and u1 < t - tol and le(t, yy) and le(yy, 1 - t)
        edge = eq(u1, t) and le(-t, yy) and le(yy, 1 + t)
        # at t = 1/2 the third product row also admits y = 1/2 with u1 > t
        half = t == 0.5 and u1 > t and eq(yy, 0.5)
        return inner or edge or half
    if example == "ex_linear":
        (yy,), (uu,) = y, u
        if not eq(uu, x):
            return False
        if kind == "d":
            return eq(yy, 1.0) if x > 0 else le(yy, 1.0)
        if x > 0:
            return le(1 - t, yy) and le(yy, 1 + t)
        return le(yy, 1 - t)
    raise OracleRangeError(f"unknown example {example!r}")


def oracle_psi(example: str, kind: str, x: float, t: Optional[float] = None) -> float:
    """psi_p(x) (kind "p") or psi^t_KDB(x) (kind "kdb") in closed form."""
    x = float(x)
    _check_x(x)
    kind = kind.lower()
    if kind == "kdb":
        _kdb_guard(example, x, t)
    elif kind != "p":
        raise OracleRangeError(f"no closed form for {kind!r}")
    if example == "ex_toy":
        if kind == "p":
            return 1.0 if x == 0 else 0.0
        return 1.0 + t if x == 0 else t
    if example == "ex_linear":
        if kind == "p":
            return x + 1.0
        return 1.0 - t if x == 0 else x + 1.0 + t
    raise OracleRangeError(f"unknown example {example!r}")


def oracle(example: str, query: str, x: float, t: Optional[float] = None, point=None):
    """Dispatch: query "member_D" / "member_kdb" need ``point`` = (y, u); "psi_p" / "psi_kdb" return F values."""
    q = query.lower()
    if q.startswith("member_"):
        if point is None:
            raise OracleRangeError("membership queries need a point (y, u)")
        return oracle_member(example, q[len("member_"):], x, point[0], point[1], t)
    if q.startswith("psi_"):
        return oracle_psi(example, q[len("psi_"):], x, t)
    raise OracleRangeError(f"unknown query {query!r}")
