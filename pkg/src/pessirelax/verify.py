"""Post-solve checks: KKT feasibility, limiting multipliers, C/M/S certificates,
regularity, convergence order and accuracy."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear, minimize

from .fbsys import IterateLayout
from .lp import maximize_boxed
from .problem import ProblemSpec, point_data
from .relax import ComplementarityError, IndexPartition, Scheme, classify, parse_scheme, row_derivs, rows

__all__ = [
    "FeasibilityVerdict", "feasibility", "MappedMultipliers", "map_multipliers",
    "StationarityCertificate", "check_C", "fit_multipliers", "certify",
    "lambda_ec_member", "check_regularity", "RegularityError", "eoc", "accuracy",
    "CERTIFICATE_FIELDS",
]

FLAVORS = ("none", "C", "M", "S")


# -- feasibility ---------------------------------------------------------------------

@dataclass
class FeasibilityVerdict:
    feasible: bool
    violations: list
    max_violation: float


def feasibility(spec: ProblemSpec, x, y, u, tol: float = 1e-4) -> FeasibilityVerdict:
    """Membership of (y, u) in the KKT set D(x) and of x in X, at tolerance ``tol``."""
    u = np.asarray(u, dtype=float)
    d = point_data(spec, x, y, order=2)
    n = spec.n
    L = d.df[n:] + u @ d.dg[:, n:]
    checks = []
    for i, ui in enumerate(u, 1):
        checks.append((-ui, f"u_{i} < 0"))
    for i, gi in enumerate(d.g, 1):
        checks.append((gi, f"g_{i} > 0"))
    for l, Ll in enumerate(L, 1):
        checks.append((abs(Ll), f"L_{l} != 0"))
    for i, (ui, gi) in enumerate(zip(u, d.g), 1):
        checks.append((abs(ui * gi), f"u_{i} g_{i} != 0"))
    for j, Gj in enumerate(d.G, 1):
        checks.append((Gj, f"G_{j} > 0"))
    worst = max((v for v, _ in checks), default=0.0)
    bad = [msg for v, msg in checks if v > tol]
    return FeasibilityVerdict(not bad, bad, float(max(worst, 0.0)))


# -- multiplier mapping --------------------------------------------------------------

@dataclass
class MappedMultipliers:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    ambiguous: tuple  # lower-level indices with conflicting contributions
    contributions: dict  # family -> per-index contribution to gamma


def map_multipliers(spec: ProblemSpec, scheme, zeta, t: float, tol: float = 1e-5,
                    act_tol: float = 1e-6) -> MappedMultipliers:
    """Limiting multipliers from a relaxed iterate.

    beta~ = -beta; gamma~_i collects -lam_f,i * d(row_f)/dg over the relaxed rows
    that are active (row >= -tol), and vanishes on eta.  Written out per scheme:
    S: delta*u - gamma;  LF: gamma*u - (u+t)*delta;  KDB: -gamma + delta*(u-t);
    SU: xi1*delta - gamma;  KS: -gamma + delta*(u-t) on the upper branch.
    """
    scheme = parse_scheme(scheme)
    lay = IterateLayout.of(spec, scheme)
    v = lay.split(zeta)
    lam = lay.lam(zeta)
    x, y, u = v["x"], v["y"], v["u"]
    d = point_data(spec, x, y, order=1)
    c = rows(scheme, d.g, u, t)
    cg = row_derivs(scheme, d.g, u, t)[0]
    active = c >= -tol
    contrib = np.where(active, -lam * cg, 0.0)
    try:
        eta = classify(d.g, u, act_tol).eta
    except ComplementarityError:
        eta = frozenset(i for i in range(spec.q) if u[i] <= act_tol and d.g[i] < -act_tol)
    gamma = contrib.sum(axis=0)
    for i in eta:
        gamma[i] = 0.0
    names = scheme.family_names
    ambiguous = []
    if scheme is not Scheme.SU:  # SU's gamma~ is a genuine combination of both families
        ig, idl = names.index("gamma"), names.index("delta")
        for i in range(spec.q):
            if i not in eta and abs(contrib[ig, i]) > tol and abs(contrib[idl, i]) > tol:
                ambiguous.append(i)
    alpha = np.where(d.G >= -act_tol, v["alpha"], 0.0) if spec.p else np.zeros(0)
    return MappedMultipliers(alpha, -v["beta"].copy(), gamma, tuple(ambiguous),
                             {nm: contrib[k].copy() for k, nm in enumerate(names)})


# -- certificates ----------------------------------------------------------------------

CERTIFICATE_FIELDS = (
    "flavor", "method", "x", "y", "u", "alpha", "beta", "gamma",
    "st3", "st4", "st5", "st6", "st8_products", "s7b", "s9b",
    "eta", "theta", "nu", "tol", "activity_tol", "notes",
)


@dataclass
class StationarityCertificate:
    flavor: str
    method: str
    x: list
    y: list
    u: list
    alpha: list
    beta: list
    gamma: list
    st3: float
    st4: float
    st5: float
    st6: float
    st8_products: list
    s7b: bool
    s9b: bool
    eta: list
    theta: list
    nu: list
    tol: float
    activity_tol: float
    notes: list = field(default_factory=list)

    @property
    def is_C(self) -> bool:
        return self.flavor in ("C", "M", "S")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "StationarityCertificate":
        return cls(**{k: d[k] for k in CERTIFICATE_FIELDS})


def _fl(a):
    return [float(v) for v in np.asarray(a, dtype=float).reshape(-1)]


def _residuals(spec, d, u, alpha, beta, gamma, part):
    n = spec.n
    H = d.d2f + np.tensordot(u, d.d2g, axes=1)
    DL = H[n:, :]  # rows: L_l, columns: w
    st3 = d.dF[:n] + d.dG.T @ alpha + DL[:, :n].T @ beta + d.dg[:, :n].T @ gamma
    st4 = d.dF[n:] + DL[:, n:].T @ beta + d.dg[:, n:].T @ gamma
    st5 = max([0.0] + list(-alpha) + list(d.G) + [abs(float(alpha @ d.G))]) if spec.p else 0.0
    gyb = d.dg[:, n:] @ beta
    st6 = max([0.0] + [abs(gyb[i]) for i in part.nu] + [abs(gamma[i]) for i in part.eta])
    return float(np.max(np.abs(st3), initial=0.0)), float(np.max(np.abs(st4), initial=0.0)), float(st5), float(st6), gyb


def check_C(spec: ProblemSpec, x, y, u, alpha, beta, gamma, tol: float = 1e-5,
            act_tol: float = 1e-6, method: str = "given") -> StationarityCertificate:
    """Evaluate the C-stationarity system and refine to M/S where the sign tests pass."""
    x, y, u = (np.asarray(a, dtype=float) for a in (x, y, u))
    alpha, beta, gamma = (np.asarray(a, dtype=float) for a in (alpha, beta, gamma))
    d = point_data(spec, x, y, order=2)
    notes = []
    try:
        part = classify(d.g, u, act_tol)
    except ComplementarityError as exc:
        part = IndexPartition(frozenset(), frozenset(), frozenset(), act_tol)
        notes.append(str(exc))
    st3, st4, st5, st6, gyb = _residuals(spec, d, u, alpha, beta, gamma, part)
    theta = sorted(part.theta)
    prods = [float(gamma[i] * gyb[i]) for i in theta]
    c_ok = (not notes and max(st3, st4, st5, st6) <= tol and all(p >= -tol for p in prods))
    s7b = all((gamma[i] < tol and gyb[i] < tol) or abs(gamma[i] * gyb[i]) <= tol for i in theta)
    s9b = all(gamma[i] <= tol and gyb[i] <= tol for i in theta)
    flavor = "none"
    if c_ok:
        flavor = "C"
        if s7b:
            flavor = "M"
            if s9b:
                flavor = "S"
    if not c_ok and not notes:
        if max(st3, st4) > tol:
            notes.append("stationarity equations not satisfied")
        if st5 > tol:
            notes.append("upper-level complementarity violated")
        if st6 > tol:
            notes.append("conditions on nu / eta violated")
        if any(p < -tol for p in prods):
            notes.append("sign condition on biactive indices violated")
    return StationarityCertificate(
        flavor, method, _fl(x), _fl(y), _fl(u), _fl(alpha), _fl(beta), _fl(gamma),
        st3, st4, st5, st6, prods, bool(s7b), bool(s9b),
        sorted(part.eta), theta, sorted(part.nu), tol, act_tol, notes)


def fit_multipliers(spec: ProblemSpec, x, y, u, act_tol: float = 1e-6, max_patterns: int = 64):
    """Least-squares multipliers for the C-system at a fixed point.

    Unknowns: alpha on active G (>= 0), beta (free), gamma on theta and nu.
    Yields candidate triples; the first ignores the biactive sign condition,
    later ones impose one sign pattern on theta each (nonpositive pattern first).
    """
    x, y, u = (np.asarray(a, dtype=float) for a in (x, y, u))
    d = point_data(spec, x, y, order=2)
    part = classify(d.g, u, act_tol)
    n, m, p, q = spec.n, spec.m, spec.p, spec.q
    act = [j for j in range(p) if d.G[j] >= -act_tol]
    free_g = sorted(part.theta | part.nu)
    H = d.d2f + np.tensordot(u, d.d2g, axes=1)
    DL = H[n:, :]
    na, nb, ng = len(act), m, len(free_g)
    nv = na + nb + ng
    rows_ = []
    rhs = []
    # stationarity in w = (x, y)
    Aw = np.zeros((n + m, nv))
    for k, j in enumerate(act):
        Aw[:n, k] = d.dG[j]
    Aw[:, na:na + nb] = DL.T
    for k, i in enumerate(free_g):
        Aw[:, na + nb + k] = d.dg[i]
    rows_.append(Aw)
    rhs.append(-d.dF)
    gy = d.dg[:, n:]
    for i in sorted(part.nu):
        r = np.zeros((1, nv))
        r[0, na:na + nb] = gy[i]
        rows_.append(r)
        rhs.append(np.zeros(1))
    A = np.vstack(rows_)
    b = np.concatenate(rhs)
    lo = np.r_[np.zeros(na), np.full(nb + ng, -np.inf)]
    hi = np.full(nv, np.inf)

    def unpack(z):
        alpha = np.zeros(p)
        alpha[act] = z[:na]
        gamma = np.zeros(q)
        gamma[free_g] = z[na + nb:]
        return alpha, z[na:na + nb].copy(), gamma

    sol = lsq_linear(A, b, bounds=(lo, hi)) if nv else None
    yield unpack(sol.x if sol is not None else np.zeros(0))
    theta = sorted(part.theta)
    if not theta:
        return
    patterns = itertools.product((-1.0, 1.0), repeat=len(theta))
    for sgn in itertools.islice(patterns, max_patterns):
        cons = []
        for s, i in zip(sgn, theta):
            kg = na + nb + free_g.index(i)
            eg = np.zeros(nv)
            eg[kg] = s
            eb = np.zeros(nv)
            eb[na:na + nb] = s * gy[i]
            cons += [{"type": "ineq", "fun": (lambda z, e=eg: e @ z), "jac": (lambda z, e=eg: e)},
                     {"type": "ineq", "fun": (lambda z, e=eb: e @ z), "jac": (lambda z, e=eb: e)}]
        res = minimize(lambda z: 0.5 * np.sum((A @ z - b) ** 2), np.zeros(nv),
                       jac=lambda z: A.T @ (A @ z - b), method="SLSQP",
                       bounds=list(zip(lo, [None] * nv)), constraints=cons,
                       options={"ftol": 1e-16, "maxiter": 500})
        yield unpack(res.x)


def certify(spec: ProblemSpec, scheme, zeta, t: float, tol: float = 1e-5,
            act_tol: float = 1e-6) -> StationarityCertificate:
    """Certificate from mapped multipliers; falls back to a least-squares fit when the
    mapping is ambiguous or does not certify."""
    scheme = parse_scheme(scheme)
    lay = IterateLayout.of(spec, scheme)
    v = lay.split(zeta)
    mm = map_multipliers(spec, scheme, zeta, t, tol, act_tol)
    cert = check_C(spec, v["x"], v["y"], v["u"], mm.alpha, mm.beta, mm.gamma, tol, act_tol, "mapped")
    if mm.ambiguous:
        cert.notes.append(f"ambiguous mapping at indices {list(mm.ambiguous)}")
    if cert.is_C and not mm.ambiguous:
        return cert
    if not feasibility(spec, v["x"], v["y"], v["u"]).feasible:
        return cert
    try:
        candidates = list(fit_multipliers(spec, v["x"], v["y"], v["u"], act_tol))
    except ComplementarityError:
        return cert
    best = cert if not mm.ambiguous else None
    for a, b, g in candidates:
        c2 = check_C(spec, v["x"], v["y"], v["u"], a, b, g, tol, act_tol, "least_squares")
        if best is None or FLAVORS.index(c2.flavor) > FLAVORS.index(best.flavor):
            best = c2
    return best


# -- multiplier set membership and regularity ---------------------------------------------

def lambda_ec_member(spec: ProblemSpec, x, y, u, v, beta, gamma, tol: float = 1e-6) -> bool:
    """(beta, gamma) in the C-multiplier set for the right-hand side v (over w = (x, y))."""
    u, v, beta, gamma = (np.asarray(a, dtype=float) for a in (u, v, beta, gamma))
    d = point_data(spec, x, y, order=2)
    try:
        part = classify(d.g, u, tol)
    except ComplementarityError:
        return False
    n = spec.n
    H = d.d2f + np.tensordot(u, d.d2g, axes=1)
    gyb = d.dg[:, n:] @ beta
    if any(abs(gyb[i]) > tol for i in part.nu) or any(abs(gamma[i]) > tol for i in part.eta):
        return False
    if any(gamma[i] * gyb[i] < -tol for i in part.theta):
        return False
    res = v + H[n:, :].T @ beta + d.dg.T @ gamma
    return bool(np.max(np.abs(res), initial=0.0) <= tol)


class RegularityError(RuntimeError):
    pass


def _mfcq_lp(grads: np.ndarray) -> bool:
    """True iff alpha >= 0 with grads^T alpha = 0 forces alpha = 0."""
    k = grads.shape[0]
    if k == 0:
        return True
    res = maximize_boxed(np.ones(k), grads.T, np.zeros(grads.shape[1]), 1.0)
    if res.status != "optimal":
        raise RegularityError(f"regularity LP failed: {res.status}")
    return res.value <= 1e-9


def check_regularity(spec: ProblemSpec, x, y, level: str = "upper", tol: float = 1e-6) -> bool:
    d = point_data(spec, x, y, order=1)
    if level == "upper":
        act = [j for j in range(spec.p) if abs(d.G[j]) <= tol]
        return _mfcq_lp(d.dG[act] if act else np.zeros((0, spec.n)))
    if level == "lower":
        act = [i for i in range(spec.q) if abs(d.g[i]) <= tol]
        return _mfcq_lp(d.dg[act, spec.n:] if act else np.zeros((0, spec.m)))
    raise ValueError("level must be 'upper' or 'lower'")


# -- metrics ----------------------------------------------------------------------------

def eoc(history: Sequence[float]) -> Optional[float]:
    """Order estimate from the last three norms; None when a log is degenerate."""
    h = [float(v) for v in history]
    if len(h) < 3:
        return None
    a, b, c = h[-3:]
    if any(not (v > 0) or v == 1.0 or not math.isfinite(v) for v in (a, b, c)):
        return None
    # the ratio is base-free; log10 keeps decades exact
    la, lb, lc = math.log10(a), math.log10(b), math.log10(c)
    return max(lb / la, lc / lb)


def accuracy(F_value: float, known: Optional[float]) -> Optional[float]:
    if known is None:
        return None
    return abs(float(known) - float(F_value))
