"""The five relaxations of the complementarity set and membership tests.

Each scheme maps a pair (g_i, u_i) and t > 0 to a short vector of rows that
must all be <= 0.  Row functions accept numpy arrays and broadcast.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec, lagrangian, point_data
from .expr import evaluate

__all__ = [
    "Scheme", "parse_scheme", "rows", "row_grads", "row_derivs", "su_theta",
    "phi", "phi_grad", "member_D", "member_Dt", "IndexPartition",
    "ComplementarityError", "index_sets",
]


class Scheme(enum.Enum):
    S = "s"
    LF = "lf"
    KDB = "kdb"
    SU = "su"
    KS = "ks"

    @property
    def families(self) -> int:
        return 2 if self is Scheme.LF else 3

    @property
    def code(self) -> int:
        return list(Scheme).index(self)

    @property
    def family_names(self) -> tuple[str, ...]:
        return ("gamma", "delta") if self is Scheme.LF else ("gamma", "mu", "delta")

    def __str__(self):
        return self.value


_ALIASES = {"scholtes": Scheme.S, "lin-fukushima": Scheme.LF, "kanzow-schwartz": Scheme.KS,
            "steffensen-ulbrich": Scheme.SU, "kadrani-dussault-benchakroun": Scheme.KDB}


def parse_scheme(tag) -> Scheme:
    if isinstance(tag, Scheme):
        return tag
    t = str(tag).strip().lower()
    if t in _ALIASES:
        return _ALIASES[t]
    try:
        return Scheme(t)
    except ValueError:
        raise ValueError(f"unknown scheme {tag!r} (expected s, lf, kdb, su or ks)") from None


def _check_t(t):
    if not t > 0:
        raise ValueError("relaxation parameter t must be positive")


# SU regularization: theta(z) = (-z^4 + 6 z^2 + 3) / 8 on [-1, 1]
def su_theta(z, nu: int = 0):
    if nu == 0:
        return (-z ** 4 + 6 * z ** 2 + 3) / 8
    if nu == 1:
        return (-z ** 3 + 3 * z) / 2
    if nu == 2:
        return (3 - 3 * z ** 2) / 2
    raise ValueError(nu)


def rows(scheme: Scheme, g, u, t: float):
    """Relaxed rows, shape (families,) + broadcast(g, u).shape."""
    _check_t(t)
    g = np.asarray(g, dtype=float)
    u = np.asarray(u, dtype=float)
    g, u = np.broadcast_arrays(g, u)
    if scheme is Scheme.S:
        return np.stack([g, -u, -u * g - t])
    if scheme is Scheme.LF:
        return np.stack([-(u * g + t * t), -(u + t) * (-g + t) + t * t])
    if scheme is Scheme.KDB:
        return np.stack([g - t, -u - t, -(u - t) * (g + t)])
    if scheme is Scheme.SU:
        s = u + g
        z = np.clip(s / t, -1.0, 1.0)
        mid = u - g - t * su_theta(z)
        third = np.where(s <= -t, 2 * u, np.where(s >= t, -2 * g, mid))
        return np.stack([g, -u, third])
    if scheme is Scheme.KS:
        a, b = u - t, -g - t
        third = np.where(u - g >= 2 * t, a * b, -0.5 * (a * a + b * b))
        return np.stack([g, -u, third])
    raise ValueError(scheme)


def row_grads(scheme: Scheme, g, u, t: float):
    """First partials of each row in (g, u): returns (dg, du), each (families, ...)."""
    _check_t(t)
    g, u = np.broadcast_arrays(np.asarray(g, dtype=float), np.asarray(u, dtype=float))
    one, zero = np.ones_like(g), np.zeros_like(g)
    if scheme is Scheme.S:
        return np.stack([one, zero, -u]), np.stack([zero, -one, -g])
    if scheme is Scheme.LF:
        return np.stack([-u, u + t]), np.stack([-g, g - t])
    if scheme is Scheme.KDB:
        return np.stack([one, zero, -(u - t)]), np.stack([zero, -one, -(g + t)])
    if scheme is Scheme.SU:
        s = u + g
        th1 = su_theta(np.clip(s / t, -1.0, 1.0), 1)
        lo, hi = s <= -t, s >= t
        dg3 = np.where(lo, 0.0, np.where(hi, -2.0, -1 - th1))
        du3 = np.where(lo, 2.0, np.where(hi, 0.0, 1 - th1))
        return np.stack([one, zero, dg3]), np.stack([zero, -one, du3])
    if scheme is Scheme.KS:
        up = u - g >= 2 * t
        dg3 = np.where(up, -(u - t), -(g + t))
        du3 = np.where(up, -g - t, -(u - t))
        return np.stack([one, zero, dg3]), np.stack([zero, -one, du3])
    raise ValueError(scheme)


def row_derivs(scheme: Scheme, g, u, t: float):
    """Partials of each row in (g, u): returns (dg, du, dgg, dgu, duu), each (families, ...)."""
    _check_t(t)
    g, u = np.broadcast_arrays(np.asarray(g, dtype=float), np.asarray(u, dtype=float))
    one, zero = np.ones_like(g), np.zeros_like(g)
    if scheme is Scheme.S:
        return (np.stack([one, zero, -u]), np.stack([zero, -one, -g]),
                np.stack([zero] * 3), np.stack([zero, zero, -one]), np.stack([zero] * 3))
    if scheme is Scheme.LF:
        # row2 = -(u+t)(t-g) + t^2
        return (np.stack([-u, u + t]), np.stack([-g, g - t]),
                np.stack([zero, zero]), np.stack([-one, one]), np.stack([zero, zero]))
    if scheme is Scheme.KDB:
        return (np.stack([one, zero, -(u - t)]), np.stack([zero, -one, -(g + t)]),
                np.stack([zero] * 3), np.stack([zero, zero, -one]), np.stack([zero] * 3))
    if scheme is Scheme.SU:
        s = u + g
        z = np.clip(s / t, -1.0, 1.0)
        th1, th2 = su_theta(z, 1), su_theta(z, 2)
        lo, hi = s <= -t, s >= t
        dg3 = np.where(lo, 0.0, np.where(hi, -2.0, -1 - th1))
        du3 = np.where(lo, 2.0, np.where(hi, 0.0, 1 - th1))
        c = np.where(lo | hi, 0.0, -th2 / t)
        return (np.stack([one, zero, dg3]), np.stack([zero, -one, du3]),
                np.stack([zero, zero, c]), np.stack([zero, zero, c]), np.stack([zero, zero, c]))
    if scheme is Scheme.KS:
        up = u - g >= 2 * t
        dg3 = np.where(up, -(u - t), -(g + t))
        du3 = np.where(up, -g - t, -(u - t))
        return (np.stack([one, zero, dg3]), np.stack([zero, -one, du3]),
                np.stack([zero, zero, np.where(up, 0.0, -1.0)]),
                np.stack([zero, zero, np.where(up, -1.0, 0.0)]),
                np.stack([zero, zero, np.where(up, 0.0, -1.0)]))
    raise ValueError(scheme)


def _g_all(spec, x, y):
    return np.array([evaluate(e, np.asarray(x, float), np.asarray(y, float)) for e in spec.g], dtype=float)


def phi(scheme, t, spec: ProblemSpec, i: int, x, y, u):
    """Rows of the relaxed constraint for lower-level index ``i`` (0-based)."""
    scheme = parse_scheme(scheme)
    gi = float(evaluate(spec.g[i], np.asarray(x, float), np.asarray(y, float)))
    return rows(scheme, gi, float(np.asarray(u)[i]), t)


def phi_grad(scheme, t, spec: ProblemSpec, i: int, x, y, u):
    """Partials of each row w.r.t. x (families, n), y (families, m) and u_i (families,)."""
    scheme = parse_scheme(scheme)
    d = point_data(spec, x, y, order=1)
    dg, du, *_ = row_derivs(scheme, d.g[i], float(np.asarray(u)[i]), t)
    grad_w = np.outer(dg, d.dg[i])
    return grad_w[:, :spec.n], grad_w[:, spec.n:], du


def member_D(spec: ProblemSpec, x, y, u, tol: float = 1e-9) -> bool:
    u = np.asarray(u, dtype=float)
    L = lagrangian(spec, x, y, u)[0]
    g = _g_all(spec, x, y)
    return bool(np.all(np.abs(L) <= tol) and np.all(u >= -tol) and np.all(g <= tol)
                and np.all(np.abs(u * g) <= tol))


def member_Dt(scheme, t, spec: ProblemSpec, x, y, u, tol: float = 1e-9) -> bool:
    scheme = parse_scheme(scheme)
    u = np.asarray(u, dtype=float)
    L = lagrangian(spec, x, y, u)[0]
    g = _g_all(spec, x, y)
    return bool(np.all(np.abs(L) <= tol) and np.all(rows(scheme, g, u, t) <= tol))


class ComplementarityError(ValueError):
    def __init__(self, indices):
        self.indices = tuple(indices)
        super().__init__(f"complementarity violated at lower-level indices {list(self.indices)}")


@dataclass(frozen=True)
class IndexPartition:
    eta: frozenset
    theta: frozenset
    nu: frozenset
    tol: float


def classify(g, u, tol: float = 1e-6) -> IndexPartition:
    eta, theta, nu, bad = set(), set(), set(), []
    for i, (gi, ui) in enumerate(zip(np.asarray(g, float), np.asarray(u, float))):
        if ui < -tol or gi > tol or abs(ui * gi) > tol:
            bad.append(i)
        elif ui <= tol and gi < -tol:
            eta.add(i)
        elif ui <= tol:
            theta.add(i)
        elif abs(gi) <= tol:
            nu.add(i)
        # both slightly off zero but with tiny product: assign to the smaller side
        elif ui <= -gi:
            eta.add(i)
        else:
            nu.add(i)
    if bad:
        raise ComplementarityError(bad)
    return IndexPartition(frozenset(eta), frozenset(theta), frozenset(nu), tol)


def index_sets(spec: ProblemSpec, x, y, u, tol: float = 1e-6) -> IndexPartition:
    """Split lower-level indices into eta (u=0>g), theta (u=g=0) and nu (u>0=g)."""
    return classify(_g_all(spec, x, y), u, tol)
