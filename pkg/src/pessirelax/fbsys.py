"""Smoothed Fischer-Burmeister system of a relaxed KKT reformulation and its Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .problem import ProblemSpec, point_data
from .relax import Scheme, parse_scheme, row_derivs, row_grads, rows

__all__ = ["IterateLayout", "fb", "fb_grad", "big_phi", "residual", "jacobian", "System"]


@dataclass(frozen=True)
class IterateLayout:
    scheme: Scheme
    n: int
    m: int
    p: int
    q: int

    @classmethod
    def of(cls, spec: ProblemSpec, scheme) -> "IterateLayout":
        return cls(parse_scheme(scheme), spec.n, spec.m, spec.p, spec.q)

    @property
    def families(self) -> int:
        return self.scheme.families

    @property
    def N(self) -> int:
        return self.n + 2 * self.m + self.q + self.p + self.families * self.q

    def slices(self) -> dict[str, slice]:
        return dict(self._slices)

    @cached_property
    def _slices(self) -> dict[str, slice]:
        out, pos = {}, 0
        sizes = [("x", self.n), ("y", self.m), ("u", self.q), ("alpha", self.p), ("beta", self.m)]
        sizes += [(name, self.q) for name in self.scheme.family_names]
        if self.scheme is Scheme.LF:
            sizes.insert(6, ("mu", 0))
        for name, size in sizes:
            out[name] = slice(pos, pos + size)
            pos += size
        return out

    def split(self, z) -> dict[str, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.N,):
            raise ValueError(f"iterate must have length {self.N}, got {z.shape}")
        return {k: z[s] for k, s in self._slices.items()}

    def lam(self, z) -> np.ndarray:
        """Relaxed multipliers stacked by family, shape (families, q)."""
        z = np.asarray(z, dtype=float)
        start = self.n + 2 * self.m + self.q + self.p
        return z[start:].reshape(self.families, self.q)

    def join(self, **parts) -> np.ndarray:
        z = np.zeros(self.N)
        for k, s in self.slices().items():
            if k in parts:
                z[s] = parts[k]
        return z


def fb(a, b, eps=0.0):
    """sqrt(a^2 + b^2 + 2 eps) - (a + b); zero iff a, b > 0 and ab = eps (eps > 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.sqrt(a * a + b * b + 2 * eps)
    s = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        # rationalized branch avoids cancellation when a + b > 0
        stable = 2 * (eps - a * b) / (r + s)
    out = np.where(s > 0, stable, r - s)
    return out if out.ndim else float(out)


def fb_grad(a, b, eps=0.0):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.sqrt(a * a + b * b + 2 * eps)
    safe = np.where(r > 0, r, 1.0)
    da = np.where(r > 0, a / safe, 0.0) - 1.0
    db = np.where(r > 0, b / safe, 0.0) - 1.0
    return da, db


def big_phi(scheme, t, g, u, lam):
    """Phi_i = sum_f lam_f,i * row_f(g_i, u_i) with its partials.

    Returns (Phi, dPhi/dg, dPhi/du, rows) where ``rows`` equals dPhi/dlam.
    """
    scheme = parse_scheme(scheme)
    c = rows(scheme, g, u, t)
    dg, du = row_grads(scheme, g, u, t)
    lam = np.asarray(lam, dtype=float)
    return (lam * c).sum(0), (lam * dg).sum(0), (lam * du).sum(0), c


class System:
    """Residual and Jacobian of the smoothed system for fixed (spec, scheme, t, eps)."""

    def __init__(self, spec: ProblemSpec, scheme, t: float, eps: float):
        if not t > 0:
            raise ValueError("t must be positive")
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        self.spec = spec
        self.layout = IterateLayout.of(spec, scheme)
        self.scheme = self.layout.scheme
        self.t = float(t)
        self.eps = float(eps)

    def _parts(self, z, order):
        lay = self.layout
        z = np.asarray(z, dtype=float)
        if z.shape != (lay.N,) or not np.all(np.isfinite(z)):
            raise ValueError("iterate must be a finite vector of the layout length")
        v = lay.split(z)
        d = point_data(self.spec, v["x"], v["y"], order=order)
        return v, lay.lam(z), d

    def residual(self, z) -> np.ndarray:
        v, lam, d = self._parts(z, 2)
        n, spec = self.spec.n, self.spec
        u, alpha, beta = v["u"], v["alpha"], v["beta"]
        _, Pg, Pu, c = big_phi(self.scheme, self.t, d.g, u, lam)
        k = n + spec.m
        DL = d.d2f[n:] + (u @ d.d2g.reshape(spec.q, -1)).reshape(k, k)[n:]   # (m, k)
        L = d.df[n:] + u @ d.dg[:, n:]
        Rw = d.dF - DL.T @ beta - Pg @ d.dg
        Rw[:n] += d.dG.T @ alpha
        R3 = -d.dg[:, n:] @ beta - Pu
        R5 = fb(alpha, -d.G, self.eps)
        R6 = fb(lam, -c, self.eps).reshape(-1)
        return np.concatenate([Rw, R3, L, np.atleast_1d(R5), R6])

    def jacobian(self, z) -> np.ndarray:
        v, lam, d = self._parts(z, 3)
        lay, spec = self.layout, self.spec
        n, m, p, q, F = spec.n, spec.m, spec.p, spec.q, lay.families
        k = n + m
        u, alpha, beta = v["u"], v["alpha"], v["beta"]
        c = rows(self.scheme, d.g, u, self.t)
        cg, cu, cgg, cgu, cuu = row_derivs(self.scheme, d.g, u, self.t)
        Pg, Pu = (lam * cg).sum(0), (lam * cu).sum(0)
        Pgg, Pgu, Puu = (lam * cgg).sum(0), (lam * cgu).sum(0), (lam * cuu).sum(0)
        H = d.d2f + np.tensordot(u, d.d2g, axes=1)
        DL = H[n:, :]
        T3 = d.d3f + np.tensordot(u, d.d3g, axes=1)          # (k, k, k)
        gy = d.dg[:, n:]                                      # (q, m)
        # d/dw of sum_l beta_l grad_w g_i[n+l] -> (q, k)
        gyb_w = np.einsum("l,ilk->ik", beta, d.d2g[:, n:, :])

        sl = lay.slices()
        rw, r3 = slice(0, k), slice(k, k + q)
        r4 = slice(k + q, k + q + m)
        r5 = slice(r4.stop, r4.stop + p)
        r6 = slice(r5.stop, r5.stop + F * q)
        cw = slice(0, k)
        J = np.zeros((lay.N, lay.N))

        # block w (x- and y-stationarity)
        Jww = d.d2F - np.einsum("l,lij->ij", beta, T3[n:]) \
            - np.einsum("i,ijk->jk", Pg, d.d2g) \
            - np.einsum("i,ij,ik->jk", Pgg, d.dg, d.dg)
        Jww[:n, :n] += np.einsum("j,jab->ab", alpha, d.d2G)
        J[rw, cw] = Jww
        J[rw, sl["u"]] = (-gyb_w - Pgu[:, None] * d.dg).T
        J[0:n, sl["alpha"]] = d.dG.T
        J[rw, sl["beta"]] = -DL.T
        lam_cols = slice(sl["beta"].stop, lay.N)
        J[rw, lam_cols] = -(cg[:, :, None] * d.dg[None, :, :]).reshape(F * q, k).T

        # block 3
        J[r3, cw] = -gyb_w - Pgu[:, None] * d.dg
        J[r3, sl["u"]] = np.diag(-Puu)
        J[r3, sl["beta"]] = -gy
        for f in range(F):
            J[r3, lam_cols.start + f * q: lam_cols.start + (f + 1) * q] = np.diag(-cu[f])

        # block 4: L
        J[r4, cw] = DL
        J[r4, sl["u"]] = gy.T

        # block 5: FB(alpha, -G)
        if p:
            da, db = fb_grad(alpha, -d.G, self.eps)
            J[r5, sl["alpha"]] = np.diag(da)
            J[r5, 0:n] = -db[:, None] * d.dG

        # block 6: FB(lam, -c)
        da, db = fb_grad(lam, -c, self.eps)          # (F, q)
        J[r6, lam_cols] = np.diag(da.reshape(-1))
        J[r6, cw] = (-(db * cg)[:, :, None] * d.dg[None, :, :]).reshape(F * q, k)
        J[r6, sl["u"]] = np.concatenate([np.diag(-db[f] * cu[f]) for f in range(F)], axis=0)
        return J


def residual(scheme, t, eps, spec, z):
    return System(spec, scheme, t, eps).residual(z)


def jacobian(scheme, t, eps, spec, z):
    return System(spec, scheme, t, eps).jacobian(z)
