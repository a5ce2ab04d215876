"""Numpy reference kernels; used when the compiled extension is unavailable.

Scheme codes follow ``Scheme.code`` (S=0, LF=1, KDB=2, SU=3, KS=4); code -1
selects the unrelaxed complementarity system of D(x).
"""

from __future__ import annotations

import numpy as np

__all__ = ["member_mask", "excess", "CODE_D"]

CODE_D = -1
_CHUNK = 4096


def _rows_ok(code, g, u, t, tol):
    if code == CODE_D:
        return (u >= -tol) & (g <= tol) & (np.abs(u * g) <= tol)
    if code == 0:
        return (g <= tol) & (-u <= tol) & (-u * g - t <= tol)
    if code == 1:
        return (-(u * g + t * t) <= tol) & (-(u + t) * (-g + t) + t * t <= tol)
    if code == 2:
        return (g - t <= tol) & (-u - t <= tol) & (-(u - t) * (g + t) <= tol)
    if code == 3:
        s = u + g
        z = np.clip(s / t, -1.0, 1.0)
        mid = u - g - t * (-z ** 4 + 6 * z ** 2 + 3) / 8
        third = np.where(s <= -t, 2 * u, np.where(s >= t, -2 * g, mid))
        return (g <= tol) & (-u <= tol) & (third <= tol)
    if code == 4:
        a, b = u - t, -g - t
        third = np.where(u - g >= 2 * t, a * b, -0.5 * (a * a + b * b))
        return (g <= tol) & (-u <= tol) & (third <= tol)
    raise ValueError(f"unknown scheme code {code}")


def member_mask(code: int, g, u, t: float, tol: float) -> np.ndarray:
    """Row-wise test that every relaxed constraint holds, for arrays g, u of shape (K, q)."""
    g = np.ascontiguousarray(g, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    if g.shape != u.shape or g.ndim != 2:
        raise ValueError("g and u must be (K, q) arrays of equal shape")
    with np.errstate(invalid="ignore", over="ignore"):
        ok = _rows_ok(code, g, u, float(t), float(tol))
    return ok.all(axis=1)


def excess(A, B) -> float:
    """sup_{a in A} min_{b in B} |a - b| with e(empty, B) = 0 and e(A, empty) = inf."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] == 0:
        return 0.0
    if B.shape[0] == 0:
        return float("inf")
    if A.shape[1] != B.shape[1]:
        raise ValueError("point dimensions differ")
    worst = 0.0
    # direct differences keep coincident points at exactly zero distance
    for lo in range(0, A.shape[0], 256):
        a = A[lo:lo + 256]
        best = np.full(a.shape[0], np.inf)
        for blo in range(0, B.shape[0], _CHUNK):
            diff = a[:, None, :] - B[None, blo:blo + _CHUNK, :]
            np.minimum(best, np.einsum("ijk,ijk->ij", diff, diff).min(axis=1), out=best)
        worst = max(worst, float(best.max()))
    return float(np.sqrt(worst))
