"""Dense two-phase tableau simplex with Bland's rule, for tiny LPs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPResult", "maximize_boxed"]


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray
    value: float


def _pivot(T, r, c):
    T[r] /= T[r, c]
    for i in range(T.shape[0]):
        if i != r and T[i, c] != 0.0:
            T[i] -= T[i, c] * T[r]


def _simplex(T, basis, ncols, tol, max_iter):
    """Minimize the objective stored in the last row of T (reduced costs) over columns < ncols."""
    for _ in range(max_iter):
        cost = T[-1, :ncols]
        enter = next((j for j in range(ncols) if cost[j] < -tol), None)
        if enter is None:
            return "optimal"
        col = T[:-1, enter]
        rows = [i for i in range(len(basis)) if col[i] > tol]
        if not rows:
            return "unbounded"
        ratios = [T[i, -1] / col[i] for i in rows]
        best = min(ratios)
        leave = min((i for i, rt in zip(rows, ratios) if rt <= best + tol), key=lambda i: basis[i])
        _pivot(T, leave, enter)
        basis[leave] = enter
    return "iteration_limit"


def _solve_standard(A, b, c, tol=1e-10, max_iter=5000):
    """min c^T x  s.t.  A x = b, x >= 0."""
    m, n = A.shape
    A = A.astype(float).copy()
    b = b.astype(float).copy()
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    # phase 1 with artificial columns n..n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    status = _simplex(T, basis, n + m, tol, max_iter)
    if status != "optimal":
        return status, None
    if -T[-1, -1] > 1e-8 * max(1.0, np.abs(b).max(initial=0.0)):
        return "infeasible", None
    # drive remaining artificials out of the basis
    keep = []
    for i in range(m):
        if basis[i] >= n:
            j = next((j for j in range(n) if abs(T[i, j]) > tol), None)
            if j is None:
                continue  # redundant row
            _pivot(T, i, j)
            basis[i] = j
        keep.append(i)
    T2 = np.zeros((len(keep) + 1, n + 1))
    T2[:-1, :n] = T[keep, :n]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[i] for i in keep]
    T2[-1, :n] = c
    for i, bj in enumerate(basis):
        if T2[-1, bj] != 0.0:
            T2[-1] -= T2[-1, bj] * T2[i]
    status = _simplex(T2, basis, n, tol, max_iter)
    if status != "optimal":
        return status, None
    x = np.zeros(n)
    for i, bj in enumerate(basis):
        x[bj] = T2[i, -1]
    return "optimal", x


def maximize_boxed(c, A_eq, b_eq, ub) -> LPResult:
    """max c^T x  s.t.  A_eq x = b_eq, 0 <= x <= ub."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.asarray(b_eq, dtype=float).reshape(-1)
    ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
    k = A_eq.shape[0]
    # x + s = ub with slacks s >= 0
    A = np.zeros((k + n, 2 * n))
    A[:k, :n] = A_eq
    A[k:, :n] = np.eye(n)
    A[k:, n:] = np.eye(n)
    b = np.concatenate([b_eq, ub])
    cost = np.concatenate([-c, np.zeros(n)])
    status, z = _solve_standard(A, b, cost)
    if status != "optimal":
        return LPResult(status, np.full(n, np.nan), float("nan"))
    x = z[:n]
    return LPResult("optimal", x, float(c @ x))
