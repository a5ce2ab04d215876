# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled membership and excess kernels (see _kernels_py for the reference versions)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

CODE_D = -1


cdef inline bint _ok(int code, double g, double u, double t, double tol) nogil:
    cdef double s, z, third, a, b
    if code == -1:
        return u >= -tol and g <= tol and fabs(u * g) <= tol
    if code == 0:
        return g <= tol and -u <= tol and -u * g - t <= tol
    if code == 1:
        return -(u * g + t * t) <= tol and -(u + t) * (-g + t) + t * t <= tol
    if code == 2:
        return g - t <= tol and -u - t <= tol and -(u - t) * (g + t) <= tol
    if code == 3:
        if not (g <= tol and -u <= tol):
            return False
        s = u + g
        if s <= -t:
            third = 2 * u
        elif s >= t:
            third = -2 * g
        else:
            z = s / t
            third = u - g - t * (-z * z * z * z + 6 * z * z + 3) / 8
        return third <= tol
    if code == 4:
        if not (g <= tol and -u <= tol):
            return False
        a = u - t
        b = -g - t
        if u - g >= 2 * t:
            third = a * b
        else:
            third = -0.5 * (a * a + b * b)
        return third <= tol
    return False


def member_mask(int code, g, u, double t, double tol):
    if code < -1 or code > 4:
        raise ValueError(f"unknown scheme code {code}")
    cdef const double[:, ::1] G = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    if G.shape[0] != U.shape[0] or G.shape[1] != U.shape[1]:
        raise ValueError("g and u must be (K, q) arrays of equal shape")
    cdef Py_ssize_t K = G.shape[0], q = G.shape[1], i, j
    out = np.ones(K, dtype=bool)
    cdef cnp.npy_bool[::1] M = out
    with nogil:
        for i in range(K):
            for j in range(q):
                if not _ok(code, G[i, j], U[i, j], t, tol):
                    M[i] = 0
                    break
    return out


def excess(A, B):
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if A.shape[0] == 0:
        return 0.0
    if B.shape[0] == 0:
        return float("inf")
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError("point dimensions differ")
    cdef const double[:, ::1] a = A
    cdef const double[:, ::1] b = B
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1]
    cdef Py_ssize_t i, j, jj, k, start = 0, hit
    cdef double worst = 0.0, best, d2, diff
    with nogil:
        for i in range(na):
            best = INFINITY
            hit = start
            # scan from the previous nearest point; stop once a cannot raise the sup
            for jj in range(nb):
                j = start + jj
                if j >= nb:
                    j -= nb
                d2 = 0.0
                for k in range(dim):
                    diff = a[i, k] - b[j, k]
                    d2 += diff * diff
                if d2 < best:
                    best = d2
                    hit = j
                    if best <= worst:
                        break
            start = hit
            if best > worst:
                worst = best
    return sqrt(worst)
