import numpy as np
import pytest

from pessirelax.fbsys import IterateLayout, System, big_phi, fb, fb_grad, jacobian, residual
from pessirelax.problem import loads
from pessirelax.relax import Scheme, rows

ALL = list(Scheme)

ZERO = """
name = "zero"
n = 1
m = 1
p = 1
q = 1
F = "0"
G = ["x1 - 5"]
f = "0"
g = ["y1 - 5"]
"""

NL = """
name = "nl"
n = 2
m = 2
p = 1
q = 2
F = "x1^2 + sin(y1)*x2 - y2^3"
G = ["x1 + x2 - 2"]
f = "exp(x1*y1/4) + y2^2*x2 + cos(y1 - y2)"
g = ["y1^2 + y2^2 - 4", "x1*y1 - y2 - 1"]
"""


def test_fb_examples():
    assert fb(1.0, 1.0, 1.0) == 0.0
    assert fb(3.0, 0.0, 0.0) == 0.0
    assert fb(0.0, 0.0, 0.5) == 1.0
    da, db = fb_grad(1.0, 1.0, 1.0)
    assert da == -0.5 and db == -0.5


def test_fb_zero_pattern_at_eps_zero():
    vals = [-2.0, -0.5, 0.0, 0.5, 2.0]
    for a in vals:
        for b in vals:
            root = a >= 0 and b >= 0 and a * b == 0
            assert (fb(a, b, 0.0) == 0.0) == root, (a, b)


def test_fb_roots_are_perturbed_complementarity(rng):
    # converse direction: roots found numerically satisfy a, b > 0 and ab = eps
    for _ in range(200):
        a, eps = rng.uniform(0.01, 5), rng.uniform(1e-6, 2)
        lo, hi = 0.0, 100.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if fb(a, mid, eps) > 0:
                lo = mid
            else:
                hi = mid
        b = 0.5 * (lo + hi)
        assert abs(fb(a, b, eps)) < 1e-12
        assert b > 0 and abs(a * b - eps) < 1e-9


def test_layout_sizes(toy, linear):
    for spec in (toy, linear, loads(NL)):
        for s in ALL:
            lay = IterateLayout.of(spec, s)
            assert lay.N == spec.n + spec.m + spec.q + spec.p + spec.m + s.families * spec.q
            z = np.arange(lay.N, dtype=float)
            parts = lay.split(z)
            assert np.array_equal(lay.join(**parts), z)
            assert residual(s, 0.1, 1e-3, spec, np.ones(lay.N)).shape == (lay.N,)
            if s is Scheme.LF:
                assert parts["mu"].size == 0


def test_big_phi_partials_and_rows(rng):
    for s in ALL:
        g, u = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4)
        lam = rng.uniform(0, 2, (s.families, 4))
        Phi, Pg, Pu, c = big_phi(s, 0.3, g, u, lam)
        assert np.array_equal(c, rows(s, g, u, 0.3))
        assert np.allclose(Phi, (lam * c).sum(0))
        Phi0, Pg0, Pu0, _ = big_phi(s, 0.3, g, u, np.zeros_like(lam))
        assert np.all(Phi0 == 0) and np.all(Pg0 == 0) and np.all(Pu0 == 0)


def test_scholtes_lambda_columns():
    g, u, t = np.array([-0.4]), np.array([0.7]), 0.2
    _, _, _, c = big_phi(Scheme.S, t, g, u, np.zeros((3, 1)))
    assert c[0, 0] == g[0]
    assert c[2, 0] == -(u[0] * g[0] + t)


def test_zero_problem_blocks_vanish():
    spec = loads(ZERO)
    for s in ALL:
        lay = IterateLayout.of(spec, s)
        z = lay.join(x=[0.3], y=[0.2])
        r = residual(s, 0.1, 1e-3, spec, z)
        k = spec.n + spec.m
        assert np.all(r[:k + spec.q + spec.m] == 0.0)


def test_linear_block_four(linear):
    lay = IterateLayout.of(linear, Scheme.S)
    k = 2
    for x, u in [(0.3, 0.3), (0.3, 0.8)]:
        z = lay.join(x=[x], y=[0.5], u=[u], alpha=[1, 1], beta=[1], gamma=[1], mu=[1], delta=[1])
        r = residual(Scheme.S, 0.1, 1e-3, linear, z)
        assert r[k + linear.q] == pytest.approx(-x + u, abs=1e-15)


def test_nan_rejected(toy):
    lay = IterateLayout.of(toy, Scheme.S)
    z = np.ones(lay.N)
    z[2] = np.nan
    with pytest.raises(ValueError):
        residual(Scheme.S, 0.1, 1e-3, toy, z)
    with pytest.raises(ValueError):
        System(toy, Scheme.S, 0.0, 1e-3)


def _interior(spec, scheme, t, rng, margin=1e-3):
    lay = IterateLayout.of(spec, scheme)
    sys_ = System(spec, scheme, t, 1e-3)
    while True:
        z = rng.uniform(-1, 1, lay.N)
        sl = lay.slices()
        z[sl["x"]] = rng.uniform(0.1, 0.9, spec.n)
        v = lay.split(z)
        d = sys_._parts(z, 1)[2]
        g, u = d.g, v["u"]
        if scheme is Scheme.SU and np.any(np.abs(np.abs(u + g) - t) < margin):
            continue
        if scheme is Scheme.KS and np.any(np.abs(u - g - 2 * t) < margin):
            continue
        return z, sys_


@pytest.mark.parametrize("scheme", ALL)
@pytest.mark.parametrize("which", ["toy", "linear", "nl"])
def test_jacobian_matches_fd(scheme, which, toy, linear, rng):
    spec = {"toy": toy, "linear": linear, "nl": loads(NL)}[which]
    h = 1e-6
    for _ in range(10):
        z, sys_ = _interior(spec, scheme, 0.3, rng)
        J = sys_.jacobian(z)
        fd = np.empty_like(J)
        for j in range(z.size):
            e = np.zeros_like(z)
            e[j] = h
            fd[:, j] = (sys_.residual(z + e) - sys_.residual(z - e)) / (2 * h)
        err = np.abs(J - fd) / np.maximum(1.0, np.abs(J))
        assert err.max() < 1e-5, (scheme, which, np.unravel_index(err.argmax(), err.shape))


def test_functional_wrappers_agree(toy, rng):
    z, sys_ = _interior(toy, Scheme.KDB, 0.3, rng)
    assert np.array_equal(residual(Scheme.KDB, 0.3, 1e-3, toy, z), sys_.residual(z))
    assert np.array_equal(jacobian(Scheme.KDB, 0.3, 1e-3, toy, z), sys_.jacobian(z))
