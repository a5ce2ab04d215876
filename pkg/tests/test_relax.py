import numpy as np
import pytest

from pessirelax.relax import (ComplementarityError, Scheme, index_sets, member_D, member_Dt,
                              parse_scheme, phi, phi_grad, row_derivs, row_grads, rows, su_theta)

ALL = list(Scheme)


def test_parse_scheme_aliases():
    assert parse_scheme("scholtes") is Scheme.S
    assert parse_scheme(" KS ") is Scheme.KS
    assert parse_scheme(Scheme.LF) is Scheme.LF
    with pytest.raises(ValueError, match="unknown scheme"):
        parse_scheme("nope")


def test_family_counts():
    assert [s.families for s in ALL] == [3, 2, 3, 3, 3]
    for s in ALL:
        assert rows(s, 0.1, 0.2, 0.5).shape == (s.families,)


def test_t_must_be_positive():
    with pytest.raises(ValueError):
        rows(Scheme.S, 0.0, 0.0, 0.0)


def test_scholtes_boundary_example(linear):
    # g = y - 1 = -0.5 at y = 0.5, u = 1
    r = phi(Scheme.S, 0.5, linear, 0, [0.3], [0.5], [1.0])
    assert list(r) == [-0.5, -1.0, 0.0]


def test_ks_upper_branch_example():
    r = rows(Scheme.KS, -2.0, 2.0, 1.0)
    assert r[2] == 1.0


def test_kdb_box_example(toy):
    # x = 0.75, t = 0.25: (y, u1) in [-t, t] x [x - t, x + t], u2 = 0 keeps L = x - u1 + u2 = 0 only at u1 = x
    assert member_Dt(Scheme.KDB, 0.25, toy, [0.75], [0.0], [0.75, 0.0])
    assert member_Dt(Scheme.KDB, 0.25, toy, [0.75], [0.25], [0.75, 0.0])
    assert not member_Dt(Scheme.KDB, 0.25, toy, [0.75], [0.3], [0.75, 0.0])


def test_ks_du_upper_branch(linear):
    g, u, t = -1.0, 2.0, 0.5
    dg, du = row_grads(Scheme.KS, g, u, t)
    assert du[2] == -g - t


def test_scholtes_grad_example(linear):
    x, y, u = [0.4], [0.3], [0.6]
    gx, gy, gu = phi_grad(Scheme.S, 0.2, linear, 0, x, y, u)
    assert gu[2] == pytest.approx(-(0.3 - 1.0))
    assert gy[2, 0] == pytest.approx(-0.6 * 1.0)


def test_su_outer_branch():
    g, u, t = -0.1, 0.9, 0.3       # u + g = 0.8 >= t
    r = rows(Scheme.SU, g, u, t)
    dg, du = row_grads(Scheme.SU, g, u, t)
    assert r[2] == pytest.approx(-2 * g)
    assert du[2] == 0.0 and dg[2] == -2.0


def test_su_theta_properties():
    for z in (-1.0, 1.0):
        assert su_theta(z) == 1.0
        assert su_theta(z, 1) == z
        assert su_theta(z, 2) == 0.0
    zs = np.linspace(-0.999, 0.999, 101)
    assert np.all(su_theta(zs, 2) > 0)


def test_member_D_examples(linear):
    assert member_D(linear, [0.5], [1.0], [0.5])
    assert member_D(linear, [0.0], [0.3], [0.0])
    assert not member_D(linear, [0.5], [0.9], [0.5])


def test_member_Dt_examples(toy):
    assert member_Dt(Scheme.KDB, 0.5, toy, [0.0], [0.5], [0.2, 0.2])
    assert member_D(toy, [0.0], [0.0], [0.0, 0.0])
    assert not member_Dt(Scheme.KDB, 0.5, toy, [0.0], [0.0], [0.0, 0.0])


@pytest.mark.parametrize("scheme", [Scheme.S, Scheme.LF, Scheme.SU, Scheme.KS])
def test_D_inside_relaxation(scheme, toy, linear):
    pts = [(toy, [0.0], [y], [0.0, 0.0]) for y in np.linspace(0, 1, 11)]
    pts += [(toy, [x], [0.0], [x, 0.0]) for x in (0.2, 0.7, 1.0)]
    pts += [(linear, [x], [1.0], [x]) for x in (0.1, 0.5, 1.0)]
    pts += [(linear, [0.0], [y], [0.0]) for y in (-3.0, 0.0, 1.0)]
    for spec, x, y, u in pts:
        assert member_D(spec, x, y, u)
        for t in (1e-3, 0.1, 0.5):
            assert member_Dt(scheme, t, spec, x, y, u), (spec.name, x, y, u, t)


def test_index_sets_examples(linear):
    p = index_sets(linear, [0.5], [1.0], [0.5])
    assert p.nu == {0} and not p.eta and not p.theta
    p = index_sets(linear, [0.0], [0.3], [0.0])
    assert p.eta == {0}
    p = index_sets(linear, [0.0], [1.0], [0.0])
    assert p.theta == {0}
    with pytest.raises(ComplementarityError):
        index_sets(linear, [0.5], [0.9], [0.5])


def test_index_sets_partition_on_members(toy, rng):
    # D(0) = [0,1] x {(0,0)}; D(x) = {(0, (x, 0))} for x > 0
    pts = [(0.0, y, [0.0, 0.0]) for y in rng.uniform(0, 1, 100)] + [(0.0, 0.0, [0.0, 0.0]),
                                                                    (0.0, 1.0, [0.0, 0.0])]
    pts += [(x, 0.0, [x, 0.0]) for x in rng.uniform(0, 1, 100)]
    for x, y, u in pts:
        assert member_D(toy, [x], [y], u)
        p = index_sets(toy, [x], [y], u)
        assert not (p.eta & p.theta or p.eta & p.nu or p.theta & p.nu)
        assert p.eta | p.theta | p.nu == {0, 1}


def _away_from_kinks(scheme, g, u, t, margin=1e-3):
    if scheme is Scheme.SU:
        return abs(abs(u + g) - t) > margin
    if scheme is Scheme.KS:
        return abs(u - g - 2 * t) > margin
    return True


@pytest.mark.parametrize("scheme", ALL)
def test_row_derivatives_match_fd(scheme, rng):
    h = 1e-6
    checked = 0
    while checked < 200:
        g, u, t = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.05, 0.8)
        if not _away_from_kinks(scheme, g, u, t):
            continue
        checked += 1
        dg, du, dgg, dgu, duu = row_derivs(scheme, g, u, t)
        fd_g = (rows(scheme, g + h, u, t) - rows(scheme, g - h, u, t)) / (2 * h)
        fd_u = (rows(scheme, g, u + h, t) - rows(scheme, g, u - h, t)) / (2 * h)
        assert np.allclose(dg, fd_g, rtol=1e-6, atol=1e-6)
        assert np.allclose(du, fd_u, rtol=1e-6, atol=1e-6)
        a, b = row_grads(scheme, g, u, t)
        assert np.array_equal(a, dg) and np.array_equal(b, du)
        fd_gg = (row_derivs(scheme, g + h, u, t)[0] - row_derivs(scheme, g - h, u, t)[0]) / (2 * h)
        fd_gu = (row_derivs(scheme, g, u + h, t)[0] - row_derivs(scheme, g, u - h, t)[0]) / (2 * h)
        fd_uu = (row_derivs(scheme, g, u + h, t)[1] - row_derivs(scheme, g, u - h, t)[1]) / (2 * h)
        assert np.allclose(dgg, fd_gg, atol=1e-5)
        assert np.allclose(dgu, fd_gu, atol=1e-5)
        assert np.allclose(duu, fd_uu, atol=1e-5)


@pytest.mark.parametrize("scheme", ALL)
def test_phi_grad_matches_fd(scheme, toy, rng):
    h = 1e-6
    for _ in range(50):
        x, y, u = [rng.uniform(0, 1)], [rng.uniform(-0.5, 1.5)], rng.uniform(-0.5, 1.5, 2)
        t = rng.uniform(0.1, 0.5)
        for i in range(2):
            gi = -y[0] if i == 0 else y[0] - 1
            if not _away_from_kinks(scheme, gi, u[i], t):
                continue
            gx, gy, gu = phi_grad(scheme, t, toy, i, x, y, u)
            fy = (phi(scheme, t, toy, i, x, [y[0] + h], u) - phi(scheme, t, toy, i, x, [y[0] - h], u)) / (2 * h)
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            fu = (phi(scheme, t, toy, i, x, y, up) - phi(scheme, t, toy, i, x, y, um)) / (2 * h)
            assert np.allclose(gy[:, 0], fy, rtol=1e-6, atol=1e-6)
            assert np.allclose(gu, fu, rtol=1e-6, atol=1e-6)
            assert np.all(gx == 0.0)


@pytest.mark.parametrize("scheme", [Scheme.SU, Scheme.KS])
def test_c1_across_branch_boundaries(scheme):
    t = 0.3
    for g in np.linspace(-1, 0, 7):
        u = (t - g) if scheme is Scheme.SU else (2 * t + g)
        for eps in (1e-9,):
            lo = np.array(row_grads(scheme, g, u - eps, t))
            hi = np.array(row_grads(scheme, g, u + eps, t))
            assert np.allclose(lo, hi, atol=1e-6)
            assert np.allclose(rows(scheme, g, u - eps, t), rows(scheme, g, u + eps, t), atol=1e-8)
