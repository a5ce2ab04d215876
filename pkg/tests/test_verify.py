import itertools
import json
import math

import numpy as np
import pytest

from pessirelax.fbsys import IterateLayout
from pessirelax.problem import loads
from pessirelax.relax import Scheme
from pessirelax.verify import (StationarityCertificate, _mfcq_lp, accuracy, certify, check_C,
                               check_regularity, eoc, feasibility, fit_multipliers,
                               lambda_ec_member, map_multipliers)

QUAD = """
name = "quad"
n = 1
m = 1
p = 1
q = 1
F = "(x1 - 0.5)^2 + y1^2"
G = ["x1 - 5"]
f = "y1^2"
g = ["y1 - 5"]
"""

TWIN = """
name = "twin"
n = 1
m = 1
p = 2
q = 1
F = "x1 + y1"
G = ["x1 - 1", "1 - x1"]
f = "y1^2"
g = ["y1 - 5"]
"""


def test_feasibility_examples(linear):
    assert feasibility(linear, [0.5], [1.0], [0.5]).feasible
    v = feasibility(linear, [0.0], [0.3], [-0.01])
    assert not v.feasible and "u_1 < 0" in v.violations
    assert feasibility(linear, [0.0], [0.3], [-1e-5]).feasible
    v = feasibility(linear, [0.5], [0.9], [0.5])
    assert "u_1 g_1 != 0" in v.violations


def _zeta(spec, scheme, **kw):
    return IterateLayout.of(spec, scheme).join(**kw)


def test_map_zero_relaxed_multipliers(toy):
    z = _zeta(toy, Scheme.KDB, x=[0.2], y=[0.0], u=[0.2, 0.0], alpha=[0, 0], beta=[0.7])
    mm = map_multipliers(toy, Scheme.KDB, z, 0.1)
    assert np.all(mm.gamma == 0) and list(mm.beta) == [-0.7]


def test_map_scholtes_delta_contribution(linear):
    # g = 0 (y = 1), u = 0.5 > 0, delta = 2 on the active product row: gamma~ = delta * u
    t = 1e-3
    z = _zeta(linear, Scheme.S, x=[0.5], y=[1.0], u=[0.5], delta=[2.0])
    mm = map_multipliers(linear, Scheme.S, z, t, tol=1e-2)
    assert mm.gamma[0] == pytest.approx(2.0 * 0.5)


def test_map_ks_upper_branch(linear):
    t = 0.1
    # u - g >= 2t with the product row active: (u - t)(-g - t) = 0 at g = -t
    z = _zeta(linear, Scheme.KS, x=[0.5], y=[1 - t], u=[0.5], delta=[3.0])
    mm = map_multipliers(linear, Scheme.KS, z, t)
    assert mm.contributions["delta"][0] == pytest.approx(3.0 * (0.5 - t))


def test_map_scale_consistency(toy, rng):
    for s in Scheme:
        lay = IterateLayout.of(toy, s)
        z = rng.uniform(0, 1, lay.N)
        base = map_multipliers(toy, s, z, 0.3, tol=10.0)   # every row counted active
        z2 = z.copy()
        start = lay.slices()["beta"].stop
        z2[start:] *= 3.0
        scaled = map_multipliers(toy, s, z2, 0.3, tol=10.0)
        assert np.allclose(scaled.gamma, 3.0 * base.gamma)
        assert np.array_equal(scaled.gamma != 0, base.gamma != 0)


def test_check_C_unconstrained_stationary_point():
    spec = loads(QUAD)
    c = check_C(spec, [0.5], [0.0], [0.0], [0.0], [0.0], [0.0])
    assert c.is_C and c.theta == []
    assert c.flavor == "S"   # theta empty: C, M and S coincide


def test_check_C_sign_violation(linear):
    # x = 0, y = 1, u = 0: biactive index; gamma = 1 with grad_y g beta = -1
    c = check_C(linear, [0.0], [1.0], [0.0], [1.0, 0.0], [-1.0], [1.0])
    assert c.theta == [0] and c.st8_products == [-1.0]
    assert c.flavor == "none"


def test_flavors_nest(linear, rng):
    for _ in range(300):
        a = rng.uniform(0, 2, 2)
        b, g = rng.normal(size=1), rng.normal(size=1)
        c = check_C(linear, [0.0], [1.0], [0.0], a, b, g, tol=10.0)
        if c.flavor == "S":
            assert c.s9b and c.s7b
        if c.flavor in ("M", "S"):
            assert c.s7b
        if c.s9b:
            assert c.s7b


def test_certificate_json_round_trip(linear):
    c = check_C(linear, [0.0], [1.0], [0.0], [1.0, 0.0], [-1.0], [1.0])
    again = StationarityCertificate.from_dict(json.loads(c.to_json()))
    assert again == c


def test_fit_multipliers_finds_S_on_linear(linear):
    # (x, y, u) = (0, 1, 0): the pessimistic solution
    best = max((check_C(linear, [0.0], [1.0], [0.0], a, b, g, method="least_squares")
                for a, b, g in fit_multipliers(linear, [0.0], [1.0], [0.0])),
               key=lambda c: "none C M S".split().index(c.flavor))
    assert best.flavor == "S"


def test_certify_from_relaxed_iterate(linear):
    lay = IterateLayout.of(linear, Scheme.S)
    z = lay.join(x=[0.0], y=[1.0], u=[0.0], alpha=[1.0, 0.0], beta=[1.0])
    c = certify(linear, Scheme.S, z, 1e-3)
    assert c.is_C


def test_lambda_ec_examples(linear):
    x, y, u = [0.5], [1.0], [0.5]
    assert lambda_ec_member(linear, x, y, u, [0.0, 0.0], [0.0], [0.0])
    assert not lambda_ec_member(linear, [0.0], [0.3], [0.0], [0.0, 0.0], [0.0], [1.0])


def test_lambda_ec_constructed(linear):
    # at (0.5, 1, 0.5) the single index is in nu, so beta = 0; solve v + dg^T gamma = 0
    x, y, u = [0.5], [1.0], [0.5]
    dg = np.array([[0.0, 1.0]])
    v = np.array([0.0, -1.2])
    gamma = np.linalg.lstsq(dg.T, -v, rcond=None)[0]
    assert lambda_ec_member(linear, x, y, u, v, [0.0], gamma)
    assert not lambda_ec_member(linear, x, y, u, v, [0.0], gamma + 0.2)
    assert not lambda_ec_member(linear, x, y, u, v, [0.5], gamma)   # beta must vanish on nu


def test_regularity_examples(linear):
    assert check_regularity(linear, [0.0], [0.0], "upper")       # one active, gradient -1
    assert check_regularity(linear, [0.5], [0.0], "upper")       # none active
    assert check_regularity(linear, [0.5], [1.0], "lower")
    twin = loads(TWIN)
    assert not check_regularity(twin, [1.0], [0.0], "upper")     # gradients 1 and -1
    with pytest.raises(ValueError):
        check_regularity(linear, [0.0], [0.0], "middle")


def _brute_regular(grads, step=0.02):
    p = grads.shape[0]
    best = math.inf
    ticks = int(round(1 / step))
    for combo in itertools.product(range(ticks + 1), repeat=p - 1):
        if sum(combo) > ticks:
            continue
        a = np.array(list(combo) + [ticks - sum(combo)]) / ticks
        best = min(best, float(np.linalg.norm(a @ grads)))
    return best


def test_regularity_lp_matches_brute_force(rng):
    agree = 0
    for _ in range(60):
        p = int(rng.integers(1, 4))
        G = rng.normal(size=(p, 2))
        if rng.random() < 0.4 and p >= 2:
            a = rng.uniform(0.2, 1, p)
            G[-1] = -(a[:-1] @ G[:-1]) / a[-1]         # force a positive null combination
        gap = _brute_regular(G)
        lp_regular = _mfcq_lp(G)
        if gap > 0.05:
            assert lp_regular
            agree += 1
        elif gap < 1e-9 or _brute_regular(G, 0.01) < 1e-9:
            assert not lp_regular
            agree += 1
    assert agree >= 40


def test_eoc_examples():
    assert eoc([1e-2, 1e-4, 1e-8]) == 2.0
    assert eoc([1e-1, 1e-2, 1e-3]) == 2.0
    assert eoc([1e-3, 1.0, 1e-2]) is None
    assert eoc([1e-3, 0.0, 0.0]) is None
    assert eoc([1e-3, 1e-4]) is None
    assert eoc([1e-3, float("nan"), 1e-5]) is None


@pytest.mark.parametrize("a, r", [(1.0, 2.0), (0.5, 1.5), (2.0, 1.2), (1.3, 3.0)])
def test_eoc_geometric_in_exponent(a, r):
    hist = [10.0 ** (-a * r ** k) for k in range(1, 5)]
    assert abs(eoc(hist) - r) < 1e-12


def test_accuracy():
    assert accuracy(1.5, 1.5) == 0.0
    assert accuracy(1.0, 1.5) == 0.5
    assert accuracy(1.0, None) is None
    xbar = 0.37
    assert accuracy(xbar + 1, xbar + 1) == 0.0
