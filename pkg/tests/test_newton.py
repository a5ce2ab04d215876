import numpy as np
import pytest

from pessirelax.expr import ExprDomainError
from pessirelax.newton import NewtonOptions, _direction, solve


def test_scalar_quadratic():
    z, st = solve(lambda z: z ** 2 - 4, lambda z: np.diag(2 * z), [3.0])
    assert st.termination == "converged"
    assert z[0] == pytest.approx(2.0, abs=1e-9)
    assert st.iterations <= 8


def test_quadratic_rate_near_root():
    _, st = solve(lambda z: z ** 2 - 4, lambda z: np.diag(2 * z), [3.0],
                  NewtonOptions(residual_tol=1e-15))
    h = [v for v in st.residual_history if v > 0]
    ratios = [b / a ** 2 for a, b in zip(h, h[1:]) if a < 1e-1]
    assert ratios and max(ratios) < 1.0


def test_linear_system_one_step(rng):
    A = rng.normal(size=(6, 6)) + 6 * np.eye(6)
    b = rng.normal(size=6)
    z, st = solve(lambda z: A @ z - b, lambda z: A, np.zeros(6))
    assert st.iterations == 1 and st.termination == "converged"
    assert np.allclose(A @ z, b)


def test_armijo_monotone_merit():
    def F(z):
        return np.array([np.sin(3 * z[0]) + z[0] ** 3 - z[1], z[0] * z[1] - 0.3])

    def J(z):
        return np.array([[3 * np.cos(3 * z[0]) + 3 * z[0] ** 2, -1.0], [z[1], z[0]]])

    opts = NewtonOptions(residual_tol=1e-12)
    _, st = solve(F, J, [2.0, -1.5], opts)
    h = st.residual_history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_deterministic(rng):
    def F(z):
        return np.tanh(z) + 0.1 * z - np.array([0.5, -0.2, 0.1])

    def J(z):
        return np.diag(1 - np.tanh(z) ** 2 + 0.1)

    z0 = rng.normal(size=3) * 3
    a, sa = solve(F, J, z0)
    b, sb = solve(F, J, z0)
    assert np.array_equal(a, b) and sa.residual_history == sb.residual_history


def test_domain_errors_reject_steps():
    # sqrt(z) - 1 = 0 from z = 0.01: the full Newton step stays feasible, but a
    # residual that raises for z < 0 must never leak out of the line search
    def F(z):
        if z[0] < 0:
            raise ExprDomainError("negative")
        return np.sqrt(z) - 1 + 5 * (z - 1)

    def J(z):
        return np.diag(0.5 / np.sqrt(z) + 5)

    z, st = solve(F, J, [4.0])
    assert st.termination == "converged" and z[0] == pytest.approx(1.0)


def _sing_F(z):
    return np.array([z[0] ** 2 + z[1] - 3, z[1] - 2])


def _sing_J(z):
    return np.array([[2 * z[0], 1.0], [0.0, 1.0]])


def test_tikhonov_direction_on_singular_jacobian():
    J, r = _sing_J([0.0, 0.0]), _sing_F([0.0, 0.0])
    d, reg = _direction(J, r, 1e-8)
    assert reg and np.all(np.isfinite(d))
    nu = 1e-8
    assert np.allclose((J + nu * np.eye(2)) @ d, -r, rtol=1e-6)


def test_singular_start_needs_short_newton_steps():
    # J is singular at the start and the merit is flat in z0 there; only a short
    # step along the huge Tikhonov direction leaves the saddle
    z, st = solve(_sing_F, _sing_J, [0.0, 0.0], NewtonOptions(newton_min_step=1e-12))
    assert st.termination == "converged" and st.regularized_steps >= 1
    assert abs(z[0]) == pytest.approx(1.0) and z[1] == pytest.approx(2.0)
    # the default floor rejects that step and the Gauss-Newton fallback cannot move z0
    z, st = solve(_sing_F, _sing_J, [0.0, 0.0])
    assert st.termination != "converged" and z[0] == 0.0


def test_start_outside_domain():
    def F(z):
        raise ExprDomainError("never defined")
    z, st = solve(F, lambda z: np.eye(1), [1.0])
    assert st.termination == "eval_failure"


def test_max_iters_and_stagnation():
    # x^2 + 1 has no real root: the merit stalls at its minimum
    _, st = solve(lambda z: z ** 2 + 1, lambda z: np.diag(2 * z), [1.0], NewtonOptions(max_iters=3))
    assert st.termination in ("max_iters", "stagnated", "step_too_small")
    assert st.iterations <= 3


def test_option_validation():
    with pytest.raises(ValueError):
        NewtonOptions(residual_tol=0)
    with pytest.raises(ValueError):
        NewtonOptions(backtrack_factor=1.0)
