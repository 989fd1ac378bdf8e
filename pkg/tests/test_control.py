import numpy as np
import pytest

from tubesynth.control import (NoConvergence, StateSpace, dare_residual,
                               lqr_gain, solve_dare, spectral_radius)

# printed initial model of the reference study; fixed fixture so the gain
# check is deterministic
A_REF = np.array([[0.9967, 0.0951], [-0.0637, 0.9036]])
B_REF = np.array([[0.0098], [0.1914]])
Q_REF = np.diag([1.0, 15.0])
R_REF = np.array([[1.0]])


class TestDare:
    def test_scalar_quadratic_formula(self):
        # a=0.5, b=1, q=r=1: stationary equation reduces to
        # p = a^2 p - a^2 p^2/(1+p) + q  =>  p^2 - 0.25 p - 1 = 0
        p_expected = (0.25 + np.sqrt(0.25 ** 2 + 4.0)) / 2.0
        sys = StateSpace(np.array([[0.5]]), np.array([[1.0]]))
        P = solve_dare(sys, np.eye(1), np.eye(1))
        assert P[0, 0] == pytest.approx(p_expected, abs=1e-9)

    def test_zero_dynamics(self):
        sys = StateSpace(np.zeros((2, 2)), np.array([[1.0], [0.0]]))
        P = solve_dare(sys, np.eye(2), np.eye(1))
        assert np.allclose(P, np.eye(2), atol=1e-12)

    def test_residual_bound(self):
        sys = StateSpace(A_REF, B_REF)
        P = solve_dare(sys, Q_REF, R_REF, tol=1e-12)
        assert dare_residual(sys, P, Q_REF, R_REF) <= 1e-9

    def test_no_convergence_budget(self):
        sys = StateSpace(A_REF, B_REF)
        with pytest.raises(NoConvergence):
            solve_dare(sys, Q_REF, R_REF, tol=1e-12, max_iter=3)


class TestLqrGain:
    def test_reference_gain(self):
        K = lqr_gain(StateSpace(A_REF, B_REF), Q_REF, R_REF)
        assert K[0, 0] == pytest.approx(-0.4140, abs=1e-3)
        assert K[0, 1] == pytest.approx(-2.3734, abs=1e-3)

    def test_zero_dynamics_gain(self):
        K = lqr_gain(StateSpace(np.zeros((2, 2)), np.array([[1.0], [0.5]])),
                     np.eye(2), np.eye(1))
        assert np.allclose(K, 0.0, atol=1e-12)

    def test_scalar_cross_check(self):
        # plug the scalar stationary solution into the gain formula
        p = (0.25 + np.sqrt(0.25 ** 2 + 4.0)) / 2.0
        k_expected = -(0.5 * p) / (1.0 + p)
        K = lqr_gain(StateSpace(np.array([[0.5]]), np.array([[1.0]])),
                     np.eye(1), np.eye(1))
        assert K[0, 0] == pytest.approx(k_expected, abs=1e-9)

    def test_closed_loop_stable(self):
        sys = StateSpace(A_REF, B_REF)
        K = lqr_gain(sys, Q_REF, R_REF)
        assert spectral_radius(sys.A + sys.B @ K) < 1.0

    def test_joint_scaling_invariance(self):
        sys = StateSpace(A_REF, B_REF)
        K1 = lqr_gain(sys, Q_REF, R_REF, tol=1e-13)
        K2 = lqr_gain(sys, 7.5 * Q_REF, 7.5 * R_REF, tol=1e-13)
        assert np.allclose(K1, K2, atol=1e-9)


class TestSpectralRadius:
    def test_identity(self):
        assert spectral_radius(np.eye(3)) == pytest.approx(1.0)

    def test_zero(self):
        assert spectral_radius(np.zeros((2, 2))) == 0.0

    def test_scaled_rotation(self):
        th = 0.7
        R = 0.9 * np.array([[np.cos(th), -np.sin(th)],
                            [np.sin(th), np.cos(th)]])
        assert spectral_radius(R) == pytest.approx(0.9, abs=1e-12)


class TestStateSpace:
    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            StateSpace(np.zeros((2, 3)), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            StateSpace(np.zeros((2, 2)), np.zeros((3, 1)))
        with pytest.raises(ValueError):
            StateSpace(np.array([[np.nan, 0], [0, 1.0]]), np.zeros((2, 1)))
