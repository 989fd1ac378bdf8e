"""Discrete-time control primitives: Riccati fixed point, LQR gain, stability."""

from dataclasses import dataclass

import numpy as np


class NoConvergence(RuntimeError):
    """Riccati fixed-point iteration did not settle within the budget."""


@dataclass(frozen=True)
class StateSpace:
    """Discrete-time pair x(t+1) = A x(t) + B u(t)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise ValueError("B row count must match state dimension")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("non-finite state-space entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]


def solve_dare(sys, Q, R, tol=1e-10, max_iter=10_000):
    """Stabilizing Riccati solution by fixed-point iteration from P = Q.

    Iterates P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q until the update is
    below ``tol`` in max norm. Deliberately a plain value iteration: at the
    state dimensions used here (n_x <= 4) it is simple and accurate, and the
    returned P carries a directly checkable residual.
    """
    A, B = sys.A, sys.B
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = A.T @ P @ A - A.T @ P @ B @ G + Q
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol:
            return P_next
        P = P_next
    raise NoConvergence(
        f"Riccati iteration did not converge in {max_iter} steps "
        f"(last update {np.max(np.abs(P_next - P)):.3e})"
    )


def dare_residual(sys, P, Q, R):
    """Max-norm residual of the Riccati equation at P."""
    A, B = sys.A, sys.B
    G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return float(np.max(np.abs(A.T @ P @ A - P - A.T @ P @ B @ G + Q)))


def lqr_gain(sys, Q, R, tol=1e-10):
    """Optimal feedback K = -(R + B'PB)^-1 B'PA, convention u = K x.

    With this sign, A + B K is the closed loop and the gain entries come out
    negative for a positively actuated stable plant.
    """
    P = solve_dare(sys, Q, R, tol=tol)
    A, B = sys.A, sys.B
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def spectral_radius(M):
    """Largest eigenvalue modulus."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))
