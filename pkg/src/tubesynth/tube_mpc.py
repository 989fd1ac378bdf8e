"""Receding-horizon controller that steers a nominal trajectory through
tightened constraints while feedback keeps the real state inside a tube
around it.

The per-step problem optimizes a nominal state/input sequence subject to the
nominal dynamics, state constraints shrunk by the tube, input constraints
shrunk by the gain image of the tube, a terminal-set membership, and the
requirement that the measured state sits inside the tube around the first
nominal state (the first nominal state is itself a decision variable). The
applied input is the first nominal input plus gain feedback on the deviation.
"""

from dataclasses import dataclass

import numpy as np

from . import polytope as poly
from .cone import ConeProgram
from .control import StateSpace, solve_dare
from .plant import step_msd


class MpcInfeasible(RuntimeError):
    """No nominal plan exists from this state (outside the feasible region)."""


@dataclass(frozen=True)
class TubeMpcProblem:
    A: np.ndarray
    B: np.ndarray
    gain: np.ndarray
    tube: poly.SymPolytope
    terminal: poly.SymPolytope
    state_tight: poly.SymPolytope
    input_tight: poly.SymPolytope
    horizon: int
    Q_cost: np.ndarray
    R_cost: np.ndarray
    P_term: np.ndarray

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]


def build_tightened(model, gain, tube, terminal, state_set, input_set,
                    horizon=10, Q_cost=None, R_cost=None):
    """Assemble the controller data, verifying the tube/terminal geometry.

    The input tightening is computed on the input set's own normals: the
    support of the gain image of the tube along V_u rows is exactly the
    support of the tube along (V_u K) rows. The terminal weight is the
    Riccati solution for (A, B) under the performance cost, which matches the
    gain only when the gain is the corresponding optimal one; for a
    synthesized gain it is an approximation and the terminal set still
    guarantees recursive feasibility.
    """
    A = np.atleast_2d(np.asarray(model.A, dtype=float))
    B = np.atleast_2d(np.asarray(model.B, dtype=float))
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    Q_cost = np.eye(A.shape[0]) if Q_cost is None else np.atleast_2d(Q_cost)
    R_cost = np.eye(B.shape[1]) if R_cost is None else np.atleast_2d(R_cost)

    if not poly.contains_set(state_set, tube, tol=0.0):
        raise poly.EmptyDifference("tube not strictly inside the state set")
    state_tight = poly.minkowski_diff(state_set, tube)
    h_u = poly.supports(tube, input_set.normals @ gain)
    off_u = input_set.offsets - h_u
    if np.any(off_u <= 0):
        raise poly.EmptyDifference("gain image of tube swallows the input set")
    input_tight = poly.SymPolytope(input_set.normals, off_u)
    if not poly.contains_set(state_tight, terminal, tol=1e-9):
        raise ValueError("terminal set exceeds the tightened state set")
    h_term_u = poly.supports(terminal, input_tight.normals @ gain)
    if np.any(h_term_u > input_tight.offsets + 1e-9):
        raise ValueError("gain image of terminal set exceeds tightened inputs")
    P_term = solve_dare(StateSpace(A, B), Q_cost, R_cost)
    return TubeMpcProblem(A=A, B=B, gain=gain, tube=tube, terminal=terminal,
                          state_tight=state_tight, input_tight=input_tight,
                          horizon=int(horizon), Q_cost=Q_cost, R_cost=R_cost,
                          P_term=P_term)


def mpc_step(p, x):
    """Solve the nominal plan from state x; return the tube-feedback input.

    Returns (u, plan) with plan = (nominal states (N+1, n_x), nominal inputs
    (N, n_u)). Raises MpcInfeasible when no plan exists.
    """
    x = np.asarray(x, dtype=float).ravel()
    N, nx, nu = p.horizon, p.n_x, p.n_u
    prog = ConeProgram()
    prog.add_var("xh", ((N + 1) * nx,))
    prog.add_var("uh", (N * nu,))
    Hx = np.zeros(((N + 1) * nx,) * 2)
    for s in range(N):
        Hx[s * nx:(s + 1) * nx, s * nx:(s + 1) * nx] = p.Q_cost
    Hx[N * nx:, N * nx:] = p.P_term
    Hu = np.kron(np.eye(N), p.R_cost)
    prog.add_quad("xh", Hx)
    prog.add_quad("uh", Hu)

    ix = prog.indices("xh").reshape(N + 1, nx)
    iu = prog.indices("uh").reshape(N, nu)

    # nominal dynamics x_{s+1} = A x_s + B u_s
    rows, cols, vals = [], [], []
    r = 0
    for s in range(N):
        for i in range(nx):
            rows.append(np.full(nx + nu + 1, r))
            cols.append(np.concatenate([[ix[s + 1, i]], ix[s], iu[s]]))
            vals.append(np.concatenate([[1.0], -p.A[i], -p.B[i]]))
            r += 1
    prog.add_eq_triplets(np.concatenate(rows), np.concatenate(cols),
                         np.concatenate(vals), np.zeros(r))

    # inequality rows
    gi_rows, gi_cols, gi_vals, gi_rhs = [], [], [], []
    gr = 0

    def add_band(normals, offsets, var_idx, shift=None):
        """rows +-(normals @ z) <= offsets (+- normals @ shift)."""
        nonlocal gr
        m, dim = normals.shape
        for sgn in (1.0, -1.0):
            for i in range(m):
                gi_rows.append(np.full(dim, gr))
                gi_cols.append(var_idx)
                gi_vals.append(sgn * normals[i])
                off = offsets[i]
                if shift is not None:
                    off = off + sgn * float(normals[i] @ shift)
                gi_rhs.append(np.array([off]))
                gr += 1

    # tube membership of the measured state around the first nominal state:
    # sgn * P (x - x0_nominal) <= b  ->  sgn * (-P) x0 <= b + sgn * (-P) x
    add_band(-p.tube.normals, p.tube.offsets, ix[0], shift=x)
    for s in range(1, N):
        add_band(p.state_tight.normals, p.state_tight.offsets, ix[s])
    for s in range(N):
        add_band(p.input_tight.normals, p.input_tight.offsets, iu[s])
    add_band(p.terminal.normals, p.terminal.offsets, ix[N])
    prog.add_ineq_triplets(np.concatenate(gi_rows), np.concatenate(gi_cols),
                           np.concatenate(gi_vals), np.concatenate(gi_rhs))

    res = prog.solve(tol=1e-9)
    if res.status == "infeasible":
        raise MpcInfeasible(f"no feasible nominal plan from x={x}")
    if not res.optimal:
        raise MpcInfeasible(f"plan solve failed: {res.solver_status}")
    xh = res.values["xh"].reshape(N + 1, nx)
    uh = res.values["uh"].reshape(N, nu)
    u = uh[0] + p.gain @ (x - xh[0])
    return u, (xh, uh)


@dataclass
class TrajectoryLog:
    """Closed-loop record; one row per executed step plus the final state."""

    states: np.ndarray = None
    inputs: np.ndarray = None
    nominal: np.ndarray = None
    feasible: np.ndarray = None
    w_in_dist: np.ndarray = None
    tube_ok: np.ndarray = None
    state_ok: np.ndarray = None
    input_ok: np.ndarray = None
    residuals: np.ndarray = None
    halted_at: int = -1  # step index of the first infeasibility, -1 if none

    def write_csv(self, path):
        steps = self.inputs.shape[0]
        with open(path, "w") as fh:
            fh.write("t,x1,x2,u,xhat1,xhat2,feasible,w_in_W\n")
            for t in range(steps):
                fh.write(
                    f"{t},{self.states[t, 0]:.9g},{self.states[t, 1]:.9g},"
                    f"{self.inputs[t, 0]:.9g},{self.nominal[t, 0]:.9g},"
                    f"{self.nominal[t, 1]:.9g},{int(self.feasible[t])},"
                    f"{int(self.w_in_dist[t])}\n")

    def to_json(self):
        return {
            "steps": int(self.inputs.shape[0]),
            "halted_at": int(self.halted_at),
            "violations_state": int(np.sum(~self.state_ok)),
            "violations_input": int(np.sum(~self.input_ok)),
            "tube_exits": int(np.sum(~self.tube_ok)),
            "dist_exits": int(np.sum(~self.w_in_dist)),
        }


def closed_loop(p, params, dist, state_set, input_set, x0, steps, rng,
                tol=1e-7):
    """Run the controller against the nonlinear plant for ``steps`` samples.

    Per step: solve the plan, apply the tube-feedback input, integrate the
    plant one sample period (with freshly drawn physical parameters), and log
    the one-step model residual together with whether it stayed inside the
    identified disturbance set. Stops at the first infeasible plan.

    Row t of the log covers the transition t -> t+1. ``tube_ok[t]`` is the
    propagated containment  x(t+1) - (A xhat0 + B uhat0) in tube: when the
    residual stays inside the disturbance set this holds with the tube's
    strict-invariance margin, so a failure can only coincide with a flagged
    residual excursion (up to far smaller solver tolerances). ``state_ok`` /
    ``input_ok`` check x(t+1) and u(t) against the original constraint sets.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = int(steps)
    states = np.zeros((n + 1, p.n_x))
    inputs = np.zeros((n, p.n_u))
    nominal = np.zeros((n, p.n_x))
    feasible = np.zeros(n, dtype=bool)
    w_in = np.zeros(n, dtype=bool)
    tube_ok = np.zeros(n, dtype=bool)
    state_ok = np.zeros(n, dtype=bool)
    input_ok = np.zeros(n, dtype=bool)
    residuals = np.zeros((n, p.n_x))
    halted = -1
    states[0] = x
    for t in range(n):
        try:
            u, (xh, uh) = mpc_step(p, x)
        except MpcInfeasible:
            halted = t
            n = t
            break
        x_next = step_msd(params, x, u, rng=rng)
        w = x_next - (p.A @ x + p.B @ u)
        nominal_next = p.A @ xh[0] + p.B @ uh[0]
        feasible[t] = True
        inputs[t] = u
        nominal[t] = xh[0]
        residuals[t] = w
        w_in[t] = poly.contains(dist, w, tol=tol)
        tube_ok[t] = poly.contains(p.tube, x_next - nominal_next, tol=tol)
        state_ok[t] = poly.contains(state_set, x_next, tol=tol)
        input_ok[t] = poly.contains(input_set, u, tol=tol)
        x = x_next
        states[t + 1] = x
    return TrajectoryLog(
        states=states[:n + 1], inputs=inputs[:n], nominal=nominal[:n],
        feasible=feasible[:n], w_in_dist=w_in[:n], tube_ok=tube_ok[:n],
        state_ok=state_ok[:n], input_ok=input_ok[:n],
        residuals=residuals[:n], halted_at=halted)
