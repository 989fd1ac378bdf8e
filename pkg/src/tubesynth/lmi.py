"""Invariance and performance conditions as matrix inequalities.

Two views of the same conditions live here. ``verify_conditions`` evaluates
the nonlinear blocks numerically at a concrete iterate: robust invariance of
the tube cross-section, invariance of the terminal set, state/input
constraint inclusions, closed-loop dissipativity, and the terminal-set
performance-ellipsoid inclusion. ``add_linearized_blocks`` emits sufficient
LMI counterparts around the current iterate for the convex update problem,
built from one primitive: the convex underestimate of N(L, D) = L' D^{-1} L.

The underestimate touches N at the linearization point and minorizes it
everywhere, so any point satisfying the linearized blocks also satisfies the
nonlinear ones after the diagonal multiplier inverses are undone; feasibility
is preserved across updates by construction.

Multiplier bookkeeping: the nonlinear blocks use multipliers (D, W, S, R, M)
directly; the convex update optimizes their entrywise inverses (the "hatted"
variables) because those enter the Schur-completed blocks linearly.
"""

from dataclasses import dataclass, field

import numpy as np

from .cone import MatExpr, sym_block
from .model_set import EPS_POS, ModelTriple


@dataclass(frozen=True)
class FixedShapes:
    """Everything held fixed during synthesis: facet normals of all sets,
    the constraint polytopes, the state-set vertices, cost matrices, and the
    objective weights."""

    tube_normals: np.ndarray    # rows bounding the tube cross-section
    term_normals: np.ndarray    # rows bounding the terminal set
    dist_normals: np.ndarray    # rows bounding the disturbance set
    cover_normals: np.ndarray   # rows of the coverage ball around the terminal set
    state_normals: np.ndarray   # X = {|Vx x| <= vx}
    state_offsets: np.ndarray
    input_normals: np.ndarray   # U = {|Vu u| <= vu}
    input_offsets: np.ndarray
    state_vertices: np.ndarray  # (m_x^v, n_x) vertices of X
    Q_cost: np.ndarray
    R_cost: np.ndarray
    w_tube: float = 1.0
    w_cover: float = 1.0
    w_perf: float = 0.1

    @property
    def n_x(self):
        return self.tube_normals.shape[1]

    @property
    def n_u(self):
        return self.input_normals.shape[1]

    @property
    def m_tube(self):
        return self.tube_normals.shape[0]

    @property
    def m_term(self):
        return self.term_normals.shape[0]

    @property
    def m_w(self):
        return self.dist_normals.shape[0]

    @property
    def m_eps(self):
        return self.cover_normals.shape[0]

    @property
    def m_x(self):
        return self.state_normals.shape[0]

    @property
    def m_u(self):
        return self.input_normals.shape[0]

    @property
    def num_vertices(self):
        return self.state_vertices.shape[0]


@dataclass
class Multipliers:
    """Diagonal multiplier stacks, one row of diagonal entries per condition
    index. All entries strictly positive."""

    rpi_tube: np.ndarray    # (m_tube, m_tube)
    rpi_dist: np.ndarray    # (m_tube, m_w)
    term: np.ndarray        # (m_term, m_term)
    state_tube: np.ndarray  # (m_x, m_tube)
    state_term: np.ndarray  # (m_x, m_term)
    input_tube: np.ndarray  # (m_u, m_tube)
    input_term: np.ndarray  # (m_u, m_term)

    def copy(self):
        return Multipliers(**{k: v.copy() for k, v in self.__dict__.items()})


@dataclass
class SynthIterate:
    """Full variable bundle of the nonlinear synthesis problem."""

    model: ModelTriple
    slack: np.ndarray        # (m_w, 2 n_x + n_u) envelope on |F [-A -B I]|
    slack_bound: float       # row-sum bound, >= the induced inf-norm
    gain: np.ndarray         # (n_u, n_x), u = K x
    b_tube: np.ndarray       # tube cross-section offsets
    b_term: np.ndarray       # terminal set offsets
    lyap: np.ndarray         # (n_x, n_x) dissipativity certificate
    perf_bound: float        # bound on the closed-loop cost from the terminal set
    ellipse_mult: np.ndarray  # (m_term,) diagonal of the S-procedure multiplier
    eps_cover: np.ndarray    # coverage ball offsets
    mult: Multipliers

    @property
    def closed_loop(self):
        return self.model.A + self.model.B @ self.gain

    def copy(self):
        return SynthIterate(
            model=self.model, slack=self.slack.copy(),
            slack_bound=self.slack_bound, gain=self.gain.copy(),
            b_tube=self.b_tube.copy(), b_term=self.b_term.copy(),
            lyap=self.lyap.copy(), perf_bound=self.perf_bound,
            ellipse_mult=self.ellipse_mult.copy(),
            eps_cover=self.eps_cover.copy(), mult=self.mult.copy(),
        )


def objective_value(it, shapes):
    """Weighted criterion: w_tube |b_tube|_1 + w_cover |eps_cover|_1 +
    w_perf * perf_bound (all offset vectors are positive, so the 1-norms are
    plain sums)."""
    return float(
        shapes.w_tube * np.sum(it.b_tube)
        + shapes.w_cover * np.sum(it.eps_cover)
        + shapes.w_perf * it.perf_bound
    )


def convex_underestimate(L_cur, D_cur, L_var, D_var):
    """Affine minorant of N(L, D) = L' D^{-1} L around (L_cur, D_cur).

    Returns  L_var' J + J' L_var - J' D_var J  with J = D_cur^{-1} L_cur.
    The result equals N at the linearization point and N - result is PSD for
    any (L_var, D_var) with D_var > 0. Arguments may be numeric arrays or
    affine MatExpr; the result is numeric only when both variable slots are.
    """
    L_cur = np.atleast_2d(np.asarray(L_cur, dtype=float))
    D_cur = np.atleast_2d(np.asarray(D_cur, dtype=float))
    if np.linalg.cond(D_cur) > 1e14:
        raise np.linalg.LinAlgError("linearization point multiplier is singular")
    J = np.linalg.solve(D_cur, L_cur)

    def is_expr(v):
        return isinstance(v, MatExpr)

    if not is_expr(L_var) and not is_expr(D_var):
        L_var = np.atleast_2d(np.asarray(L_var, dtype=float))
        D_var = np.atleast_2d(np.asarray(D_var, dtype=float))
        return L_var.T @ J + J.T @ L_var - J.T @ D_var @ J

    def lift(v, shape):
        return v if is_expr(v) else MatExpr.constant(np.broadcast_to(
            np.atleast_2d(np.asarray(v, dtype=float)), shape))

    Lv = lift(L_var, L_cur.shape)
    Dv = lift(D_var, D_cur.shape)
    return Lv.T.rmul(J) + Lv.lmul(J.T) - Dv.lmul(J.T).rmul(J)


# ---------------------------------------------------------------------------
# numeric evaluation of the nonlinear blocks


@dataclass
class ConditionReport:
    """Minimum eigenvalue (or scalar value) of every condition block."""

    blocks: dict = field(default_factory=dict)  # family -> array of min eigs

    def record(self, family, values):
        self.blocks[family] = np.asarray(values, dtype=float)

    @property
    def worst(self):
        return float(min(v.min() for v in self.blocks.values()))

    def feasible(self, eps):
        return self.worst >= eps

    def to_json(self):
        return {fam: v.tolist() for fam, v in self.blocks.items()}

    def worst_block(self):
        fam = min(self.blocks, key=lambda f: self.blocks[f].min())
        return fam, int(np.argmin(self.blocks[fam]))


def _rpi_block(i, Acl, F, P_tube, b_tube, d, D_i, W_i):
    Pi = P_tube[i:i + 1]
    top = 2 * b_tube[i] - b_tube @ (D_i * b_tube) - d @ (W_i * d)
    return np.block([
        [np.atleast_2d(top), Pi, Pi @ Acl],
        [Pi.T, F.T @ (W_i[:, None] * F), np.zeros((Acl.shape[0],) * 2)],
        [(Pi @ Acl).T, np.zeros((Acl.shape[0],) * 2),
         P_tube.T @ (D_i[:, None] * P_tube)],
    ])


def _pi_block(i, Acl, P_term, b_term, D_i):
    Pi = P_term[i:i + 1]
    top = 2 * b_term[i] - b_term @ (D_i * b_term)
    return np.block([
        [np.atleast_2d(top), Pi @ Acl],
        [(Pi @ Acl).T, P_term.T @ (D_i[:, None] * P_term)],
    ])


def _sum_inclusion_block(row, offset, P_a, b_a, S_a, P_b, b_b, S_b):
    """Common shape of the state/input inclusion blocks: the Minkowski sum of
    two symmetric polytopes against one facet of an outer set."""
    n = P_a.shape[1]
    top = 2 * offset - b_a @ (S_a * b_a) - b_b @ (S_b * b_b)
    return np.block([
        [np.atleast_2d(top), row, row],
        [row.T, P_a.T @ (S_a[:, None] * P_a), np.zeros((n, n))],
        [row.T, np.zeros((n, n)), P_b.T @ (S_b[:, None] * P_b)],
    ])


def verify_conditions(it, shapes):
    """Numeric residual report of every nonlinear condition at an iterate.

    Families and their feasibility semantics (all want min eig > 0):
      rpi          robust invariance of the tube cross-section, per tube facet
      pi           invariance of the terminal set, per terminal facet
      state        tube + terminal inside the state set, per state facet
      input        gain image of both inside the input set, per input facet
      dissipativity  negated Lyapunov decrement of the closed loop
      perf_ellipse   terminal set inside the performance ellipsoid
      perf_scalar    scalar slack of the ellipsoid radius condition
    """
    A, B, d = it.model.A, it.model.B, it.model.d
    Acl = A + B @ it.gain
    F = shapes.dist_normals
    rep = ConditionReport()

    rep.record("rpi", [
        np.linalg.eigvalsh(_rpi_block(i, Acl, F, shapes.tube_normals,
                                      it.b_tube, d, it.mult.rpi_tube[i],
                                      it.mult.rpi_dist[i])).min()
        for i in range(shapes.m_tube)
    ])
    rep.record("pi", [
        np.linalg.eigvalsh(_pi_block(i, Acl, shapes.term_normals, it.b_term,
                                     it.mult.term[i])).min()
        for i in range(shapes.m_term)
    ])
    rep.record("state", [
        np.linalg.eigvalsh(_sum_inclusion_block(
            shapes.state_normals[i:i + 1], shapes.state_offsets[i],
            shapes.tube_normals, it.b_tube, it.mult.state_tube[i],
            shapes.term_normals, it.b_term, it.mult.state_term[i])).min()
        for i in range(shapes.m_x)
    ])
    rep.record("input", [
        np.linalg.eigvalsh(_sum_inclusion_block(
            shapes.input_normals[i:i + 1] @ it.gain, shapes.input_offsets[i],
            shapes.tube_normals, it.b_tube, it.mult.input_tube[i],
            shapes.term_normals, it.b_term, it.mult.input_term[i])).min()
        for i in range(shapes.m_u)
    ])
    decrement = (Acl.T @ it.lyap @ Acl - it.lyap + shapes.Q_cost
                 + it.gain.T @ shapes.R_cost @ it.gain)
    rep.record("dissipativity", [np.linalg.eigvalsh(-decrement).min()])
    Pt = shapes.term_normals
    rep.record("perf_ellipse", [
        np.linalg.eigvalsh(Pt.T @ (it.ellipse_mult[:, None] * Pt)
                           - it.lyap).min()
    ])
    rep.record("perf_scalar", [
        it.perf_bound - it.b_term @ (it.ellipse_mult * it.b_term)
    ])
    return rep


# ---------------------------------------------------------------------------
# linearized LMI blocks for the convex update problem


def register_synthesis_vars(prog, shapes):
    """Register the full decision-variable bundle of the update problem.

    The multiplier variables are the entrywise inverses of the nonlinear
    problem's multipliers (suffix ``_hat``); everything else is shared with
    the nonlinear problem.
    """
    nx, nu = shapes.n_x, shapes.n_u
    prog.add_var("A", (nx, nx))
    prog.add_var("B", (nx, nu))
    prog.add_var("d", (shapes.m_w,))
    prog.add_var("Z", (shapes.m_w, 2 * nx + nu))
    prog.add_var("lam", (1,))
    prog.add_var("K", (nu, nx))
    prog.add_var("b_tube", (shapes.m_tube,))
    prog.add_var("b_term", (shapes.m_term,))
    prog.add_var("lyap", (nx, nx), kind="sym")
    prog.add_var("perf_bound", (1,))
    prog.add_var("ellipse_hat", (shapes.m_term,), kind="diag")
    prog.add_var("eps_cover", (shapes.m_eps,))
    for i in range(shapes.m_tube):
        prog.add_var(f"rpi_tube_hat_{i}", (shapes.m_tube,), kind="diag")
        prog.add_var(f"rpi_dist_hat_{i}", (shapes.m_w,), kind="diag")
    for i in range(shapes.m_term):
        prog.add_var(f"term_hat_{i}", (shapes.m_term,), kind="diag")
    for i in range(shapes.m_x):
        prog.add_var(f"state_tube_hat_{i}", (shapes.m_tube,), kind="diag")
        prog.add_var(f"state_term_hat_{i}", (shapes.m_term,), kind="diag")
    for i in range(shapes.m_u):
        prog.add_var(f"input_tube_hat_{i}", (shapes.m_tube,), kind="diag")
        prog.add_var(f"input_term_hat_{i}", (shapes.m_term,), kind="diag")


def add_linearized_blocks(prog, it, shapes):
    """Emit every linearized PSD block of the update problem around ``it``.

    The iterate must satisfy the nonlinear conditions (see
    ``verify_conditions``); each block below is exact at the iterate after
    substituting the inverse multipliers, which is what makes the previous
    point feasible for its own update problem.
    """
    nx, nu = shapes.n_x, shapes.n_u
    A_cur, B_cur = it.model.A, it.model.B
    K_cur = it.gain
    I_u = np.eye(nu)
    I_x = np.eye(nx)

    Av, Bv, Kv = prog.mat("A"), prog.mat("B"), prog.mat("K")
    dv = prog.mat("d")
    btv = prog.mat("b_tube")
    bTv = prog.mat("b_term")
    Thv = prog.mat("lyap")
    rv = prog.scalar("perf_bound")
    Mhv = prog.mat("ellipse_hat")

    P_tube, P_term, F = shapes.tube_normals, shapes.term_normals, shapes.dist_normals

    # robust invariance of the tube, one block per tube facet
    for i in range(shapes.m_tube):
        Pi = P_tube[i:i + 1]
        Dhat_cur = 1.0 / it.mult.rpi_tube[i]
        What_cur = 1.0 / it.mult.rpi_dist[i]
        Dh = prog.mat(f"rpi_tube_hat_{i}")
        Wh = prog.mat(f"rpi_dist_hat_{i}")
        corner = (2.0 * prog.entry("b_tube", i)
                  + convex_underestimate(B_cur.T @ Pi.T, I_u,
                                         Bv.T.rmul(Pi.T), I_u))
        blk = sym_block([
            [I_u, None, None, -Bv.T.rmul(Pi.T), None, Kv],
            [None, Dh, None, btv, None, None],
            [None, None, Wh, dv, None, None],
            [None, None, None, corner, Pi, Av.lmul(Pi)],
            [None, None, None, None,
             convex_underestimate(F, np.diag(What_cur), F, Wh), None],
            [None, None, None, None, None,
             convex_underestimate(P_tube, np.diag(Dhat_cur), P_tube, Dh)
             + convex_underestimate(K_cur, I_u, Kv, I_u)],
        ])
        prog.add_psd(f"rpi_{i}", blk)

    # invariance of the terminal set, one block per terminal facet
    for i in range(shapes.m_term):
        Pi = P_term[i:i + 1]
        Dhat_cur = 1.0 / it.mult.term[i]
        Dh = prog.mat(f"term_hat_{i}")
        corner = (2.0 * prog.entry("b_term", i)
                  + convex_underestimate(B_cur.T @ Pi.T, I_u,
                                         Bv.T.rmul(Pi.T), I_u))
        blk = sym_block([
            [I_u, None, -Bv.T.rmul(Pi.T), Kv],
            [None, Dh, bTv, None],
            [None, None, corner, Av.lmul(Pi)],
            [None, None, None,
             convex_underestimate(P_term, np.diag(Dhat_cur), P_term, Dh)
             + convex_underestimate(K_cur, I_u, Kv, I_u)],
        ])
        prog.add_psd(f"pi_{i}", blk)

    # constraint inclusions: state facets (no gain involvement) ...
    for i in range(shapes.m_x):
        row = shapes.state_normals[i:i + 1]
        Sh_t = prog.mat(f"state_tube_hat_{i}")
        Sh_T = prog.mat(f"state_term_hat_{i}")
        blk = sym_block([
            [Sh_t, None, btv, None, None],
            [None, Sh_T, bTv, None, None],
            [None, None, 2.0 * shapes.state_offsets[i] * np.ones((1, 1)),
             row, row],
            [None, None, None,
             convex_underestimate(P_tube, np.diag(1.0 / it.mult.state_tube[i]),
                                  P_tube, Sh_t), None],
            [None, None, None, None,
             convex_underestimate(P_term, np.diag(1.0 / it.mult.state_term[i]),
                                  P_term, Sh_T)],
        ])
        prog.add_psd(f"state_{i}", blk)

    # ... and input facets, where the gain enters the coupling row
    for i in range(shapes.m_u):
        Vu_i = shapes.input_normals[i:i + 1]
        Rh_t = prog.mat(f"input_tube_hat_{i}")
        Rh_T = prog.mat(f"input_term_hat_{i}")
        KVu = Kv.lmul(Vu_i)
        blk = sym_block([
            [Rh_t, None, btv, None, None],
            [None, Rh_T, bTv, None, None],
            [None, None, 2.0 * shapes.input_offsets[i] * np.ones((1, 1)),
             KVu, KVu],
            [None, None, None,
             convex_underestimate(P_tube, np.diag(1.0 / it.mult.input_tube[i]),
                                  P_tube, Rh_t), None],
            [None, None, None, None,
             convex_underestimate(P_term, np.diag(1.0 / it.mult.input_term[i]),
                                  P_term, Rh_T)],
        ])
        prog.add_psd(f"input_{i}", blk)

    # closed-loop dissipativity
    Qinv = np.linalg.inv(shapes.Q_cost)
    Rinv = np.linalg.inv(shapes.R_cost)
    blk = sym_block([
        [I_u, None, None, -Bv.T, Kv],
        [None, Qinv, None, None, I_x],
        [None, None, Rinv, None, Kv],
        [None, None, None,
         convex_underestimate(I_x, it.lyap, I_x, Thv)
         + convex_underestimate(B_cur.T, I_u, Bv.T, I_u), Av],
        [None, None, None, None,
         Thv + convex_underestimate(K_cur, I_u, Kv, I_u)],
    ])
    prog.add_psd("dissipativity", blk)

    # terminal set inside the performance ellipsoid
    Mhat_cur = np.diag(1.0 / it.ellipse_mult)
    prog.add_psd("perf_ellipse",
                 convex_underestimate(P_term, Mhat_cur, P_term, Mhv) - Thv)
    prog.add_psd("perf_radius", sym_block([[Mhv, bTv], [None, rv]]))

    # the certificate itself must be positive definite
    prog.add_psd("lyap_pd", Thv)


def add_coverage_rows(prog, shapes, b_term_fixed=None):
    """Vertex coverage of the state set by (terminal set + coverage ball).

    Each state-set vertex x is split as x = y + e with y in the terminal set
    and e in the coverage ball: n_x equality rows per vertex plus the two
    H-membership row groups. When ``b_term_fixed`` is given the terminal
    offsets enter as constants (used at initialization); otherwise the rows
    couple to the ``b_term`` variable.
    """
    P_term, E = shapes.term_normals, shapes.cover_normals
    eps_v = prog.mat("eps_cover")
    bTv = None if b_term_fixed is not None else prog.mat("b_term")
    for k, x in enumerate(shapes.state_vertices):
        prog.add_var(f"cover_y_{k}", (shapes.n_x,))
        prog.add_var(f"cover_e_{k}", (shapes.n_x,))
        yv = prog.mat(f"cover_y_{k}")
        ev = prog.mat(f"cover_e_{k}")
        prog.add_eq_expr(yv + ev - MatExpr.constant(x.reshape(-1, 1)))
        Py = yv.lmul(P_term)
        if b_term_fixed is not None:
            bT = MatExpr.constant(b_term_fixed.reshape(-1, 1))
        else:
            bT = bTv
        prog.add_ineq_expr(Py - bT)
        prog.add_ineq_expr(-1.0 * Py - bT)
        Ee = ev.lmul(E)
        prog.add_ineq_expr(Ee - eps_v)
        prog.add_ineq_expr(-1.0 * Ee - eps_v)
    # strictly positive coverage offsets (closed margin)
    m = shapes.m_eps
    idx = prog.indices("eps_cover")
    prog.add_ineq_triplets(np.arange(m), idx, -np.ones(m),
                           -EPS_POS * np.ones(m))


def shapes_to_json(shapes):
    out = {k: np.asarray(getattr(shapes, k)).tolist() for k in (
        "tube_normals", "term_normals", "dist_normals", "cover_normals",
        "state_normals", "state_offsets", "input_normals", "input_offsets",
        "state_vertices", "Q_cost", "R_cost")}
    out.update(w_tube=shapes.w_tube, w_cover=shapes.w_cover,
               w_perf=shapes.w_perf)
    return out


def shapes_from_json(obj):
    kwargs = {k: np.asarray(v) for k, v in obj.items()
              if k not in ("w_tube", "w_cover", "w_perf")}
    return FixedShapes(**kwargs, w_tube=obj["w_tube"], w_cover=obj["w_cover"],
                       w_perf=obj["w_perf"])


def iterate_to_json(it):
    return {
        "model": it.model.to_json(),
        "slack": it.slack.tolist(),
        "slack_bound": it.slack_bound,
        "gain": it.gain.tolist(),
        "b_tube": it.b_tube.tolist(),
        "b_term": it.b_term.tolist(),
        "lyap": it.lyap.tolist(),
        "perf_bound": it.perf_bound,
        "ellipse_mult": it.ellipse_mult.tolist(),
        "eps_cover": it.eps_cover.tolist(),
        "mult": {k: np.asarray(v).tolist()
                 for k, v in it.mult.__dict__.items()},
    }


def iterate_from_json(obj):
    return SynthIterate(
        model=ModelTriple.from_json(obj["model"]),
        slack=np.asarray(obj["slack"]),
        slack_bound=float(obj["slack_bound"]),
        gain=np.atleast_2d(np.asarray(obj["gain"])),
        b_tube=np.asarray(obj["b_tube"]),
        b_term=np.asarray(obj["b_term"]),
        lyap=np.asarray(obj["lyap"]),
        perf_bound=float(obj["perf_bound"]),
        ellipse_mult=np.asarray(obj["ellipse_mult"]),
        eps_cover=np.asarray(obj["eps_cover"]),
        mult=Multipliers(**{k: np.asarray(v)
                            for k, v in obj["mult"].items()}),
    )


def recover_iterate(values, shapes, clamp=EPS_POS):
    """Rebuild a SynthIterate from solved update-problem values, inverting
    the hatted diagonal multipliers (clamped away from zero)."""
    def inv_stack(prefix, count):
        return np.vstack([
            1.0 / np.maximum(values[f"{prefix}_{i}"], clamp)
            for i in range(count)
        ]) if count else np.zeros((0, 0))

    mult = Multipliers(
        rpi_tube=inv_stack("rpi_tube_hat", shapes.m_tube),
        rpi_dist=inv_stack("rpi_dist_hat", shapes.m_tube),
        term=inv_stack("term_hat", shapes.m_term),
        state_tube=inv_stack("state_tube_hat", shapes.m_x),
        state_term=inv_stack("state_term_hat", shapes.m_x),
        input_tube=inv_stack("input_tube_hat", shapes.m_u),
        input_term=inv_stack("input_term_hat", shapes.m_u),
    )
    model = ModelTriple(values["A"], values["B"],
                        np.maximum(values["d"], clamp))
    return SynthIterate(
        model=model,
        slack=values["Z"],
        slack_bound=float(values["lam"][0]),
        gain=values["K"],
        b_tube=values["b_tube"],
        b_term=values["b_term"],
        lyap=values["lyap"],
        perf_bound=float(values["perf_bound"][0]),
        ellipse_mult=1.0 / np.maximum(values["ellipse_hat"], clamp),
        eps_cover=np.maximum(values["eps_cover"], clamp),
        mult=mult,
    )
