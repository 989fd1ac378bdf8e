"""Initialization of the synthesis: model fit, tube, terminal set, multipliers.

The chain runs: pick a coverage margin, fit the smallest-disturbance model by
LP, take the LQR gain for the performance cost, grow the minimal robust
invariant tube on fixed normals by support iteration, build the largest
contractive terminal set inside the tightened constraints by the maximal
admissible set recursion, and finally solve one SDP for the multipliers and
performance certificate that make the full iterate verifiably feasible.

Strictness bookkeeping: the later LMIs need every inclusion to hold with
margin, so the tube is inflated by (1 + delta), the tightened constraints are
shrunk by (1 - delta), and the admissible-set recursion is run for the
contractive dynamics Acl / (1 - delta). A plain maximal invariant set would
touch both its own image and the constraint boundary, leaving no margin at
all; the contractive variant converts delta directly into inclusion headroom.
"""

from dataclasses import dataclass

import numpy as np

from . import polytope as poly
from .cone import SOLVE_PAD, ConeProgram, MatExpr, sym_block
from .control import StateSpace, lqr_gain, spectral_radius
from .lmi import (FixedShapes, Multipliers, SynthIterate, add_coverage_rows,
                  objective_value, verify_conditions)
from .model_set import (EPS_POS, feasible_model_rows, initial_model_lp,
                        lipschitz_norm)
from .plant import build_transitions

MULT_FLOOR = 1e-7  # keeps initial multipliers invertible for linearization


class NoContraction(RuntimeError):
    """Tube support iteration failed to settle; the gain does not admit an
    invariant set on these normals."""


class ConstraintViolation(RuntimeError):
    """Initial tube violates the state or input constraints."""


class EmptyTightening(RuntimeError):
    """Tube tightening consumed the whole constraint set."""


class NonFiniteDetermination(RuntimeError):
    """Maximal admissible set recursion exceeded its step budget."""


class InfeasibleInit(RuntimeError):
    """Multiplier SDP at initialization is infeasible."""


def initial_tube(model, gain, tube_normals, dist_normals, state_set,
                 input_set, delta=1e-3, tol=1e-9, max_iter=10_000):
    """Offsets of an invariant tube cross-section on fixed normals.

    Fixed-point support iteration b_i <- h_W(p_i) + h_{P(N,b)}(Acl' p_i) from
    b = h_W, then inflation by (1 + delta) so the invariance holds strictly.
    Verifies the inflated tube stays inside the state set and its gain image
    inside the input set.
    """
    Acl = model.A + model.B @ gain
    if spectral_radius(Acl) >= 1.0:
        raise NoContraction(
            f"closed loop not stable (rho={spectral_radius(Acl):.4f})")
    W = poly.SymPolytope(np.atleast_2d(dist_normals), model.d)
    N = np.atleast_2d(tube_normals)
    h_w = poly.supports(W, N)
    if np.any(h_w <= 0):
        raise NoContraction("disturbance set has empty interior on a normal")
    b = h_w.copy()
    cap = 1e8 * float(np.max(h_w))
    for _ in range(max_iter):
        b_next = h_w + poly.supports(poly.SymPolytope(N, b), N @ Acl)
        if np.max(b_next) > cap:
            raise NoContraction("support iteration diverged")
        done = np.max(np.abs(b_next - b)) < tol
        b = b_next
        if done:
            break
    else:
        raise NoContraction(f"no fixed point within {max_iter} iterations")
    b = (1.0 + delta) * b
    tube = poly.SymPolytope(N, b)
    if not poly.contains_set(state_set, tube, tol=0.0):
        raise ConstraintViolation("tube exceeds the state constraint set")
    h_u = poly.supports(tube, input_set.normals @ gain)
    if np.any(h_u > input_set.offsets):
        raise ConstraintViolation("gain image of tube exceeds the input set")
    return b


def tightened_constraints(tube, gain, state_set, input_set):
    """Rows of {x : x in X - tube, K x in U - K tube} in one-sided symmetric
    form (normals, offsets). Raises EmptyTightening when a row collapses."""
    hx = poly.supports(tube, state_set.normals)
    off_x = state_set.offsets - hx
    dirs_u = input_set.normals @ gain
    hu = poly.supports(tube, dirs_u)
    off_u = input_set.offsets - hu
    if np.any(off_x <= 0) or np.any(off_u <= 0):
        raise EmptyTightening("tube tightening left no room for the nominal state")
    normals = np.vstack([state_set.normals, dirs_u])
    offsets = np.concatenate([off_x, off_u])
    return normals, offsets


def initial_terminal(model, gain, tube, state_set, input_set,
                     delta=1e-3, tol=1e-9, max_steps=500):
    """Largest contractive invariant polytope inside the tightened constraints.

    Runs the maximal admissible set recursion for x+ = Acl x with constraint
    rows propagated through Acl / (1 - delta): each accumulated facet then
    maps strictly inside the set, and the base rows are shrunk by (1 - delta)
    so the result clears the tightening with margin as well. The facet count
    of the returned set is the recursion's determination output.
    """
    Acl = model.A + model.B @ gain
    lam = 1.0 - delta
    if spectral_radius(Acl) >= lam:
        raise NoContraction(
            "closed loop too slow for the requested contraction margin")
    N0, c0 = tightened_constraints(tube, gain, state_set, input_set)
    norms = np.linalg.norm(N0, axis=1)
    keep = norms > 1e-12  # zero rows (e.g. zero gain image) are vacuous
    N0, c0, norms = N0[keep], c0[keep], norms[keep]
    N0, c0 = N0 / norms[:, None], (1.0 - delta) * c0 / norms
    normals = [N0]
    offsets = [c0]
    current = poly.SymPolytope(N0, c0)
    M = N0.copy()
    for _ in range(max_steps):
        M = (M @ Acl) / lam
        h = poly.supports(current, M)
        fresh = h > c0 + tol
        if not np.any(fresh):
            _check_terminal(current, Acl, N0, c0, tol)
            return current
        rows = M[fresh]
        rn = np.linalg.norm(rows, axis=1)
        normals.append(rows / rn[:, None])
        offsets.append(c0[fresh] / rn)
        current = poly.SymPolytope(np.vstack(normals), np.concatenate(offsets))
    raise NonFiniteDetermination(f"not determined within {max_steps} steps")


def _check_terminal(term, Acl, N0, c0, tol):
    h_inv = poly.supports(term, term.normals @ Acl)
    if np.any(h_inv > term.offsets + tol):  # pragma: no cover - by construction
        raise NoContraction("terminal set lost invariance")
    h_base = poly.supports(term, N0)
    if np.any(h_base > c0 + tol):  # pragma: no cover - by construction
        raise NoContraction("terminal set exceeds base rows")


def scale_into(template, container_normals, container_offsets):
    """Largest c with c * template inside the container, by support ratios
    (supports are positively homogeneous in the offsets, so no search)."""
    h = poly.supports(template, container_normals)
    if np.any(h <= 0):
        raise ValueError("degenerate template")
    return float(np.min(np.asarray(container_offsets) / h))


def _diag_quad(var_expr, vec):
    """1x1 expression vec' diag(var) vec for a diagonal matrix variable."""
    v = np.asarray(vec, dtype=float).reshape(1, -1)
    return var_expr.lmul(v).rmul(v.T)


def complete_iterate(model, gain, b_tube, terminal, shapes, eps_psd=1e-7):
    """Solve for multipliers and the performance certificate around fixed
    (model, gain, tube, terminal set), minimizing the performance bound.

    With the geometry pinned, every invariance/inclusion condition is linear
    in the multipliers, and the dissipativity/ellipsoid pair is linear in the
    certificate, so this is a single SDP. Infeasibility means the sets carry
    no strictness margin; the caller retries with a larger margin.
    """
    Acl = model.A + model.B @ gain
    F = shapes.dist_normals
    P_tube, P_term = shapes.tube_normals, shapes.term_normals
    b_term = terminal.offsets
    d = model.d
    nx = shapes.n_x

    prog = ConeProgram(eps_psd=eps_psd + SOLVE_PAD)
    prog.add_var("lyap", (nx, nx), kind="sym")
    prog.add_var("perf_bound", (1,))
    prog.add_var("ellipse", (shapes.m_term,), kind="diag")
    mult_names = ["ellipse"]
    for i in range(shapes.m_tube):
        prog.add_var(f"rpi_tube_{i}", (shapes.m_tube,), kind="diag")
        prog.add_var(f"rpi_dist_{i}", (shapes.m_w,), kind="diag")
        mult_names += [f"rpi_tube_{i}", f"rpi_dist_{i}"]
    for i in range(shapes.m_term):
        prog.add_var(f"term_{i}", (shapes.m_term,), kind="diag")
        mult_names.append(f"term_{i}")
    for i in range(shapes.m_x):
        prog.add_var(f"state_tube_{i}", (shapes.m_tube,), kind="diag")
        prog.add_var(f"state_term_{i}", (shapes.m_term,), kind="diag")
        mult_names += [f"state_tube_{i}", f"state_term_{i}"]
    for i in range(shapes.m_u):
        prog.add_var(f"input_tube_{i}", (shapes.m_tube,), kind="diag")
        prog.add_var(f"input_term_{i}", (shapes.m_term,), kind="diag")
        mult_names += [f"input_tube_{i}", f"input_term_{i}"]

    # floor every multiplier entry so the first linearization can invert them
    for name in mult_names:
        idx = prog.indices(name)
        m = idx.size
        prog.add_ineq_triplets(np.arange(m), idx, -np.ones(m),
                               -MULT_FLOOR * np.ones(m))

    for i in range(shapes.m_tube):
        Dv = prog.mat(f"rpi_tube_{i}")
        Wv = prog.mat(f"rpi_dist_{i}")
        Pi = P_tube[i:i + 1]
        top = (MatExpr.constant(2 * b_tube[i] * np.ones((1, 1)))
               - _diag_quad(Dv, b_tube) - _diag_quad(Wv, d))
        prog.add_psd(f"rpi_{i}", sym_block([
            [top, Pi, Pi @ Acl],
            [None, Wv.lmul(F.T).rmul(F), np.zeros((nx, nx))],
            [None, None, Dv.lmul(P_tube.T).rmul(P_tube)],
        ]))

    for i in range(shapes.m_term):
        Dv = prog.mat(f"term_{i}")
        Pi = P_term[i:i + 1]
        top = (MatExpr.constant(2 * b_term[i] * np.ones((1, 1)))
               - _diag_quad(Dv, b_term))
        prog.add_psd(f"pi_{i}", sym_block([
            [top, Pi @ Acl],
            [None, Dv.lmul(P_term.T).rmul(P_term)],
        ]))

    def inclusion_block(row, offset, Sv_t, Sv_T):
        top = (MatExpr.constant(2 * offset * np.ones((1, 1)))
               - _diag_quad(Sv_t, b_tube) - _diag_quad(Sv_T, b_term))
        return sym_block([
            [top, row, row],
            [None, Sv_t.lmul(P_tube.T).rmul(P_tube), np.zeros((nx, nx))],
            [None, None, Sv_T.lmul(P_term.T).rmul(P_term)],
        ])

    for i in range(shapes.m_x):
        prog.add_psd(f"state_{i}", inclusion_block(
            shapes.state_normals[i:i + 1], shapes.state_offsets[i],
            prog.mat(f"state_tube_{i}"), prog.mat(f"state_term_{i}")))
    for i in range(shapes.m_u):
        prog.add_psd(f"input_{i}", inclusion_block(
            shapes.input_normals[i:i + 1] @ gain, shapes.input_offsets[i],
            prog.mat(f"input_tube_{i}"), prog.mat(f"input_term_{i}")))

    Thv = prog.mat("lyap")
    stage = shapes.Q_cost + gain.T @ shapes.R_cost @ gain
    prog.add_psd("dissipativity",
                 Thv - Thv.lmul(Acl.T).rmul(Acl) - MatExpr.constant(stage))
    Mv = prog.mat("ellipse")
    prog.add_psd("perf_ellipse", Mv.lmul(P_term.T).rmul(P_term) - Thv)
    prog.add_psd("lyap_pd", Thv)
    # scalar radius condition r - b'Mb >= eps as a linear row
    r_idx = prog.indices("perf_bound")[0]
    m_idx = prog.indices("ellipse")
    prog.add_ineq_triplets(
        np.zeros(shapes.m_term + 1, dtype=int),
        np.concatenate([m_idx, [r_idx]]),
        np.concatenate([b_term ** 2, [-1.0]]),
        np.array([-(eps_psd + SOLVE_PAD)]),
    )
    prog.add_obj("perf_bound", 1.0)
    # tiny pull on every multiplier: the feasible set has unbounded
    # degenerate directions (a multiplier paired with a near-zero offset is
    # free to blow up), and huge multipliers poison the first linearization
    for name in mult_names:
        prog.add_obj(name, 1e-6)

    res = None
    for tol in (1e-9, 1e-7):
        res = prog.solve(tol=tol)
        if res.optimal or res.status == "infeasible":
            break
    if res.status == "infeasible":
        raise InfeasibleInit("multiplier SDP infeasible at this margin")
    if not res.optimal:
        raise InfeasibleInit(f"multiplier SDP failed: {res.solver_status}")
    v = res.values

    def stack(prefix, count):
        return np.vstack([np.maximum(v[f"{prefix}_{i}"], MULT_FLOOR)
                          for i in range(count)])

    mult = Multipliers(
        rpi_tube=stack("rpi_tube", shapes.m_tube),
        rpi_dist=stack("rpi_dist", shapes.m_tube),
        term=stack("term", shapes.m_term),
        state_tube=stack("state_tube", shapes.m_x),
        state_term=stack("state_term", shapes.m_x),
        input_tube=stack("input_tube", shapes.m_u),
        input_term=stack("input_term", shapes.m_u),
    )
    lam = lipschitz_norm(model, F)
    Z = np.abs(np.hstack([-F @ model.A, -F @ model.B, F]))
    it = SynthIterate(
        model=model, slack=Z, slack_bound=lam, gain=np.atleast_2d(gain),
        b_tube=np.asarray(b_tube, dtype=float), b_term=b_term.copy(),
        lyap=v["lyap"], perf_bound=float(v["perf_bound"][0]),
        ellipse_mult=np.maximum(v["ellipse"], MULT_FLOOR),
        eps_cover=np.ones(shapes.m_eps),  # placeholder until the cover LP runs
        mult=mult,
    )
    # solver accuracy can degrade badly when the sets are orders of magnitude
    # smaller than the definiteness margin; re-verify rather than trust it
    rep = verify_conditions(it, shapes)
    if not rep.feasible(eps_psd - 1e-9):
        fam, idx = rep.worst_block()
        raise InfeasibleInit(
            f"multiplier SDP returned an iterate violating {fam}[{idx}] "
            f"(min eigenvalue {rep.worst:.3e})")
    return it


def initial_cover(shapes, b_term):
    """Smallest coverage-ball offsets whose sum with the terminal set covers
    every state-set vertex (one LP, shared offsets across vertices)."""
    prog = ConeProgram()
    prog.add_var("eps_cover", (shapes.m_eps,))
    add_coverage_rows(prog, shapes, b_term_fixed=np.asarray(b_term))
    prog.add_obj("eps_cover", 1.0)
    res = prog.solve()
    if not res.optimal:
        raise InfeasibleInit(f"coverage LP failed: {res.solver_status}")
    return np.maximum(res.values["eps_cover"], EPS_POS)


@dataclass
class InitResult:
    iterate: SynthIterate
    shapes: FixedShapes
    report: dict


def initialize(dataset, cfg):
    """Run the whole initialization chain on a dataset under a config.

    Returns the feasible starting iterate, the frozen shape bundle (including
    the terminal normals discovered here), and a JSON-ready report. On an
    infeasible multiplier SDP the geometric margin is doubled and the
    tube/terminal/multiplier steps are retried, up to five times.
    """
    transitions = build_transitions(dataset)
    F = poly.uniform_normals(cfg.m_w)
    P_tube = poly.uniform_normals(cfg.m_tube)
    E_cover = poly.uniform_normals(cfg.m_eps)
    state_set = poly.box(cfg.state_bound, 2)
    input_set = poly.SymPolytope(np.eye(1), np.array([cfg.input_bound]))
    Q_cost = np.diag(cfg.q_cost)
    R_cost = np.atleast_2d(cfg.r_cost)

    rows = feasible_model_rows(transitions, F, cfg.theta)
    model, _, _ = initial_model_lp(rows)

    vertices = poly.vertices_2d(state_set)
    last_err = None
    for attempt in range(5):
        delta = cfg.delta_rpi * (2.0 ** attempt)
        try:
            gain, b_tube = _fit_tube_gain(model, P_tube, F, state_set,
                                          input_set, Q_cost, R_cost, delta)
            terminal = initial_terminal(model, gain,
                                        poly.SymPolytope(P_tube, b_tube),
                                        state_set, input_set, delta=delta)
            shapes = FixedShapes(
                tube_normals=P_tube, term_normals=terminal.normals,
                dist_normals=F, cover_normals=E_cover,
                state_normals=state_set.normals,
                state_offsets=state_set.offsets,
                input_normals=input_set.normals,
                input_offsets=input_set.offsets,
                state_vertices=vertices, Q_cost=Q_cost, R_cost=R_cost,
                w_tube=cfg.w_tube, w_cover=cfg.w_cover, w_perf=cfg.w_perf,
            )
            it = complete_iterate(model, gain, b_tube, terminal, shapes,
                                  eps_psd=cfg.eps_psd)
            it.eps_cover = initial_cover(shapes, terminal.offsets)
            report = _init_report(it, shapes, cfg, attempt, delta)
            return InitResult(iterate=it, shapes=shapes, report=report)
        except (InfeasibleInit, EmptyTightening, NoContraction,
                ConstraintViolation) as exc:
            last_err = exc
    raise InfeasibleInit(
        f"initialization failed after margin retries: {last_err}")


def _fit_tube_gain(model, tube_normals, dist_normals, state_set, input_set,
                   Q_cost, R_cost, delta, max_strengthen=6):
    """Initial gain and tube that respect the constraints.

    Starts from the LQR gain of the performance cost. When the resulting
    invariant tube does not fit inside the constraint sets (it fills the
    whole state set for slow closed loops and large disturbance sets), the
    input weight is cut so the feedback gets more aggressive and the tube
    shrinks; the update loop re-optimizes the gain afterwards anyway.
    """
    sys = StateSpace(model.A, model.B)
    last_err = None
    for k in range(max_strengthen + 1):
        gain = lqr_gain(sys, Q_cost, R_cost / (4.0 ** k))
        try:
            b_tube = initial_tube(model, gain, tube_normals, dist_normals,
                                  state_set, input_set, delta=delta)
            return gain, b_tube
        except (ConstraintViolation, EmptyTightening, NoContraction) as exc:
            last_err = exc
    raise ConstraintViolation(
        f"no admissible initial tube even with strengthened gain: {last_err}")


def _init_report(it, shapes, cfg, attempt, delta):
    rep = verify_conditions(it, shapes)
    return {
        "seed": cfg.seed,
        "theta": cfg.theta,
        "model": it.model.to_json(),
        "gain": it.gain.tolist(),
        "b_tube": it.b_tube.tolist(),
        "b_term": it.b_term.tolist(),
        "term_normals": shapes.term_normals.tolist(),
        "m_term": shapes.m_term,
        "eps_cover": it.eps_cover.tolist(),
        "perf_bound": it.perf_bound,
        "objective": objective_value(it, shapes),
        "objective_parts": {
            "b_tube_1": float(np.sum(it.b_tube)),
            "eps_cover_1": float(np.sum(it.eps_cover)),
            "perf_bound": it.perf_bound,
        },
        "margin_retries": attempt,
        "delta_rpi": delta,
        "residuals": rep.to_json(),
        "worst_residual": rep.worst,
    }
