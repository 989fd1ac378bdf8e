"""Sequential convex update loop over the synthesis variables.

Each step linearizes the nonlinear blocks at the current iterate, solves the
resulting SDP together with the data-consistency rows and vertex-coverage
rows, and recovers the next iterate by inverting the diagonal multiplier
variables. Because the linearized feasible set is an inner approximation that
touches the current point, every recovered iterate is feasible for the
nonlinear problem and the objective can only decrease; the loop stops when
the decrease stalls.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .lmi import (add_coverage_rows, add_linearized_blocks, objective_value,
                  recover_iterate, register_synthesis_vars, verify_conditions)
from .cone import SOLVE_PAD, ConeProgram


class SolverFailure(RuntimeError):
    """Conic solver did not return a usable optimum."""


class RecoveryError(RuntimeError):
    """Recovered iterate violates the nonlinear conditions.

    By construction this cannot happen for an exact solver; it indicates a
    numerically poisoned solution. The offending residual report is attached.
    """

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class ScpConfig:
    max_iters: int = 50
    rel_decrease_tol: float = 1e-4
    fix_model: bool = False
    eps_psd: float = 1e-7
    solver_tol: float = 1e-9
    monotone_slack: float = 1e-6


@dataclass
class IterationRecord:
    index: int
    objective: float
    b_tube_1: float
    eps_cover_1: float
    perf_bound: float
    status: str
    worst_residual: float
    solve_time: float

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class ScpReport:
    records: list = field(default_factory=list)
    iterates: list = field(default_factory=list)  # one per record
    iterate: object = None
    termination: str = ""
    degraded: bool = False

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    def to_json(self):
        return {
            "records": [r.to_json() for r in self.records],
            "termination": self.termination,
            "degraded": self.degraded,
        }

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,objective,b_tube_1,eps_cover_1,perf_bound,"
                     "status,worst_residual,solve_time\n")
            for r in self.records:
                fh.write(f"{r.index},{r.objective:.9g},{r.b_tube_1:.9g},"
                         f"{r.eps_cover_1:.9g},{r.perf_bound:.9g},{r.status},"
                         f"{r.worst_residual:.3e},{r.solve_time:.3f}\n")


def build_update_program(it, shapes, model_rows, cfg):
    """Assemble one convex update problem around the iterate."""
    prog = ConeProgram(eps_psd=cfg.eps_psd + SOLVE_PAD)
    register_synthesis_vars(prog, shapes)
    # data-consistency rows, remapped onto the program's scalar layout
    colmap = np.concatenate([prog.indices(n) for n in
                             ("A", "B", "d", "Z", "lam")])
    coo = model_rows.G.tocoo()
    prog.add_ineq_triplets(coo.row, colmap[coo.col], coo.data, model_rows.h)
    add_coverage_rows(prog, shapes)
    add_linearized_blocks(prog, it, shapes)
    prog.add_obj("b_tube", shapes.w_tube)
    prog.add_obj("eps_cover", shapes.w_cover)
    prog.add_obj("perf_bound", shapes.w_perf)
    if cfg.fix_model:
        for name, value in (("A", it.model.A), ("B", it.model.B),
                            ("d", it.model.d)):
            idx = prog.indices(name)
            vals = np.asarray(value, dtype=float).ravel()
            prog.add_eq_triplets(np.arange(idx.size), idx,
                                 np.ones(idx.size), vals)
    return prog


def scp_step(it, shapes, model_rows, cfg):
    """One convex update: solve, recover, and verify the next iterate.

    A solve that misses the requested accuracy is retried at a looser solver
    tolerance before counting as a failure; the recovered iterate is always
    re-verified against the nonlinear conditions, so accuracy concessions
    cannot leak an infeasible point into the loop.
    """
    prog = build_update_program(it, shapes, model_rows, cfg)
    res = None
    for tol in (cfg.solver_tol, 100 * cfg.solver_tol):
        res = prog.solve(tol=tol)
        if res.optimal:
            break
    if not res.optimal:
        raise SolverFailure(f"update SDP: {res.solver_status}")
    new_it = recover_iterate(res.values, shapes)
    report = verify_conditions(new_it, shapes)
    if report.worst < cfg.eps_psd - 1e-9:
        fam, idx = report.worst_block()
        raise RecoveryError(
            f"recovered iterate infeasible: block {fam}[{idx}] has min "
            f"eigenvalue {report.worst:.3e} < {cfg.eps_psd:.1e} - 1e-9",
            report,
        )
    return new_it, res, report


def run_scp(init_iterate, shapes, model_rows, cfg):
    """Iterate convex updates until the objective stalls.

    The report always contains the initialization record; on solver failure
    the last feasible iterate is kept and the report is marked degraded.
    A failed step is retried once with a ten-fold weaker definiteness margin
    before giving up.
    """
    it = init_iterate
    rep0 = verify_conditions(it, shapes)
    obj = objective_value(it, shapes)
    report = ScpReport()
    report.records.append(IterationRecord(
        index=0, objective=obj, b_tube_1=float(np.sum(it.b_tube)),
        eps_cover_1=float(np.sum(it.eps_cover)), perf_bound=it.perf_bound,
        status="init", worst_residual=rep0.worst, solve_time=0.0))
    report.iterates.append(it)
    report.iterate = it
    if cfg.max_iters == 0:
        report.termination = "iteration-budget"
        return report

    for k in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        try:
            new_it, res, cond = scp_step(it, shapes, model_rows, cfg)
        except SolverFailure:
            relaxed = ScpConfig(**{**cfg.__dict__, "eps_psd": cfg.eps_psd / 10})
            try:
                new_it, res, cond = scp_step(it, shapes, model_rows, relaxed)
            except SolverFailure as exc2:
                report.termination = f"solver-failure: {exc2}"
                report.degraded = True
                return report
        wall = time.perf_counter() - t0
        new_obj = objective_value(new_it, shapes)
        if new_obj > obj + cfg.monotone_slack:
            # no reduction: the loop's own termination rule. Near a fixed
            # point the update problem's optimum can sit a solver-tolerance
            # above the current value, so this is a normal exit; the last
            # recorded iterate stays the result.
            report.termination = "converged"
            return report
        report.records.append(IterationRecord(
            index=k, objective=new_obj,
            b_tube_1=float(np.sum(new_it.b_tube)),
            eps_cover_1=float(np.sum(new_it.eps_cover)),
            perf_bound=new_it.perf_bound, status=res.status,
            worst_residual=cond.worst, solve_time=wall))
        report.iterates.append(new_it)
        drop = obj - new_obj
        it, obj = new_it, new_obj
        report.iterate = it
        if drop < cfg.rel_decrease_tol * max(1.0, abs(obj)):
            report.termination = "converged"
            return report
    report.termination = "iteration-budget"
    return report
