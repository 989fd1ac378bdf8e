"""Pipeline orchestration: gen-data, init, synthesize, validate, mpc-sim,
report, run.

Every stage reads and writes plain JSON/CSV artifacts in the output
directory, so stages can be re-run independently and inspected with standard
tools. The RNG seed is recorded in every artifact. Exit codes: 0 ok,
2 infeasible, 3 solver failure, 4 bad input.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import polytope as poly
from .config import PipelineConfig
from .initialization import (InfeasibleInit, NoContraction, initialize,
                             EmptyTightening, ConstraintViolation)
from .lmi import (iterate_from_json, iterate_to_json, shapes_from_json,
                  shapes_to_json)
from .model_set import InfeasibleModelSet, check_membership
from .plant import (MsdParams, build_transitions, read_dataset_csv,
                    simulate_msd, write_dataset_csv)
from .scp import ScpConfig, SolverFailure, run_scp
from .model_set import feasible_model_rows
from .tube_mpc import MpcInfeasible, build_tightened, closed_loop

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EXIT_BAD_INPUT = 4


def _plant_params(cfg):
    return MsdParams(
        mass=cfg.mass, stiffness=cfg.stiffness, damping=cfg.damping,
        k_nl=cfg.k_nl, c_nl=cfg.c_nl, force_bound=cfg.force_bound,
        param_range=(cfg.param_lo, cfg.param_hi),
        sample_period=cfg.sample_period, rng_seed=cfg.seed,
    )


def _state_input_sets(cfg):
    X = poly.box(cfg.state_bound, 2)
    U = poly.SymPolytope(np.eye(1), np.array([cfg.input_bound]))
    return X, U


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def _need(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path} (run earlier stages)")
    return path


def stage_gen_data(cfg, out):
    params = _plant_params(cfg)
    ds = simulate_msd(params, cfg.T, excitation=cfg.excitation_amplitude,
                      input_bound=cfg.input_bound)
    write_dataset_csv(ds, out / "dataset.csv")
    val_params = MsdParams(**{**params.__dict__, "rng_seed": cfg.seed + 1})
    val = simulate_msd(val_params, cfg.validation_T,
                       excitation=cfg.excitation_amplitude,
                       input_bound=cfg.input_bound)
    write_dataset_csv(val, out / "validation.csv")
    _write_json(out / "gen_data.json", {
        "seed": cfg.seed, "T": cfg.T, "validation_T": cfg.validation_T,
        "excitation_amplitude": cfg.excitation_amplitude,
    })
    return ds


def stage_init(cfg, out):
    ds = read_dataset_csv(_need(out / "dataset.csv", "dataset"))
    res = initialize(ds, cfg)
    _write_json(out / "init_report.json", res.report)
    _write_json(out / "iterate_init.json", iterate_to_json(res.iterate))
    _write_json(out / "shapes.json", shapes_to_json(res.shapes))
    return res


def stage_synthesize(cfg, out, fix_model=False):
    ds = read_dataset_csv(_need(out / "dataset.csv", "dataset"))
    it = iterate_from_json(json.load(open(_need(out / "iterate_init.json",
                                                "init iterate"))))
    shapes = shapes_from_json(json.load(open(_need(out / "shapes.json",
                                                   "shape bundle"))))
    rows = feasible_model_rows(build_transitions(ds), shapes.dist_normals,
                               cfg.theta)
    scfg = ScpConfig(max_iters=cfg.max_iters,
                     rel_decrease_tol=cfg.rel_decrease_tol,
                     fix_model=fix_model, eps_psd=cfg.eps_psd)
    rep = run_scp(it, shapes, rows, scfg)
    tag = "fix" if fix_model else "adapt"
    payload = rep.to_json()
    payload["seed"] = cfg.seed
    payload["theta"] = cfg.theta
    payload["mode"] = tag
    _write_json(out / f"scp_{tag}.json", payload)
    rep.write_csv(out / f"scp_{tag}.csv")
    _write_json(out / f"iterate_{tag}.json", iterate_to_json(rep.iterate))
    if rep.degraded:
        raise SolverFailure(f"synthesis degraded: {rep.termination}")
    return rep


def _load_result_iterate(out, prefer=("adapt", "fix", "init")):
    for tag in prefer:
        p = out / f"iterate_{tag}.json"
        if p.exists():
            return iterate_from_json(json.load(open(p))), tag
    raise FileNotFoundError(f"no synthesized iterate in {out}")


def stage_validate(cfg, out):
    it, tag = _load_result_iterate(out)
    val = read_dataset_csv(_need(out / "validation.csv", "validation dataset"))
    transitions = build_transitions(val)
    shapes = shapes_from_json(json.load(open(_need(out / "shapes.json",
                                                   "shape bundle"))))
    rep = check_membership(it.model, transitions, shapes.dist_normals,
                           cfg.theta)
    payload = rep.to_json()
    payload.update(seed=cfg.seed, iterate=tag, theta=cfg.theta)
    _write_json(out / "validate.json", payload)
    return rep


def stage_mpc_sim(cfg, out):
    it, tag = _load_result_iterate(out)
    shapes = shapes_from_json(json.load(open(_need(out / "shapes.json",
                                                   "shape bundle"))))
    X, U = _state_input_sets(cfg)
    tube = poly.SymPolytope(shapes.tube_normals, it.b_tube)
    term = poly.SymPolytope(shapes.term_normals, it.b_term)
    problem = build_tightened(it.model, it.gain, tube, term, X, U,
                              horizon=cfg.horizon, Q_cost=shapes.Q_cost,
                              R_cost=shapes.R_cost)
    dist = poly.SymPolytope(shapes.dist_normals, it.model.d)
    params = _plant_params(cfg)
    rng = np.random.default_rng(cfg.seed + 2)
    vertices = poly.vertices_2d(term)
    x0 = vertices[0] * 0.99
    log = closed_loop(problem, params, dist, X, U, x0, cfg.mpc_steps, rng)
    log.write_csv(out / "mpc_sim.csv")
    summary = log.to_json()
    summary.update(seed=cfg.seed, iterate=tag, x0=x0.tolist())
    _write_json(out / "mpc_summary.json", summary)
    return log


def stage_report(cfg, out):
    rows = []
    for tag, label in (("init", "Initial"), ("adapt", "Adapt"),
                       ("fix", "Fix")):
        p = out / f"iterate_{tag}.json"
        if tag == "init":
            p = out / "iterate_init.json"
        if not p.exists():
            continue
        it = iterate_from_json(json.load(open(p)))
        rows.append((label, float(np.sum(it.b_tube)),
                     float(np.sum(it.eps_cover)), it.perf_bound))
    if not rows:
        raise FileNotFoundError(f"no synthesis artifacts in {out}")
    with open(out / "report_table.csv", "w") as fh:
        fh.write("variant,b_tube_1,eps_cover_1,perf_bound,objective\n")
        for label, b1, e1, r in rows:
            obj = cfg.w_tube * b1 + cfg.w_cover * e1 + cfg.w_perf * r
            fh.write(f"{label},{b1:.6g},{e1:.6g},{r:.6g},{obj:.6g}\n")
    lines = ["| variant | tube offsets (sum) | cover offsets (sum) | "
             "performance bound | objective |",
             "|---|---|---|---|---|"]
    for label, b1, e1, r in rows:
        obj = cfg.w_tube * b1 + cfg.w_cover * e1 + cfg.w_perf * r
        lines.append(f"| {label} | {b1:.4g} | {e1:.4g} | {r:.4g} | {obj:.4g} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    shapes = shapes_from_json(json.load(open(_need(out / "shapes.json",
                                                   "shape bundle"))))
    X, _ = _state_input_sets(cfg)
    poly.write_vertices_csv(X, out / "vertices_state_set.csv")
    for tag in ("init", "adapt", "fix"):
        p = out / f"iterate_{tag}.json"
        if not p.exists():
            continue
        it = iterate_from_json(json.load(open(p)))
        poly.write_vertices_csv(
            poly.SymPolytope(shapes.tube_normals, it.b_tube),
            out / f"vertices_tube_{tag}.csv")
        poly.write_vertices_csv(
            poly.SymPolytope(shapes.term_normals, it.b_term),
            out / f"vertices_terminal_{tag}.csv")
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="tubesynth",
        description="Identify a model, gain, and invariant sets for tube "
                    "MPC from data, then validate in closed loop.")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config file (defaults reproduce the "
                             "reference study)")
    parser.add_argument("--out", type=str, default="artifacts",
                        help="artifact directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--theta", type=float, default=None,
                        help="override the coverage margin")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="simulate the plant, write datasets")
    sub.add_parser("init", help="fit model, build tube/terminal, multipliers")
    ps = sub.add_parser("synthesize", help="run the convex update loop")
    ps.add_argument("--fix-model", action="store_true",
                    help="pin the model to its initial value")
    sub.add_parser("validate", help="check the model on held-out data")
    sub.add_parser("mpc-sim", help="closed-loop run against the plant")
    sub.add_parser("report", help="comparison table and vertex dumps")
    pr = sub.add_parser("run", help="all stages, adaptive and fixed")
    pr.add_argument("--skip-fixed", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = (PipelineConfig.load(args.config) if args.config
               else PipelineConfig())
        if args.seed is not None:
            cfg.seed = args.seed
        if args.theta is not None:
            cfg.theta = args.theta
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config_used.json")

    try:
        if args.command == "gen-data":
            stage_gen_data(cfg, out)
        elif args.command == "init":
            stage_init(cfg, out)
        elif args.command == "synthesize":
            stage_synthesize(cfg, out, fix_model=args.fix_model)
        elif args.command == "validate":
            rep = stage_validate(cfg, out)
            print("validation:", "ok" if rep.ok else
                  f"{rep.violating.size} violating transitions")
        elif args.command == "mpc-sim":
            log = stage_mpc_sim(cfg, out)
            print("mpc-sim:", json.dumps(log.to_json()))
        elif args.command == "report":
            stage_report(cfg, out)
        elif args.command == "run":
            stage_gen_data(cfg, out)
            stage_init(cfg, out)
            stage_synthesize(cfg, out, fix_model=False)
            if not args.skip_fixed:
                stage_synthesize(cfg, out, fix_model=True)
            stage_validate(cfg, out)
            stage_mpc_sim(cfg, out)
            stage_report(cfg, out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (InfeasibleModelSet, InfeasibleInit, EmptyTightening,
            NoContraction, ConstraintViolation, MpcInfeasible,
            poly.EmptyDifference) as exc:
        print(f"error ({args.command}): infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        print(f"error ({args.command}): solver failure: {exc}",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
