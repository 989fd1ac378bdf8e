"""tubesynth: identify an uncertain linear model, a feedback gain, and the
invariant sets of a tube-based robust MPC controller, concurrently, from
state-input data."""

from .config import PipelineConfig
from .control import StateSpace, lqr_gain, solve_dare, spectral_radius
from .initialization import initialize
from .lmi import FixedShapes, SynthIterate, objective_value, verify_conditions
from .model_set import ModelTriple, check_membership, feasible_model_rows
from .plant import Dataset, MsdParams, TransitionSet, build_transitions, simulate_msd
from .polytope import Ellipsoid, SymPolytope
from .scp import ScpConfig, run_scp
from .tube_mpc import TubeMpcProblem, build_tightened, closed_loop, mpc_step

__all__ = [
    "PipelineConfig", "StateSpace", "lqr_gain", "solve_dare",
    "spectral_radius", "initialize", "FixedShapes", "SynthIterate",
    "objective_value", "verify_conditions", "ModelTriple", "check_membership",
    "feasible_model_rows", "Dataset", "MsdParams", "TransitionSet",
    "build_transitions", "simulate_msd", "Ellipsoid", "SymPolytope",
    "ScpConfig", "run_scp", "TubeMpcProblem", "build_tightened",
    "closed_loop", "mpc_step",
]

__version__ = "0.1.0"
