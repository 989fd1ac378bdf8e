"""Pipeline configuration: one flat key-value record, JSON on disk.

Defaults reproduce the reference mass-spring-damper study end to end. The
terminal-set facet count is intentionally absent: those normals are an output
of the maximal-invariant-set recursion at initialization and are recorded in
the init report instead.
"""

import json
from dataclasses import asdict, dataclass, fields


@dataclass
class PipelineConfig:
    # plant and dataset generation
    mass: float = 0.5
    stiffness: float = 0.5
    damping: float = 0.5
    k_nl: float = 0.12
    c_nl: float = 0.12
    force_bound: float = 0.12
    param_lo: float = 0.44
    param_hi: float = 0.56
    sample_period: float = 0.1
    T: int = 1000
    validation_T: int = 200
    seed: int = 1
    excitation_amplitude: float = 2.5

    # constraint sets (axis-aligned max-norm boxes)
    state_bound: float = 0.8
    input_bound: float = 2.5

    # fixed facet counts
    m_w: int = 10
    m_tube: int = 10
    m_eps: int = 10

    # identification margin
    theta: float = 1e-3

    # objective weights and performance cost
    w_tube: float = 1.0
    w_cover: float = 1.0
    w_perf: float = 0.1
    q_cost: tuple = (1.0, 15.0)
    r_cost: float = 1.0

    # tolerances and solver knobs
    eps_psd: float = 1e-7
    delta_rpi: float = 1e-3
    rel_decrease_tol: float = 1e-4
    max_iters: int = 50

    # receding-horizon controller
    horizon: int = 10
    mpc_steps: int = 100

    def to_json(self):
        d = asdict(self)
        d["q_cost"] = list(self.q_cost)
        return d

    @staticmethod
    def from_json(obj):
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "q_cost" in kwargs:
            kwargs["q_cost"] = tuple(kwargs["q_cost"])
        return PipelineConfig(**kwargs)

    @staticmethod
    def load(path):
        with open(path) as fh:
            return PipelineConfig.from_json(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
