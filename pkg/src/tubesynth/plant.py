"""Ground-truth nonlinear mass-spring-damper plant and dataset machinery.

The plant is a forced oscillator with quadratic spring/damper terms, an
exogenous force disturbance, and physical parameters that are re-drawn at
every sample instant — so an LTI model can only explain its transitions up to
a bounded residual. Integration is fixed-step RK4 (10 substeps per sample)
rather than an adaptive scheme: runs are bit-reproducible under a seed, and
the per-step error is far below the disturbance floor.
"""

from dataclasses import dataclass, field

import numpy as np


class DivergedSimulation(RuntimeError):
    """State left the finite range during integration."""


@dataclass(frozen=True)
class MsdParams:
    """Mass-spring-damper configuration.

    ``mass``, ``stiffness``, ``damping`` are nominal values; when
    ``param_range`` is set they are re-drawn uniformly from it at every
    sample instant and held for the interval (zero-order hold), as is the
    force disturbance in (-force_bound, force_bound).
    """

    mass: float = 0.5
    stiffness: float = 0.5
    damping: float = 0.5
    k_nl: float = 0.12
    c_nl: float = 0.12
    force_bound: float = 0.12
    param_range: tuple = (0.44, 0.56)
    sample_period: float = 0.1
    rng_seed: int = 1
    substeps: int = 10

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.param_range is not None:
            lo, hi = self.param_range
            if not (0 < lo <= hi):
                raise ValueError("param_range must lie in (0, inf)")


@dataclass(frozen=True)
class Dataset:
    """State-input record of length T: states (T, n_x), inputs (T, n_u)."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if states.shape[0] != inputs.shape[0]:
            raise ValueError("states and inputs must have equal length")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def length(self):
        return self.states.shape[0]


@dataclass(frozen=True)
class TransitionSet:
    """Measured transitions as stacked (x, u, x_next) rows."""

    triples: np.ndarray  # (count, 2 n_x + n_u)
    n_x: int
    n_u: int

    def __post_init__(self):
        triples = np.atleast_2d(np.asarray(self.triples, dtype=float))
        if triples.shape[1] != 2 * self.n_x + self.n_u:
            raise ValueError("triple width must be 2 n_x + n_u")
        object.__setattr__(self, "triples", triples)

    def __len__(self):
        return self.triples.shape[0]

    def split(self):
        """Views (x, u, x_next) with shapes (T-1, n_x), (T-1, n_u), (T-1, n_x)."""
        nx, nu = self.n_x, self.n_u
        return (
            self.triples[:, :nx],
            self.triples[:, nx:nx + nu],
            self.triples[:, nx + nu:],
        )


def _drift(state, u, m, k, c, k_nl, c_nl, f_dist):
    pos, vel = state
    acc = (u - k * pos - k_nl * pos * pos - c * vel - c_nl * vel * vel - f_dist) / m
    return np.array([vel, acc])


def step_msd(params, x, u, rng=None):
    """One sample-period step of the plant from state x under held input u.

    When ``rng`` is given, physical parameters and the force disturbance are
    re-drawn for the interval; otherwise the nominal values and zero
    disturbance are used (the exact-LTI case when k_nl = c_nl = 0).
    """
    if rng is not None and params.param_range is not None:
        m, k, c = rng.uniform(*params.param_range, size=3)
    else:
        m, k, c = params.mass, params.stiffness, params.damping
    if rng is not None and params.force_bound > 0:
        f_dist = rng.uniform(-params.force_bound, params.force_bound)
    else:
        f_dist = 0.0
    u = float(np.asarray(u).ravel()[0])
    h = params.sample_period / params.substeps
    x = np.asarray(x, dtype=float).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(params.substeps):
            k1 = _drift(x, u, m, k, c, params.k_nl, params.c_nl, f_dist)
            k2 = _drift(x + 0.5 * h * k1, u, m, k, c, params.k_nl,
                        params.c_nl, f_dist)
            k3 = _drift(x + 0.5 * h * k2, u, m, k, c, params.k_nl,
                        params.c_nl, f_dist)
            k4 = _drift(x + h * k3, u, m, k, c, params.k_nl, params.c_nl,
                        f_dist)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise DivergedSimulation(f"state diverged: {x}")
    return x


def simulate_msd(params, steps, excitation=2.0, input_bound=2.5, x0=None,
                 randomize=True):
    """Generate a length-``steps`` dataset under an excitation policy.

    ``excitation`` is either an amplitude a (input drawn uniformly from
    [-a, a] each sample) or a callable (rng, t, x) -> u. Inputs are clipped
    to ``input_bound``. The initial state defaults to the origin.
    """
    if steps < 2:
        raise ValueError("need at least 2 samples to form a transition")
    rng = np.random.default_rng(params.rng_seed)
    draw_rng = rng if randomize else None
    if callable(excitation):
        policy = excitation
    else:
        amp = float(excitation)
        policy = lambda r, t, x: r.uniform(-amp, amp)
    x = np.zeros(2) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.zeros((steps, 2))
    inputs = np.zeros((steps, 1))
    for t in range(steps):
        u = float(np.clip(policy(rng, t, x), -input_bound, input_bound))
        states[t] = x
        inputs[t, 0] = u
        if t + 1 < steps:
            try:
                x = step_msd(params, x, u, rng=draw_rng)
            except DivergedSimulation as exc:
                raise DivergedSimulation(f"at sample {t}: {exc}") from exc
    return Dataset(states, inputs)


def build_transitions(dataset):
    """Stack the T-1 measured (x, u, x_next) triples in time order."""
    if dataset.length < 2:
        raise ValueError("dataset too short for transitions")
    x = dataset.states
    u = dataset.inputs
    triples = np.hstack([x[:-1], u[:-1], x[1:]])
    return TransitionSet(triples, n_x=x.shape[1], n_u=u.shape[1])


def hausdorff_inf(dense, sample):
    """One-sided Hausdorff distance max_{z* in dense} min_{z in sample} |z - z*|_inf.

    This brute-force scan is itself the reference oracle for coverage
    arguments: it is zero iff every dense point appears in the sample, and it
    can only shrink as the sample grows.
    """
    A = np.atleast_2d(dense.triples if isinstance(dense, TransitionSet) else dense)
    B = np.atleast_2d(sample.triples if isinstance(sample, TransitionSet) else sample)
    if B.shape[0] == 0:
        raise ValueError("sample set is empty")
    if A.shape[1] != B.shape[1]:
        raise ValueError("triple dimension mismatch")
    worst = 0.0
    # chunk the dense side to bound memory on large grids
    for start in range(0, A.shape[0], 2048):
        blk = A[start:start + 2048]
        gaps = np.abs(blk[:, None, :] - B[None, :, :]).max(axis=2).min(axis=1)
        worst = max(worst, float(gaps.max()))
    return worst


def write_dataset_csv(dataset, path):
    t = np.arange(dataset.length)
    table = np.column_stack([t, dataset.states, dataset.inputs])
    np.savetxt(path, table, delimiter=",", header="t,x1,x2,u", comments="")


def read_dataset_csv(path):
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Dataset(table[:, 1:3], table[:, 3:4])
