"""Shared fixtures: the reference-configuration pipeline is expensive, so the
dataset, initialization, and both synthesis runs are computed once per
session and reused across module and acceptance tests."""

import numpy as np
import pytest

from tubesynth import PipelineConfig, MsdParams, simulate_msd
from tubesynth.initialization import initialize
from tubesynth.model_set import feasible_model_rows
from tubesynth.plant import build_transitions
from tubesynth.scp import ScpConfig, run_scp


@pytest.fixture(scope="session")
def default_cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def plant_params(default_cfg):
    cfg = default_cfg
    return MsdParams(
        mass=cfg.mass, stiffness=cfg.stiffness, damping=cfg.damping,
        k_nl=cfg.k_nl, c_nl=cfg.c_nl, force_bound=cfg.force_bound,
        param_range=(cfg.param_lo, cfg.param_hi),
        sample_period=cfg.sample_period, rng_seed=cfg.seed)


@pytest.fixture(scope="session")
def dataset(default_cfg, plant_params):
    return simulate_msd(plant_params, default_cfg.T,
                        excitation=default_cfg.excitation_amplitude,
                        input_bound=default_cfg.input_bound)


@pytest.fixture(scope="session")
def init_result(dataset, default_cfg):
    return initialize(dataset, default_cfg)


@pytest.fixture(scope="session")
def model_rows(dataset, init_result, default_cfg):
    return feasible_model_rows(build_transitions(dataset),
                               init_result.shapes.dist_normals,
                               default_cfg.theta)


def _run(init_result, model_rows, cfg, fix_model):
    scfg = ScpConfig(max_iters=cfg.max_iters,
                     rel_decrease_tol=cfg.rel_decrease_tol,
                     fix_model=fix_model, eps_psd=cfg.eps_psd)
    return run_scp(init_result.iterate, init_result.shapes, model_rows, scfg)


@pytest.fixture(scope="session")
def scp_adapt(init_result, model_rows, default_cfg):
    return _run(init_result, model_rows, default_cfg, fix_model=False)


@pytest.fixture(scope="session")
def scp_fix(init_result, model_rows, default_cfg):
    return _run(init_result, model_rows, default_cfg, fix_model=True)
