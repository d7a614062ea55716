"""Shared fixtures: the reference hard-braking scenario and one dense
golden simulation reused by every per-trajectory check."""

import json
from pathlib import Path

import numpy as np
import pytest

from xbstab import (ControllerConfig, HSchedule, PlantParams, SolverConfig,
                    complete_gains, simulate, solve_common_lyapunov)

SCENARIO_PATH = (Path(__file__).resolve().parent.parent / "src" / "xbstab"
                 / "scenarios" / "abs_dry_road.json")


@pytest.fixture(scope="session")
def sv_params():
    return PlantParams(a=375.0, c=24.0, d=12.5)


@pytest.fixture(scope="session")
def sv_gains(sv_params):
    return complete_gains(sv_params, k1_plus=40.0, k2_plus=-3.0)


@pytest.fixture(scope="session")
def sv_cert(sv_gains):
    return solve_common_lyapunov(sv_gains)


@pytest.fixture(scope="session")
def sv_cfg():
    return ControllerConfig(z_star_init=75.0, k_prime=1.0, epsilon=0.01,
                            R=1.0, R_tilde=0.5,
                            h_schedule=HSchedule.paper_v(), max_cycles=9)


@pytest.fixture(scope="session")
def sv_solver():
    return SolverConfig(rel_tol=1e-9, abs_tol=1e-10, event_tol=1e-9,
                        max_step=5.4e-5, t_end=1.5)


@pytest.fixture(scope="session")
def sv_initial():
    return np.array([0.0, 0.3]), np.array([0.0, 0.7])


@pytest.fixture(scope="session")
def golden_run(sv_params, sv_gains, sv_cert, sv_cfg, sv_solver, sv_initial):
    """Dense 1.5-second run of the hard-braking scenario (k = 500).

    Covers the initialization cycle and cycles 1-2 completely plus the
    start of cycle 3; every sample satisfies the recording contracts.
    """
    z0, z_hat0 = sv_initial
    return simulate(sv_params, sv_gains, sv_cert, sv_cfg, sv_solver,
                    z0, z_hat0, k=500.0)


@pytest.fixture(scope="session")
def scenario_dict():
    with open(SCENARIO_PATH, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture()
def short_scenario(tmp_path, scenario_dict):
    """A fast variant of the bundled scenario (20 ms horizon)."""
    cfg = json.loads(json.dumps(scenario_dict))
    cfg["solver"]["t_end"] = 0.02
    path = tmp_path / "short.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path
