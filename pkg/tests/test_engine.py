"""Unit tests for initialization, flow-segment integration and the hybrid
execution loop, with a scipy reference integration as oracle."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from xbstab import (BadInitialBall, HybridState, JumpKind, SolverConfig,
                    ZenoSuspected, flow_map, initialize, integrate_flow,
                    simulate)
from xbstab.engine import _Recorder, _run_segment, initial_cycle
from xbstab.model import g_of

from test_model import make_cfg


class TestInitialCycle:
    def test_zero_error_caps_at_max_cycles(self, sv_cert):
        cfg = make_cfg(R_tilde=0.0, max_cycles=9)
        assert initial_cycle(cfg, sv_cert.gamma) == 9

    def test_thresholds_follow_contraction_schedule(self, sv_cert):
        gamma = sv_cert.gamma
        for i0 in range(0, 5):
            cfg_probe = make_cfg()
            hi = cfg_probe.epsilon * g_of(cfg_probe, i0 - 1) / gamma \
                if i0 >= 1 else math.inf
            lo = cfg_probe.epsilon * g_of(cfg_probe, i0) / gamma
            r = 0.5 * (lo + hi) if math.isfinite(hi) else 2 * lo
            cfg = make_cfg(R_tilde=r)
            assert initial_cycle(cfg, gamma) == i0, f"R_tilde={r}"


class TestInitialize:
    def test_nominal_start(self, sv_params, sv_gains, sv_cert):
        cfg = make_cfg()
        s = initialize(sv_params, sv_gains, sv_cert, cfg,
                       [0.0, 0.3], [0.0, 0.7])
        assert s.cycle == 0 and s.z_star == 75.0
        assert s.tau == 0.0
        assert np.allclose(s.z_tilde, [0.0, 0.4])
        assert np.array_equal(s.phi, np.eye(2))

    def test_skipped_cycles_set_opposing_reference(self, sv_params,
                                                   sv_gains, sv_cert):
        cfg = make_cfg(R_tilde=1e-4)
        i0 = initial_cycle(cfg, sv_cert.gamma)
        assert i0 >= 1
        up = initialize(sv_params, sv_gains, sv_cert, cfg,
                        [0.0, 0.3], [0.0, 0.3 - 1e-4])   # zhat2 > 0? no: .2999
        assert up.cycle == i0
        assert up.z_star == -75.0 / 2.0 ** i0            # zhat2 positive
        down = initialize(sv_params, sv_gains, sv_cert, cfg,
                          [0.0, -0.3], [0.0, -0.3 + 1e-4])
        assert down.z_star == 75.0 / 2.0 ** i0           # zhat2 negative

    @pytest.mark.parametrize("z0,z_hat0", [
        ([3.0, 0.0], [3.0, 0.1]),          # |z0| > R
        ([0.0, 0.3], [0.0, 1.5]),          # |z_hat0 - z0| > R_tilde
        ([0.0, -0.6], [0.0, -0.2]),        # z2 below -d/c
        ([0.0], [0.0, 0.0]),               # wrong shape
    ])
    def test_rejections(self, sv_params, sv_gains, sv_cert, z0, z_hat0):
        with pytest.raises(BadInitialBall):
            initialize(sv_params, sv_gains, sv_cert, make_cfg(),
                       z0, z_hat0)


def _off_guard_state(sv_params, sv_gains, sv_cert):
    cfg = make_cfg()
    return cfg, initialize(sv_params, sv_gains, sv_cert, cfg,
                           [0.5, 0.3], [0.5, 0.35])


class TestIntegrateFlow:
    def test_matches_reference_integrator(self, sv_params, sv_gains,
                                          sv_cert):
        cfg, state = _off_guard_state(sv_params, sv_gains, sv_cert)
        t_end = 5e-4
        solver = SolverConfig(max_step=5.4e-5, t_end=t_end)
        seg, event = integrate_flow(sv_params, sv_gains, sv_cert, cfg,
                                    solver, state, 0.0, 0, k=500.0)
        assert event is None
        assert seg.t[0] == 0.0 and seg.t[-1] == pytest.approx(t_end)

        def rhs(_, y):
            s = HybridState(tau=max(y[0], 0.0), cycle=0, z=y[1:3],
                            z_tilde=y[3:5], z_star=75.0,
                            phi=y[5:9].reshape(2, 2))
            d = flow_map(sv_params, sv_gains, 500.0, s)
            return [d.d_tau, d.d_z1, d.d_z2, *d.d_z_tilde,
                    *d.d_phi.ravel()]

        y0 = [0.0, 0.5, 0.3, 0.0, 0.05, 1.0, 0.0, 0.0, 1.0]
        ref = solve_ivp(rhs, (0.0, t_end), y0, rtol=1e-12, atol=1e-14,
                        method="DOP853").y[:, -1]
        got = np.array([seg.tau[-1], seg.z1[-1], seg.z2[-1],
                        seg.z_tilde1[-1], seg.z_tilde2[-1], *seg.phi[-1]])
        assert np.allclose(got, ref, rtol=1e-7, atol=1e-10)

    def test_event_localization(self, sv_params, sv_gains, sv_cert):
        cfg, state = _off_guard_state(sv_params, sv_gains, sv_cert)
        solver = SolverConfig(max_step=5.4e-5, t_end=0.05, event_tol=1e-9)
        seg, event = integrate_flow(sv_params, sv_gains, sv_cert, cfg,
                                    solver, state, 0.0, 0, k=500.0)
        assert event is not None and event.guard == "Dc"
        assert 0.0 < event.t < 0.05
        assert event.bracket_width <= 1e-9
        assert seg.t[-1] == pytest.approx(event.t)
        # at the event, the estimate has reached the threshold band
        thr = sv_params.d / sv_params.c
        zhat2 = seg.z2[-1] + seg.z_tilde2[-1]
        assert zhat2 == pytest.approx(thr, abs=1e-5)

    def test_buffer_resume_is_seamless(self, sv_params, sv_gains, sv_cert):
        """A tiny work buffer forces mid-segment resumes; the recorded
        samples must be identical to a single-pass run."""
        cfg, state = _off_guard_state(sv_params, sv_gains, sv_cert)
        solver = SolverConfig(max_step=5.4e-5, t_end=5e-4)
        big = _Recorder()
        code_a, t_a, end_a, _ = _run_segment(
            sv_params, sv_gains, sv_cert, cfg, solver, 500.0, state, 0.0,
            big, 0, np.empty((1 << 17, 10)))
        small = _Recorder()
        code_b, t_b, end_b, _ = _run_segment(
            sv_params, sv_gains, sv_cert, cfg, solver, 500.0, state, 0.0,
            small, 0, np.empty((4200, 10)))
        assert code_a == code_b and t_a == pytest.approx(t_b)
        assert np.allclose(end_a.z, end_b.z, rtol=1e-9)
        assert np.allclose(end_a.z_tilde, end_b.z_tilde,
                           rtol=1e-9, atol=1e-12)
        ta = np.concatenate([b[0][:, 0] for b in big.blocks])
        tb = np.concatenate([b[0][:, 0] for b in small.blocks])
        # the resumed run re-anchors and restarts its step controller, so
        # the sample grids differ; both must still be ordered recordings
        # of the same solution over the same span
        assert np.all(np.diff(ta) >= 0) and np.all(np.diff(tb) >= 0)
        assert ta[0] == tb[0] and ta[-1] == pytest.approx(tb[-1])
        za = np.concatenate([b[0][:, 2] for b in big.blocks])
        zb = np.concatenate([b[0][:, 2] for b in small.blocks])
        common = np.linspace(0.0, min(ta[-1], tb[-1]), 200)
        assert np.allclose(np.interp(common, ta, za),
                           np.interp(common, tb, zb), rtol=1e-6, atol=1e-9)


class TestSimulate:
    def test_jump_bookkeeping(self, golden_run):
        traj = golden_run
        assert traj.j[0] == 0
        assert len(traj.jumps) == traj.j[-1]
        for jr in traj.jumps:
            pre = np.searchsorted(traj.j, jr.j + 1) - 1
            post = pre + 1
            assert traj.t[pre] == traj.t[post] == pytest.approx(jr.t)
            assert traj.z1[pre] == traj.z1[post]
            assert traj.z2[pre] == traj.z2[post]
            assert traj.z_tilde1[pre] == traj.z_tilde1[post]
            assert traj.z_tilde2[pre] == traj.z_tilde2[post]
            if jr.kind is JumpKind.WITHIN_CYCLE:
                assert traj.z_star[post] == -traj.z_star[pre]
                assert traj.cycle[post] == traj.cycle[pre]
                assert traj.tau[post] == traj.tau[pre]
            else:
                assert traj.z_star[post] == traj.z_star[pre] / 2.0
                assert traj.cycle[post] == traj.cycle[pre] + 1
                assert traj.tau[post] == 0.0
                assert np.array_equal(traj.phi[post], [1.0, 0.0, 0.0, 1.0])

    def test_cycles_monotone_and_reach_two(self, golden_run):
        c = golden_run.cycle
        assert np.all(np.diff(c) >= 0)
        assert c[0] == 0 and c[-1] >= 2

    def test_tau_nondecreasing_within_cycles(self, golden_run):
        same_cycle = np.diff(golden_run.cycle) == 0
        assert np.all(np.diff(golden_run.tau)[same_cycle] >= -1e-15)

    def test_zeno_guard_trips_on_tight_budget(self, sv_params, sv_gains,
                                              sv_cert, sv_initial):
        z0, z_hat0 = sv_initial
        solver = SolverConfig(max_step=5.4e-5, t_end=0.12,
                              zeno_window=1.0, zeno_max_jumps=2)
        with pytest.raises(ZenoSuspected):
            simulate(sv_params, sv_gains, sv_cert, make_cfg(), solver,
                     z0, z_hat0, k=500.0)

    def test_max_cycles_stops_the_run(self, sv_params, sv_gains, sv_cert,
                                      sv_initial):
        z0, z_hat0 = sv_initial
        cfg = make_cfg(max_cycles=1)
        solver = SolverConfig(max_step=5.4e-5, t_end=0.5)
        traj = simulate(sv_params, sv_gains, sv_cert, cfg, solver,
                        z0, z_hat0, k=500.0)
        assert traj.cycle.max() == 1
        assert traj.t[-1] < 0.5    # stopped by the cycle cap, not time
