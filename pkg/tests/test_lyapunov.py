"""Unit tests for gain completion, the common Lyapunov certificate and the
constructive dwell/decay constants."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xbstab import (InvalidGains, NoCertificate, PlantParams,
                    complete_gains, dwell_certificate,
                    dwell_time_lower_bound, solve_common_lyapunov)
from xbstab.lyapunov import (_place_output_injection, decay_certificate)

from test_model import make_cfg


class TestCompleteGains:
    def test_reference_scenario_exact(self, sv_params):
        g = complete_gains(sv_params, 40.0, -3.0)
        assert g.k1_minus == 8.0
        assert g.k2_minus == -357.0 / 375.0

    def test_unit_example(self):
        p = PlantParams(a=1.0, c=1.0, d=1.0)
        g = complete_gains(p, 2.0, -3.0)
        assert g.k1_minus == 0.0
        assert g.k2_minus == -1.0

    def test_precondition_rejection(self, sv_params):
        with pytest.raises(InvalidGains):
            complete_gains(sv_params, 20.0, -3.0)          # k1+ <= c
        with pytest.raises(InvalidGains):
            complete_gains(sv_params, 40.0, -1.0)          # k2+ too large

    @given(st.floats(min_value=1.0, max_value=500.0),
           st.floats(min_value=0.5, max_value=50.0),
           st.floats(min_value=1.01, max_value=5.0),
           st.floats(min_value=1.01, max_value=10.0))
    def test_equalities_hold_generically(self, a, c, r1, r2):
        p = PlantParams(a=a, c=c, d=1.0)
        k1p = c * r1
        k2p = -(c / a) * k1p * r2
        g = complete_gains(p, k1p, k2p)
        assert g.k1_minus == pytest.approx(2 * c - k1p, rel=1e-12)
        assert c * k1p + a * k2p == pytest.approx(
            c * g.k1_minus + a * g.k2_minus, rel=1e-9, abs=1e-9)


class TestCommonLyapunov:
    def test_reference_certificate(self, sv_cert):
        assert np.allclose(
            sv_cert.P, [[0.14034, 1.70455], [1.70455, 26.6335]], atol=1e-4)
        assert np.linalg.det(sv_cert.P) == pytest.approx(0.832, abs=2e-3)
        assert sv_cert.gamma == pytest.approx(29.31, rel=0.01)
        assert sv_cert.lambda_min == pytest.approx(0.03112, rel=1e-3)
        assert sv_cert.lambda_max == pytest.approx(26.7427, rel=1e-3)

    def test_residuals_both_modes(self, sv_gains, sv_cert):
        CtC = np.array([[1.0, 0.0], [0.0, 0.0]])
        for A in (sv_gains.A1, sv_gains.A2):
            res = np.linalg.norm(A.T @ sv_cert.P + sv_cert.P @ A + CtC, 2)
            assert res <= 1e-9

    @given(w1=st.floats(min_value=-10, max_value=10),
           w2=st.floats(min_value=-10, max_value=10))
    def test_vobs_derivative_structurally_nonpositive(self, sv_gains,
                                                      sv_cert, w1, w2):
        w = np.array([w1, w2])
        for A in (sv_gains.A1, sv_gains.A2):
            q = w @ (A.T @ sv_cert.P + sv_cert.P @ A) @ w
            assert q == pytest.approx(-w1 * w1, abs=1e-9 * (1 + w1 * w1))

    def test_generic_valid_gains_yield_certificate(self):
        p = PlantParams(a=10.0, c=2.0, d=1.0)
        cert = solve_common_lyapunov(complete_gains(p, 5.0, -2.0))
        assert cert.lambda_min > 0 and cert.gamma >= 1.0


class TestDwellTime:
    def test_reference_values(self, sv_params):
        cfg = make_cfg()
        sigma1, t_l1, t_lmin = dwell_time_lower_bound(sv_params, cfg, 1)
        assert sigma1 == pytest.approx(12.5 / 24.0 - 0.01)
        assert t_l1 == pytest.approx(1.288e-3, rel=1e-3)
        assert t_lmin == pytest.approx(5.449e-4, rel=1e-3)

    def test_monotone_toward_positive_limit(self, sv_params):
        cfg = make_cfg()
        prev = math.inf
        _, _, t_lmin = dwell_time_lower_bound(sv_params, cfg, 1)
        # strictly decreasing until the sequence hits float resolution
        for i in range(1, 15):
            _, t_li, _ = dwell_time_lower_bound(sv_params, cfg, i)
            assert t_li < prev
            assert t_li > t_lmin * (1.0 - 1e-12)
            prev = t_li
        _, t_li, _ = dwell_time_lower_bound(sv_params, cfg, 40)
        assert t_li == pytest.approx(t_lmin, rel=1e-6)

    def test_degenerate_band_rejected(self, sv_params):
        with pytest.raises(ValueError):
            dwell_time_lower_bound(sv_params, make_cfg(epsilon=0.6), 1)

    def test_certificate_structure(self, sv_params):
        cfg = make_cfg()
        c1 = dwell_certificate(sv_params, cfg, 1)
        assert math.isinf(c1.tau_si)     # first-cycle gap bound degenerates
        c2 = dwell_certificate(sv_params, cfg, 2)
        assert math.isfinite(c2.tau_si) and c2.tau_si > 0
        assert c2.z_underbar_i < c2.z_bar_i
        assert c2.tau_di == pytest.approx(c2.T_li_lower / 2)


class TestDecayCertificate:
    def test_no_gap_means_unit_overshoot(self, sv_gains, sv_cert):
        d = decay_certificate(sv_gains, sv_cert, (1e-3, 0.0, 1.0, 10.0))
        assert d.c_bar == 1.0 and d.log_c_bar == 0.0

    def test_contraction_and_envelope_constants(self, sv_gains, sv_cert):
        d = decay_certificate(sv_gains, sv_cert, (1e-3, 2e-3, 9.0, 75.0))
        assert 0.0 < d.rho < 1.0
        assert d.kappa1 >= 1.0
        assert d.kappa2 > 0.0
        assert d.mu == pytest.approx(9.0 * 1e-3 / 3e-3)

    def test_rho_decreases_with_longer_window(self, sv_gains, sv_cert):
        """Recompute 1 - rho from the defining formula in log space (rho
        itself rounds to 1.0 in floats) and check a longer averaging
        window strictly improves the contraction factor."""
        d = decay_certificate(sv_gains, sv_cert, (1e-3, 2e-3, 9.0, 75.0))
        gamma_r = sv_cert.lambda_max / sv_cert.lambda_min
        log_2gc2 = math.log(2 * gamma_r) + 2 * d.log_c_bar
        log_k_bar = (math.log(sv_cert.lambda_max) + 2 * d.log_c_bar
                     + 2 * math.log(max(np.linalg.norm(d.K1),
                                        np.linalg.norm(d.K2)))
                     - math.log(d.decay_rate))

        def log_one_minus_rho(L):
            log_x = log_2gc2 - 2 * d.decay_rate * L
            return math.log(-math.expm1(log_x)) \
                - np.logaddexp(0.0, log_k_bar)

        assert log_one_minus_rho(d.L) == pytest.approx(
            d.log_one_minus_rho, rel=1e-9)
        assert log_one_minus_rho(2 * d.L) > log_one_minus_rho(d.L)

    def test_with_mu_override(self, sv_gains, sv_cert):
        d = decay_certificate(sv_gains, sv_cert, (1e-3, 2e-3, 9.0, 75.0))
        d2 = d.with_mu(5.0, T=1.25)
        assert d2.mu == 5.0 and d2.T == 1.25
        assert d2.kappa1 == d.kappa1

    def test_rejects_nonpositive_dwell_data(self, sv_gains, sv_cert):
        with pytest.raises(ValueError):
            decay_certificate(sv_gains, sv_cert, (0.0, 1.0, 1.0, 1.0))


class TestPolePlacement:
    @pytest.mark.parametrize("pole", [-5.0, -50.0, -500.0])
    def test_both_eigenvalues_at_pole(self, sv_gains, pole):
        for A in (sv_gains.A1, sv_gains.A2):
            K = _place_output_injection(A, pole)
            M = A + np.outer(K, [1.0, 0.0])
            eigs = np.linalg.eigvals(M)
            # a defective double eigenvalue splits by ~sqrt(machine eps)
            assert np.allclose(sorted(eigs.real), [pole, pole], rtol=1e-6)
            assert np.allclose(eigs.imag, 0.0, atol=1e-5 * abs(pole))
            # the characteristic polynomial coefficients are exact targets
            assert np.trace(M) == pytest.approx(2 * pole, rel=1e-12)
            assert np.linalg.det(M) == pytest.approx(pole * pole,
                                                     rel=1e-12)
