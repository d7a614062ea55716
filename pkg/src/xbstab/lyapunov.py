"""Common-Lyapunov certificate, observer-gain completion, and the
constructive dwell-time / decay constants.

The quadratic certificate solves

    A_i' P + P A_i = -C'C,   i in {1, 2},

exactly (a 3x3 linear system in the entries of P) and is the basis for the
cycle-exit test of the hybrid engine. The decay certificate reproduces the
constructive estimation-error envelope

    |z_tilde(t)| <= kappa1 |z_tilde(t0)| exp(-kappa2 mu (t - t0)),

with the injected-gain construction replaced by explicit pole placement
(both closed-loop eigenvalues at -3*lambda), verified by sampling the
matrix exponential. The constants involved are astronomically conservative
for realistic dwell data, so everything is evaluated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidGains, NoCertificate, PlacementFailed
from .model import ControllerConfig, ObserverGains, PlantParams, g_of

_RESIDUAL_TOL = 1e-9


def complete_gains(params: PlantParams, k1_plus: float,
                   k2_plus: float) -> ObserverGains:
    """Derive (k1_minus, k2_minus) from the common-Lyapunov equalities.

    k1_minus = 2c - k1_plus and c k1+ + a k2+ = c k1- + a k2-; the returned
    gains satisfy all four Hurwitz inequalities or InvalidGains is raised.
    """
    a, c = params.a, params.c
    if not k1_plus > c:
        raise InvalidGains(f"k1_plus={k1_plus} must exceed c={c}")
    if not k2_plus < -(c / a) * k1_plus:
        raise InvalidGains(f"k2_plus={k2_plus} must be below "
                           f"{-(c / a) * k1_plus}")
    k1_minus = 2.0 * c - k1_plus
    k2_minus = (c * k1_plus + a * k2_plus - c * k1_minus) / a
    return ObserverGains(params=params, k1_plus=k1_plus, k2_plus=k2_plus,
                         k1_minus=k1_minus, k2_minus=k2_minus)


@dataclass(frozen=True)
class LyapunovCertificate:
    """P solving the common Lyapunov equation, with spectral data."""

    P: np.ndarray
    lambda_min: float
    lambda_max: float
    gamma: float                # sqrt(lambda_max / lambda_min) >= 1
    residual_1: float
    residual_2: float

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "gamma": self.gamma,
            "residual_1": self.residual_1,
            "residual_2": self.residual_2,
        }


def solve_common_lyapunov(gains: ObserverGains) -> LyapunovCertificate:
    """Solve A_i' P + P A_i = -C'C for both error modes.

    The symmetric unknown (p11, p12, p22) is obtained from the 3x3 linear
    system induced by A1; the residual for A2 must then vanish by the gain
    equality constraints and is verified to 1e-9 in spectral norm.
    """
    A1, A2 = gains.A1, gains.A2
    a11, a12 = A1[0]
    a21, a22 = A1[1]
    M = np.array([
        [2.0 * a11, 2.0 * a21, 0.0],
        [a12, a11 + a22, a21],
        [0.0, 2.0 * a12, 2.0 * a22],
    ])
    rhs = np.array([-1.0, 0.0, 0.0])
    try:
        p11, p12, p22 = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise NoCertificate(f"Lyapunov system is singular: {exc}") from exc
    P = np.array([[p11, p12], [p12, p22]])

    CtC = np.array([[1.0, 0.0], [0.0, 0.0]])
    res = [float(np.linalg.norm(A.T @ P + P @ A + CtC, 2)) for A in (A1, A2)]
    eigs = np.linalg.eigvalsh(P)
    if eigs[0] <= 0:
        raise NoCertificate(f"P is not positive definite (eigs={eigs})")
    if max(res) > _RESIDUAL_TOL:
        raise NoCertificate(f"Lyapunov residuals too large: {res}")
    return LyapunovCertificate(
        P=P,
        lambda_min=float(eigs[0]),
        lambda_max=float(eigs[1]),
        gamma=float(math.sqrt(eigs[1] / eigs[0])),
        residual_1=res[0],
        residual_2=res[1],
    )


def dwell_time_lower_bound(params: PlantParams, cfg: ControllerConfig,
                           i: int) -> tuple[float, float, float]:
    """Closed-form within-cycle dwell bound (sigma_i, T_li_lower, T_lmin).

    sigma_i = (d/c - eps)/2**(i-1); the bound is the time the comparison
    flow dz2/dt = -(2 z*_in / 2**(i-1)) (c z2 + d) needs to cross the
    estimate-threshold band, and its i -> infinity limit
    (d/c - eps)/(d z*_in) is the uniform floor T_lmin.
    """
    if i < 1:
        raise ValueError(f"cycle index must be >= 1, got {i}")
    d_over_c = params.d / params.c
    if cfg.epsilon >= d_over_c:
        raise ValueError(f"epsilon={cfg.epsilon} must be below d/c="
                         f"{d_over_c}: threshold band collapses")
    sigma_i = (d_over_c - cfg.epsilon) / 2.0 ** (i - 1)
    t_li = (2.0 ** (i - 1) / (2.0 * params.c * cfg.z_star_init)) \
        * math.log1p(2.0 * sigma_i / (d_over_c - sigma_i))
    t_lmin = (d_over_c - cfg.epsilon) / (params.d * cfg.z_star_init)
    return sigma_i, t_li, t_lmin


@dataclass(frozen=True)
class DwellTimeCertificate:
    """Per-cycle dwell quantities certifying the excitation assumption."""

    cycle: int
    sigma_i: float
    T_li_lower: float
    T_lmin: float
    tau_di: float               # T_li / 2
    tau_si: float               # T_ui - T_li / 2
    z_bar_i: float              # (z*_in / 2**(i-1)) (1 + g(i-1))
    z_underbar_i: float         # |z*| / 2 = z*_in / 2**(i+1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "cycle", "sigma_i", "T_li_lower", "T_lmin", "tau_di", "tau_si",
            "z_bar_i", "z_underbar_i")}


def dwell_certificate(params: PlantParams, cfg: ControllerConfig,
                      i: int) -> DwellTimeCertificate:
    """Full per-cycle dwell certificate (tau_d, tau_s, z_bar, z_underbar).

    The off-interval bound tau_si is the time the worst-case comparison flow
    takes to bring z2 back across the band at the minimal rate |z*|/2. For
    i = 1 the comparison target -(d/c + eps) lies beyond the invariant
    asymptote -d/c of the decay flow, so the bound degenerates: tau_si is
    then infinite (use empirically extracted dwell data instead).
    """
    sigma_i, t_li, t_lmin = dwell_time_lower_bound(params, cfg, i)
    c, d = params.c, params.d
    d_over_c = d / c
    g_prev = g_of(cfg, i - 1)
    z_bar = (cfg.z_star_init / 2.0 ** (i - 1)) * (1.0 + g_prev)
    z_under = cfg.z_star_init / 2.0 ** (i + 1)

    # worst-case overshoot phase: growth at rate z_bar for T_li/2, then
    # decay at rate z_under until the band is crossed again
    z2_start = (d_over_c + cfg.epsilon) / 2.0 ** (i - 1)
    z2_peak = (z2_start + d_over_c) * math.exp(c * z_bar * t_li / 2.0) \
        - d_over_c
    z2_target = -(d_over_c + cfg.epsilon) / 2.0 ** (i - 1)
    if z2_target <= -d_over_c:
        t_down = math.inf
    else:
        t_down = (1.0 / (c * z_under)) * math.log(
            (z2_peak + d_over_c) / (z2_target + d_over_c))
    return DwellTimeCertificate(
        cycle=i, sigma_i=sigma_i, T_li_lower=t_li, T_lmin=t_lmin,
        tau_di=t_li / 2.0, tau_si=t_down, z_bar_i=z_bar, z_underbar_i=z_under)


@dataclass(frozen=True)
class DecayCertificate:
    """Constructive constants of the exponential estimation-error envelope."""

    decay_rate: float           # design rate lambda
    c_bar: float
    log_c_bar: float
    K1: np.ndarray
    K2: np.ndarray
    rho: float
    log_one_minus_rho: float
    L: float
    kappa1: float
    kappa2: float
    mu: float
    T: float

    def with_mu(self, mu: float, T: float = None) -> "DecayCertificate":
        """Certificate with an empirically measured excitation rate."""
        return replace(self, mu=mu, T=self.T if T is None else T)

    def to_dict(self) -> dict:
        return {
            "decay_rate": self.decay_rate,
            "c_bar": self.c_bar,
            "log_c_bar": self.log_c_bar,
            "K1": self.K1.tolist(),
            "K2": self.K2.tolist(),
            "rho": self.rho,
            "log_one_minus_rho": self.log_one_minus_rho,
            "L": self.L,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "mu": self.mu,
            "T": self.T,
        }


def _place_output_injection(A: np.ndarray, pole: float) -> np.ndarray:
    """K such that A + K C (C = [1 0]) has both eigenvalues at `pole`.

    Only the first column of A is affected by K, so trace and determinant
    assignments decouple: m11 = 2*pole - a22, m21 = (pole^2 - m11 a22)/a12.
    """
    a12, a22 = A[0, 1], A[1, 1]
    m11 = 2.0 * pole - a22
    m21 = (m11 * a22 - pole * pole) / a12
    return np.array([m11 - A[0, 0], m21 - A[1, 0]])


def _log_expm_norm(A: np.ndarray, pole: float, tau: float) -> float:
    """log ||exp(M tau)||_2 for M with both eigenvalues at `pole`.

    M + |pole| I is nilpotent, so exp(M tau) = e^(pole tau) (I + N tau)
    exactly; the polynomial factor is evaluated in ordinary floats.
    """
    N = A - pole * np.eye(2)        # A here is already M = A + K C
    G = np.eye(2) + N * tau
    return pole * tau + math.log(np.linalg.norm(G, 2))


def _envelope_ok(M: np.ndarray, pole: float, lam: float, log_c_bar: float,
                 tau_start: float) -> bool:
    """Sampled check of ||e^{M tau}|| <= (1/c_bar) e^{-2 lam (tau - s)}."""
    horizon = tau_start + 60.0 / lam
    taus = np.linspace(tau_start, horizon, 400)
    for tau in taus:
        lhs = _log_expm_norm(M, pole, tau)
        rhs = -log_c_bar - 2.0 * lam * (tau - tau_start)
        if lhs > rhs:
            return False
    return True


def decay_certificate(gains: ObserverGains, cert: LyapunovCertificate,
                      assumption: tuple[float, float, float, float],
                      rho_target: float = 0.9) -> DecayCertificate:
    """Constructive envelope constants from dwell data.

    assumption = (tau_d, tau_s, z_underbar, z_bar): minimal on-interval
    length, maximal gap, and the excitation floor/ceiling of |z1|. The decay
    rate lambda is searched on a logarithmic grid; L is the smallest grid
    value reaching rho <= rho_target, falling back to the best rho < 1 when
    the target is out of reach (the constants are conservative by design).
    """
    tau_d, tau_s, z_under, z_bar = assumption
    if min(tau_d, z_under, z_bar) <= 0 or tau_s < 0:
        raise ValueError("dwell quantities must be strictly positive "
                         "(tau_s may be zero)")
    A1, A2 = gains.A1, gains.A2
    a_norm = max(np.linalg.norm(A1, 2), np.linalg.norm(A2, 2))
    log_c_bar = a_norm * z_bar * tau_s
    c_bar = math.exp(log_c_bar) if log_c_bar < 700 else math.inf

    s = tau_d * z_under / 2.0       # envelope activation point in tau-time

    lam = None
    lam0 = max(log_c_bar, 1.0) / (3.0 * s)
    for mult in np.geomspace(1.0, 1e4, 60):
        cand = lam0 * mult
        pole = -3.0 * cand
        K1 = _place_output_injection(A1, pole)
        K2 = _place_output_injection(A2, pole)
        M1 = A1 + np.outer(K1, [1.0, 0.0])
        M2 = A2 + np.outer(K2, [1.0, 0.0])
        if _envelope_ok(M1, pole, cand, log_c_bar, s) and \
           _envelope_ok(M2, pole, cand, log_c_bar, s):
            lam = cand
            break
    if lam is None:
        raise PlacementFailed("no decay rate on the search grid satisfies "
                              "the injected-gain envelope")

    k_inj = max(np.linalg.norm(K1), np.linalg.norm(K2))
    p_m, p_M = cert.lambda_min, cert.lambda_max
    gamma_r = p_M / p_m
    log_k_bar = math.log(p_M) + 2.0 * log_c_bar + 2.0 * math.log(k_inj) \
        - math.log(lam)
    log_2gc2 = math.log(2.0 * gamma_r) + 2.0 * log_c_bar

    # rho(L) = (2 gamma c_bar^2 e^{-2 lam L} + k_bar) / (1 + k_bar)
    def log_one_minus_rho_of(L: float) -> float:
        log_x = log_2gc2 - 2.0 * lam * L
        if log_x >= 0.0:
            return math.inf        # rho >= 1
        one_minus_x = -math.expm1(log_x)
        return math.log(one_minus_x) - np.logaddexp(0.0, log_k_bar)

    L0 = log_2gc2 / (2.0 * lam)     # x = 1 threshold
    chosen = None
    for L in np.geomspace(max(L0, 1e-12) * 1.01, max(L0, 1e-12) * 1e4, 200):
        lg = log_one_minus_rho_of(L)
        if lg == math.inf:
            continue
        one_minus_rho = math.exp(lg) if lg > -745 else 5e-324
        rho = 1.0 - one_minus_rho
        if rho >= 1.0:
            rho = math.nextafter(1.0, 0.0)
        if rho <= rho_target:
            chosen = (L, rho, lg)
            break
        if chosen is None or rho < chosen[1]:
            chosen = (L, rho, lg)
    if chosen is None or chosen[1] >= 1.0:
        raise PlacementFailed("no window length yields a contraction "
                              "factor below one")
    L, rho, lg = chosen

    # kappa1 = gamma (k_bar + 2 c_bar^2 gamma) / (rho (1 + k_bar))
    log_num = math.log(gamma_r) + np.logaddexp(log_k_bar, log_2gc2)
    log_den = math.log(rho) + np.logaddexp(0.0, log_k_bar)
    kappa1 = math.exp(log_num - log_den)
    # kappa2 = -ln(rho)/L evaluated through log1p for rho close to 1
    one_minus_rho = math.exp(lg) if lg > -745 else 5e-324
    kappa2 = -math.log1p(-one_minus_rho) / L
    if kappa2 <= 0.0:
        kappa2 = 5e-324 / L if L < 1.0 else 5e-324

    mu_analytic = z_under * tau_d / (tau_d + tau_s)
    return DecayCertificate(
        decay_rate=lam, c_bar=c_bar, log_c_bar=log_c_bar,
        K1=K1, K2=K2, rho=rho, log_one_minus_rho=lg, L=float(L),
        kappa1=kappa1, kappa2=kappa2, mu=mu_analytic, T=0.0)
