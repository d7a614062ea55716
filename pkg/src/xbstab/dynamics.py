"""Right-hand sides, guard membership tests and the jump map.

All functions are pure and stateless. The estimation error z_tilde is
integrated directly (its dynamics is what every convergence argument is
written against); the estimate z_hat = z + z_tilde is a derived quantity.
An equivalent z_hat-form observer realization is provided for
cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllegalJump, StateOutOfDomain
from .lyapunov import LyapunovCertificate
from .model import (ControllerConfig, HybridState, JumpKind, ObserverGains,
                    PlantParams)


@dataclass(frozen=True)
class FlowDerivative:
    """Time derivative of the flowing components; (i, z_star) are frozen."""

    d_tau: float
    d_z1: float
    d_z2: float
    d_z_tilde: np.ndarray
    d_phi: np.ndarray


def control_input(params: PlantParams, k: float, state: HybridState) -> float:
    """Certainty-equivalence law u = a z1 zhat2 - k (z1 - z_star)."""
    z1 = state.z[0]
    zhat2 = state.z[1] + state.z_tilde[1]
    return params.a * z1 * zhat2 - k * (z1 - state.z_star)


def flow_map(params: PlantParams, gains: ObserverGains, k: float,
             state: HybridState) -> FlowDerivative:
    """Closed-loop flow: plant, error dynamics and transition matrix.

    d z_tilde = z1 * M(z1) * z_tilde and d Phi = |z1| A(sign z1) Phi; the
    two right-hand sides coincide because |z1| A(sign z1) == z1 M(z1).
    """
    z1, z2 = state.z
    if z2 <= params.z2_floor:
        raise StateOutOfDomain(f"z2={z2} at or below -d/c={params.z2_floor}")
    u = control_input(params, k, state)
    k1, k2 = gains.injection(z1)
    M = np.array([[-k1, -params.a], [-k2, params.c]])
    return FlowDerivative(
        d_tau=abs(z1),
        d_z1=-params.a * z1 * z2 + u,
        d_z2=(params.c * z2 + params.d) * z1,
        d_z_tilde=z1 * (M @ state.z_tilde),
        d_phi=z1 * (M @ state.phi),
    )


def observer_rhs_zhat(params: PlantParams, gains: ObserverGains, u: float,
                      z1: float, z_hat: np.ndarray) -> np.ndarray:
    """Alternative realization: the estimate-form observer ODE.

    Integrating this alongside the plant must reproduce z + z_tilde from
    flow_map to integration tolerance (the error form is ground truth).
    """
    k1, k2 = gains.injection(z1)
    innov = z1 - z_hat[0]
    return np.array([
        -params.a * z1 * z_hat[1] + u + k1 * z1 * innov,
        params.c * z1 * z_hat[1] + params.d * z1 + k2 * z1 * innov,
    ])


def tracking_error_rhs_analysis_form(params: PlantParams, k: float,
                                     state: HybridState) -> float:
    """Diagnostic only: the tracking-error ODE in its analysis form,

        d z1e = -(k + a z_tilde2) z1e + a z_star z_tilde2.

    The closed loop is never integrated through this expression; comparing
    it against the simulated d z1 exposes the sign discrepancy between the
    analysis form and direct substitution of the control law.
    """
    z1e = state.z[0] - state.z_star
    zt2 = state.z_tilde[1]
    return -(k + params.a * zt2) * z1e + params.a * state.z_star * zt2


def in_Dc(params: PlantParams, cfg: ControllerConfig,
          state: HybridState) -> bool:
    """Within-cycle jump set: |zhat2| >= d|z*|/(c z*_in) and zhat2 z* >= 0."""
    zhat2 = state.z[1] + state.z_tilde[1]
    thr = params.d * abs(state.z_star) / (params.c * cfg.z_star_init)
    return abs(zhat2) >= thr and zhat2 * state.z_star >= 0.0


def phi_contraction_norm(cert: LyapunovCertificate,
                         phi: np.ndarray) -> float:
    """||Phi' P Phi||_2^(1/2), the verifiable error-contraction measure."""
    S = phi.T @ cert.P @ phi
    return float(np.sqrt(np.linalg.norm(S, 2)))


def in_Dnc(params: PlantParams, cfg: ControllerConfig,
           cert: LyapunovCertificate, state: HybridState) -> bool:
    """Cycle-transition jump set.

    Requires |zhat2| under the threshold, opposite signs of zhat2 and z*,
    and certified contraction ||Phi'P Phi||^(1/2) <= sqrt(lambda_min) h(i).
    """
    zhat2 = state.z[1] + state.z_tilde[1]
    thr = params.d * abs(state.z_star) / (params.c * cfg.z_star_init)
    if abs(zhat2) > thr or zhat2 * state.z_star > 0.0:
        return False
    h_i = cfg.h_of(state.cycle, cert.gamma)
    return phi_contraction_norm(cert, state.phi) \
        <= np.sqrt(cert.lambda_min) * h_i


def jump_map(state: HybridState, which: JumpKind) -> HybridState:
    """Reset map G: sign flip of z* within a cycle, halving at a new cycle.

    z and z_tilde are continuous variables and never change across jumps.
    Guard preconditions are the caller's duty (checked by the engine); only
    structural legality is enforced here.
    """
    if which is JumpKind.WITHIN_CYCLE:
        return state.replace(z_star=-state.z_star)
    if which is JumpKind.NEW_CYCLE:
        return state.replace(tau=0.0, cycle=state.cycle + 1,
                             z_star=state.z_star / 2.0, phi=np.eye(2))
    raise IllegalJump(f"unknown jump kind {which!r}")


def checked_jump(params: PlantParams, cfg: ControllerConfig,
                 cert: LyapunovCertificate, state: HybridState,
                 which: JumpKind) -> HybridState:
    """jump_map with its guard precondition enforced."""
    if which is JumpKind.WITHIN_CYCLE and not in_Dc(params, cfg, state):
        raise IllegalJump("within-cycle jump requested outside D_c")
    if which is JumpKind.NEW_CYCLE and not in_Dnc(params, cfg, cert, state):
        raise IllegalJump("cycle-transition jump requested outside D_nc")
    return jump_map(state, which)
