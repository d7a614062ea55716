"""Simulation and certification toolkit for output-feedback stabilization
of a 2-state bilinear wheel-dynamics model that loses observability on the
zero-output set.

The package provides the switched observer gains and their common-Lyapunov
certificate, the certainty-equivalence hybrid controller with a halving
piecewise-constant reference, a hybrid-arc execution engine, and analysis
routines that numerically verify every constructive bound (dwell times,
excitation, exponential error envelope).
"""

from .errors import (BadInitialBall, CycleNotFound, IllegalJump,
                     InvalidGains, NoCertificate, NoExcitation,
                     PlacementFailed, StateOutOfDomain, StepFailure,
                     XbstabError, ZenoSuspected)
from .model import (ControllerConfig, HSchedule, HScheduleKind, HybridState,
                    HybridTrajectory, JumpKind, JumpRecord, ObserverGains,
                    PlantParams, SolverConfig, derive_control_gain, g_of,
                    reference_set_value, t_lmin_asymptote)
from .lyapunov import (DecayCertificate, DwellTimeCertificate,
                       LyapunovCertificate, complete_gains,
                       decay_certificate, dwell_certificate,
                       dwell_time_lower_bound, solve_common_lyapunov)
from .dynamics import (FlowDerivative, control_input, flow_map, in_Dc,
                       in_Dnc, jump_map, observer_rhs_zhat,
                       phi_contraction_norm)
from .engine import EventRecord, initialize, integrate_flow, simulate
from .analysis import (BoundReport, DwellReport, check_envelope,
                       check_overshoot_bound, check_vobs_monotone,
                       extract_dwell)

__version__ = "1.0.0"

__all__ = [
    "BadInitialBall", "BoundReport", "ControllerConfig", "CycleNotFound",
    "DecayCertificate", "DwellReport", "DwellTimeCertificate",
    "EventRecord", "FlowDerivative", "HSchedule", "HScheduleKind",
    "HybridState", "HybridTrajectory", "IllegalJump", "InvalidGains",
    "JumpKind", "JumpRecord", "LyapunovCertificate", "NoCertificate",
    "NoExcitation", "ObserverGains", "PlacementFailed", "PlantParams",
    "SolverConfig", "StateOutOfDomain", "StepFailure", "XbstabError",
    "ZenoSuspected", "check_envelope", "check_overshoot_bound",
    "check_vobs_monotone", "complete_gains", "control_input",
    "decay_certificate", "derive_control_gain", "dwell_certificate",
    "dwell_time_lower_bound", "extract_dwell", "flow_map", "g_of",
    "in_Dc", "in_Dnc", "initialize", "integrate_flow", "jump_map",
    "observer_rhs_zhat", "phi_contraction_norm", "reference_set_value",
    "simulate", "solve_common_lyapunov", "t_lmin_asymptote",
]
