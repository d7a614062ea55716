"""Scenario runner: load a JSON configuration, execute certification +
simulation + analysis, and emit CSV trajectories plus a JSON report.

Config schema (``"schema": 1``)::

    {
      "schema": 1,
      "plant":      {"a": ..., "c": ..., "d": ...},
      "observer":   {"k1_plus": ..., "k2_plus": ...},
      "controller": {"k": ...            # explicit control gain, or
                     "k_prime": ...,     # derive the gain instead
                     "z_star_init": ..., "epsilon": ...,
                     "R": ..., "R_tilde": ...,
                     "h_schedule": "paper_v" | "constant:v" | "power:b"
                                   | [v1, v2, ...],
                     "max_cycles": ...},
      "solver":     {any SolverConfig field},
      "initial":    {"z0": [..., ...], "z_hat0": [..., ...]},
      "outputs":    {"trajectory_csv": ..., "report_json": ...,
                     "phase_csv": ..., "timeseries_csv": ...}
    }

All output files are UTF-8 and deterministic: two runs of the same
configuration produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import cycle_slice, extract_dwell, verify_bounds
from .engine import initial_cycle, simulate
from .errors import NoExcitation, XbstabError
from .lyapunov import (LyapunovCertificate, complete_gains,
                       decay_certificate, dwell_certificate,
                       solve_common_lyapunov)
from .model import (ControllerConfig, HSchedule, HybridTrajectory,
                    PlantParams, SolverConfig, derive_control_gain)

SCHEMA_VERSION = 1

CSV_COLUMNS = ("t", "j", "i", "tau", "z1", "z2", "z1_hat", "z2_hat",
               "z_tilde1", "z_tilde2", "z_star", "u")

CHECK_NAMES = ("vobs", "envelope", "phi", "dwell", "zeno", "excitation")

_DEFAULT_OUTPUTS = {
    "trajectory_csv": "trajectory.csv",
    "report_json": "report.json",
    "phase_csv": "phase.csv",
    "timeseries_csv": "timeseries.csv",
}

# the cumulative contraction g(i) must vanish; "converges to zero" is
# decided from the log partial product over this many cycles
_G_PROBE_CYCLES = 400
_G_ZERO_LOG = math.log(1e-12)


@dataclass
class Scenario:
    """A fully validated scenario, ready to execute."""

    raw: dict
    params: PlantParams
    gains: "object"
    cert: LyapunovCertificate
    cfg: ControllerConfig
    solver: SolverConfig
    z0: np.ndarray
    z_hat0: np.ndarray
    k: float
    outputs: dict


def parse_h_schedule(spec) -> HSchedule:
    """Parse an h-schedule spec: "paper_v", "constant:v", "power:b" or a
    list of explicit values."""
    if isinstance(spec, (list, tuple)):
        return HSchedule.explicit([float(v) for v in spec])
    if not isinstance(spec, str):
        raise ValueError(f"h_schedule must be a string or list, got {spec!r}")
    if spec == "paper_v":
        return HSchedule.paper_v()
    if spec.startswith("constant:"):
        return HSchedule.constant(float(spec.split(":", 1)[1]))
    if spec.startswith("power:"):
        return HSchedule.power(float(spec.split(":", 1)[1]))
    raise ValueError(f"unknown h_schedule spec {spec!r}")


def g_converges_to_zero(sched: HSchedule) -> bool:
    """Whether the cumulative product g(i) = prod h(j) tends to zero."""
    log_g = 0.0
    for i in range(1, _G_PROBE_CYCLES + 1):
        log_g += math.log(sched.h(i))
        if log_g < _G_ZERO_LOG:
            return True
    return False


def _require(section: dict, name: str, where: str):
    if name not in section:
        raise ValueError(f"missing required field '{name}' in '{where}'")
    return section[name]


def load_config(path) -> dict:
    """Read and schema-check a scenario configuration file."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema {raw.get('schema')!r}; "
                         f"expected {SCHEMA_VERSION}")
    for section in ("plant", "observer", "controller", "initial"):
        if section not in raw:
            raise ValueError(f"missing required section '{section}'")
    return raw


def build_scenario(raw: dict) -> Scenario:
    """Validate a configuration dict and construct all domain objects."""
    plant = raw["plant"]
    params = PlantParams(a=float(_require(plant, "a", "plant")),
                         c=float(_require(plant, "c", "plant")),
                         d=float(_require(plant, "d", "plant")))
    obs = raw["observer"]
    gains = complete_gains(params,
                           float(_require(obs, "k1_plus", "observer")),
                           float(_require(obs, "k2_plus", "observer")))
    cert = solve_common_lyapunov(gains)

    ctl = raw["controller"]
    z_star_init = float(_require(ctl, "z_star_init", "controller"))
    epsilon = float(ctl.get(
        "epsilon", ControllerConfig.default_epsilon(z_star_init)))
    cfg = ControllerConfig(
        z_star_init=z_star_init,
        k_prime=float(ctl.get("k_prime", 1.0)),
        epsilon=epsilon,
        R=float(_require(ctl, "R", "controller")),
        R_tilde=float(_require(ctl, "R_tilde", "controller")),
        h_schedule=parse_h_schedule(ctl.get("h_schedule", "paper_v")),
        max_cycles=int(ctl.get("max_cycles", 64)),
    )
    if "k" in ctl:
        k = float(ctl["k"])
        if k <= 0:
            raise ValueError(f"control gain k must be positive, got {k}")
    else:
        k = derive_control_gain(params, cfg, cert.gamma)

    solver = SolverConfig(**{key: (int(val) if key == "zeno_max_jumps"
                                   else float(val))
                             for key, val in raw.get("solver", {}).items()})

    init = raw["initial"]
    z0 = np.asarray(_require(init, "z0", "initial"), dtype=float)
    z_hat0 = np.asarray(_require(init, "z_hat0", "initial"), dtype=float)

    outputs = dict(_DEFAULT_OUTPUTS)
    outputs.update(raw.get("outputs", {}))
    return Scenario(raw=raw, params=params, gains=gains, cert=cert,
                    cfg=cfg, solver=solver, z0=z0, z_hat0=z_hat0, k=k,
                    outputs=outputs)


def write_trajectory_csv(scn: Scenario, traj: HybridTrajectory, path):
    """Write the full sample table; one row per trajectory sample."""
    cols = np.column_stack([
        traj.t, traj.j.astype(float), traj.cycle.astype(float), traj.tau,
        traj.z1, traj.z2, traj.z1_hat, traj.z2_hat,
        traj.z_tilde1, traj.z_tilde2, traj.z_star,
        traj.control(scn.params, scn.k),
    ])
    fmt = ["%.17g"] * len(CSV_COLUMNS)
    fmt[1] = fmt[2] = "%d"
    np.savetxt(path, cols, fmt=fmt, delimiter=",",
               header=",".join(CSV_COLUMNS), comments="", encoding="utf-8")


def emit_plot_data(traj: HybridTrajectory, path,
                   phase_name: str = "phase.csv",
                   timeseries_name: str = "timeseries.csv") -> tuple:
    """Write plotting extracts: a phase-plane CSV (z1, z2) and a
    time-series CSV (t, z1, z2, z1_hat, z2_hat, z_star).

    `path` is the output directory; returns the two file paths.
    """
    if len(traj) == 0:
        raise ValueError("cannot emit plot data for an empty trajectory")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    phase_path = out / phase_name
    ts_path = out / timeseries_name
    np.savetxt(phase_path, np.column_stack([traj.z1, traj.z2]),
               fmt="%.17g", delimiter=",", header="z1,z2", comments="",
               encoding="utf-8")
    np.savetxt(ts_path,
               np.column_stack([traj.t, traj.z1, traj.z2,
                                traj.z1_hat, traj.z2_hat, traj.z_star]),
               fmt="%.17g", delimiter=",",
               header="t,z1,z2,z1_hat,z2_hat,z_star", comments="",
               encoding="utf-8")
    return phase_path, ts_path


def _slice_trajectory(traj: HybridTrajectory, sl: slice) -> HybridTrajectory:
    """Column-wise sub-trajectory with the jump log restricted to it."""
    j_lo, j_hi = int(traj.j[sl.start]), int(traj.j[sl.stop - 1])
    jumps = [jr for jr in traj.jumps if j_lo <= jr.j < j_hi]
    return HybridTrajectory(
        t=traj.t[sl], j=traj.j[sl], cycle=traj.cycle[sl], tau=traj.tau[sl],
        z1=traj.z1[sl], z2=traj.z2[sl],
        z_tilde1=traj.z_tilde1[sl], z_tilde2=traj.z_tilde2[sl],
        z_star=traj.z_star[sl], phi=traj.phi[sl], jumps=jumps)


def _dwell_reports_per_cycle(traj: HybridTrajectory,
                             cfg: ControllerConfig) -> dict:
    reports = {}
    for i in np.unique(traj.cycle):
        i = int(i)
        sub = _slice_trajectory(traj, cycle_slice(traj, i))
        try:
            reports[str(i)] = extract_dwell(sub, cfg).to_dict()
        except NoExcitation as exc:
            reports[str(i)] = {"error": str(exc)}
    return reports


def _resolve_checks(checks: str) -> tuple:
    if checks == "all":
        return CHECK_NAMES
    if checks == "none":
        return ()
    names = tuple(c.strip() for c in checks.split(",") if c.strip())
    unknown = set(names) - set(CHECK_NAMES)
    if unknown:
        raise ValueError(f"unknown check names {sorted(unknown)}; "
                         f"available: {CHECK_NAMES}")
    return names


def execute(scn: Scenario, out_dir, checks: str = "all") -> dict:
    """Run one scenario end to end and write all artifacts into out_dir.

    Returns the report dict (also written as JSON); the report field
    "all_checks_passed" is True iff every enabled check passed.
    """
    enabled = _resolve_checks(checks)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    traj = simulate(scn.params, scn.gains, scn.cert, scn.cfg, scn.solver,
                    scn.z0, scn.z_hat0, k=scn.k)

    cycles = [int(i) for i in np.unique(traj.cycle)]
    first_cycle = cycles[0]
    dwell_certs = {str(i): dwell_certificate(scn.params, scn.cfg, i).to_dict()
                   for i in cycles if i >= 1}

    try:
        dwell_report = extract_dwell(traj, scn.cfg)
        dwell_dict = dwell_report.to_dict()
        excitation_ok = dwell_report.assumption_holds
        assumption = (dwell_report.tau_d, dwell_report.tau_s,
                      dwell_report.z_under, dwell_report.z_bar)
        empirical_mu = dwell_report.mu
    except NoExcitation as exc:
        dwell_dict = {"error": str(exc)}
        excitation_ok = False
        # analytic fallback: the first cycle with a finite gap bound
        dc_anchor = dwell_certificate(scn.params, scn.cfg,
                                      max(2, first_cycle))
        assumption = (dc_anchor.tau_di, dc_anchor.tau_si,
                      dc_anchor.z_underbar_i, dc_anchor.z_bar_i)
        empirical_mu = None
    decay = decay_certificate(scn.gains, scn.cert, assumption)
    if empirical_mu is not None:
        decay = decay.with_mu(empirical_mu)

    bounds = verify_bounds(traj, scn.params, scn.cfg, scn.cert, decay,
                           from_cycle=first_cycle)

    check_results = {
        "vobs": bounds.vobs_monotone,
        "envelope": bounds.envelope_ok,
        "phi": bounds.phi_oracle_max_err <= 1e-5,
        "dwell": bounds.dwell_ok,
        "zeno": bounds.zeno_ok,
        "excitation": excitation_ok,
    }
    all_passed = all(check_results[name] for name in enabled)

    warnings = []
    g_zero = g_converges_to_zero(scn.cfg.h_schedule)
    if not g_zero:
        warnings.append("g(i) does not converge to 0: the configured "
                        "h-schedule cannot drive the estimation error to "
                        "zero across cycles")

    report = {
        "schema": SCHEMA_VERSION,
        "config": scn.raw,
        "control_gain_k": scn.k,
        "initial_cycle": initial_cycle(scn.cfg, scn.cert.gamma),
        "g_converges_to_zero": g_zero,
        "warnings": warnings,
        "certificates": {
            "lyapunov": scn.cert.to_dict(),
            "decay": decay.to_dict(),
            "dwell_per_cycle": dwell_certs,
        },
        "dwell_report": dwell_dict,
        "dwell_report_per_cycle": _dwell_reports_per_cycle(traj, scn.cfg),
        "bound_report": bounds.to_dict(),
        "checks": {"enabled": list(enabled), "results": check_results},
        "jumps": [{"t": jr.t, "j": jr.j, "kind": jr.kind.value}
                  for jr in traj.jumps],
        "samples": len(traj),
        "t_final": float(traj.t[-1]),
        "cycles_reached": cycles,
        "final_state": {
            "z": [float(traj.z1[-1]), float(traj.z2[-1])],
            "z_tilde": [float(traj.z_tilde1[-1]), float(traj.z_tilde2[-1])],
            "z_star": float(traj.z_star[-1]),
            "tau": float(traj.tau[-1]),
        },
        "all_checks_passed": all_passed,
    }

    write_trajectory_csv(scn, traj, out / scn.outputs["trajectory_csv"])
    emit_plot_data(traj, out, phase_name=scn.outputs["phase_csv"],
                   timeseries_name=scn.outputs["timeseries_csv"])
    _write_json(out / scn.outputs["report_json"], report)
    return report


def _sanitize(obj):
    """Strict-JSON-safe copy: numpy scalars unwrapped, non-finite floats
    rendered as strings."""
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_sanitize(payload), fh, indent=2, sort_keys=True,
                  allow_nan=False)
        fh.write("\n")


def _error_payload(exc: Exception) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "error": {"type": type(exc).__name__, "message": str(exc)},
        "all_checks_passed": False,
    }


def _set_by_path(cfg: dict, dotted: str, value):
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _parse_sweep(sweep: str) -> tuple:
    if "=" not in sweep:
        raise ValueError("--sweep expects PARAM=v1,v2,...")
    param, _, rest = sweep.partition("=")
    values = [json.loads(v) for v in rest.split(",") if v.strip()]
    if not values:
        raise ValueError("--sweep needs at least one value")
    return param.strip(), values


def run_scenario(config_path, out_dir=None, checks: str = "all",
                 sweep: str = None) -> int:
    """Execute a scenario configuration file.

    Writes trajectory CSV, plot extracts and the JSON report into out_dir
    (default: the config file's directory). Returns 0 iff every enabled
    check passed in every executed run; on a validation or runtime error an
    error JSON is written (and echoed to stderr) and 1 is returned.
    """
    config_path = Path(config_path)
    out = Path(out_dir) if out_dir is not None else config_path.parent
    out.mkdir(parents=True, exist_ok=True)
    try:
        raw = load_config(config_path)
        if sweep is None:
            jobs = [(raw, out)]
        else:
            param, values = _parse_sweep(sweep)
            jobs = []
            for value in values:
                variant = copy.deepcopy(raw)
                _set_by_path(variant, param, value)
                leaf = param.replace(".", "_")
                jobs.append((variant, out / f"sweep_{leaf}={value}"))
        scenarios = [(build_scenario(cfg), dest) for cfg, dest in jobs]
    except (XbstabError, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        payload = _error_payload(exc)
        _write_json(out / "error.json", payload)
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1

    def _one(job):
        scn, dest = job
        try:
            return execute(scn, dest, checks=checks)
        except XbstabError as exc:
            payload = _error_payload(exc)
            dest.mkdir(parents=True, exist_ok=True)
            _write_json(dest / "error.json", payload)
            print(json.dumps(payload, sort_keys=True), file=sys.stderr)
            return payload

    if len(scenarios) == 1:
        reports = [_one(scenarios[0])]
    else:
        with ThreadPoolExecutor(max_workers=min(4, len(scenarios))) as pool:
            reports = list(pool.map(_one, scenarios))
    return 0 if all(r.get("all_checks_passed", False) for r in reports) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xbstab",
        description="Simulate and certify the hybrid output-feedback "
                    "stabilizer on a scenario configuration.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a scenario config")
    run_p.add_argument("config", help="path to a scenario JSON file")
    run_p.add_argument("--out", default=None,
                       help="output directory (default: config directory)")
    run_p.add_argument("--sweep", default=None, metavar="PARAM=a,b,c",
                       help="fan the scenario out over a dotted config "
                            "path, e.g. controller.k=400,500,600")
    run_p.add_argument("--checks", default="all",
                       help="'all', 'none', or a comma list of "
                            + "/".join(CHECK_NAMES))
    args = parser.parse_args(argv)
    return run_scenario(args.config, out_dir=args.out, checks=args.checks,
                        sweep=args.sweep)


if __name__ == "__main__":        # pragma: no cover
    sys.exit(main())
