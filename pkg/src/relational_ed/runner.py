"""Run orchestration and artifact writers for the command-line front end."""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .best_matching import (
    BestMatchResult,
    best_match_both,
    best_match_rotation,
    best_match_translation,
    center_state,
    constraint_check,
    constraint_residuals,
    numerical_best_match,
    translate_state,
)
from .checkpoint import atomic_write, write_checkpoint
from .config import ExperimentConfig, build_initial_state
from .core import ShiftVelocity
from .errors import EDError, ValidationError
from .evolution import SPLIT, SolverParams, evolve, iterate_states, normalize_backend, parametrized_evolve
from .observables import (
    ObservableReport,
    center_of_mass,
    observe,
)
from .sampler import ensemble_density_compare, sample_ensemble

log = logging.getLogger(__name__)

OBSERVABLE_COLUMNS = (
    "step", "label", "time", "norm", "energy", "energy_imag",
    "P_x", "P_y", "P_z",
    "L_x", "L_y", "L_z",
    "I_xx", "I_xy", "I_xz", "I_yy", "I_yz", "I_zz",
    "com_x", "com_y", "com_z",
    "lambda_x", "lambda_y", "lambda_z",
    "zeta_x", "zeta_y", "zeta_z",
    "momentum_residual", "angular_residual", "super_hamiltonian_residual",
)


def fmt(x) -> str:
    """17 significant digits, enough for a lossless binary64 round trip."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _pad3(values, dim) -> list[float]:
    out = [float("nan")] * 3
    if values is None:
        return out
    v = np.atleast_1d(np.asarray(values, dtype=float))
    for i in range(min(dim, v.size)):
        out[i] = float(v[i])
    return out


def observable_row(step, label, report: ObservableReport, shift: ShiftVelocity, system, pi0) -> list:
    d = shift.spatial_dim
    if report.angular_momentum is None:
        L = [float("nan")] * 3
        inertia = [float("nan")] * 6
        zeta = [float("nan")] * 3
    else:
        L = [float("nan"), float("nan"), float(report.angular_momentum)] if d == 2 else list(report.angular_momentum)
        I = report.inertia
        inertia = [I[0, 0], I[0, 1], I[0, 2], I[1, 1], I[1, 2], I[2, 2]]
        zeta = [float("nan"), float("nan"), float(shift.zeta_dot)] if d == 2 else list(shift.zeta3)
    mom, ang = constraint_residuals(report, shift, system)
    return [
        step, label, report.time, 1.0 - report.norm_defect, report.energy, report.energy_imag,
        *_pad3(report.momentum, d), *L, *inertia, *_pad3(report.center_of_mass, d),
        *_pad3(shift.lambda_dot, d), *zeta, mom, ang, abs(pi0 + report.energy),
    ]


def observables_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(OBSERVABLE_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def ensemble_csv(ensemble) -> str:
    dim = ensemble.positions.shape[2]
    buf = io.StringIO()
    buf.write(",".join(["record", "time", "chain"] + [f"x{A}" for A in range(dim)]) + "\n")
    for r, t in enumerate(ensemble.times):
        block = ensemble.positions[r]
        tstr = fmt(t)
        for c in range(block.shape[0]):
            buf.write(f"{r},{tstr},{c}," + ",".join(fmt(v) for v in block[c]) + "\n")
    return buf.getvalue()


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, payload: dict):
    atomic_write(path, (json.dumps(jsonable(payload), indent=2, sort_keys=True) + "\n").encode())


def write_text(path: Path, text: str):
    atomic_write(path, text.encode())


@dataclass
class RunOutcome:
    status: str = "ok"
    exit_code: int = 0
    summary: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


# ------------------------------------------------------------- pipelines


def prepare(config: ExperimentConfig):
    """Initial state, potential and shift for the configured policy.

    Rotational policies first move the state: ``best-match-rotation`` to the
    full centre-of-mass frame, ``best-match-both`` only to zero mean position.
    """
    psi, potential = build_initial_state(config)
    system = config.system
    policy = config.policy
    if policy == "fixed":
        shift = config.fixed_shift
    elif policy == "best-match-translation":
        shift = best_match_translation(psi, system, potential).shift
    elif policy == "best-match-rotation":
        psi = center_state(psi, system)
        shift = best_match_rotation(psi, system, potential).shift
    else:
        psi = translate_state(psi, -center_of_mass(psi, system)).normalized()
        shift = best_match_both(psi, system, potential).shift
    return psi, potential, shift


def _solver(config: ExperimentConfig, backend: str | None) -> SolverParams:
    s = config.solver
    return SolverParams(s.dt, normalize_backend(backend) if backend else s.backend, s.steps, s.tolerance, s.record_stride)


def _shift_dict(shift: ShiftVelocity) -> dict:
    return {"lambda_dot": list(shift.lambda_dot), "zeta_dot": None if shift.zeta_dot is None else np.atleast_1d(shift.zeta_dot).tolist()}


def _final_metrics(report: ObservableReport) -> dict:
    return {
        "time": report.time,
        "energy": report.energy,
        "norm": 1.0 - report.norm_defect,
        "momentum": report.momentum,
        "angular_momentum": report.angular_momentum,
        "center_of_mass": report.center_of_mass,
    }


def run_evolve(config: ExperimentConfig, out: Path, backend=None, checks_tol: float = 1e-6) -> RunOutcome:
    psi, potential, shift = prepare(config)
    params = _solver(config, backend)
    system = config.system
    log.info("evolving %d steps of dt=%g with %s", params.steps, params.dt, params.backend)
    series = evolve(psi, system, potential, shift, params)
    pi0 = -series.reports[0].energy
    rows = [observable_row(k, r.time, r, shift, system, pi0) for k, r in zip(series.steps, series.reports)]
    files = [out / "observables.csv"]
    write_text(files[0], observables_csv(rows))
    ck = config.checkpoint_stride
    if ck:
        for k, state in zip(series.steps, series.states):
            if k % ck == 0 or k == series.steps[-1]:
                files.append(write_checkpoint(state, system, out / f"checkpoint_{k:08d}.edwf"))
    files.append(write_checkpoint(series.final, system, out / "final.edwf"))
    check = constraint_check(series.reports, shift, system, checks_tol, potential)
    summary = {
        "command": "evolve",
        "policy": config.policy,
        "backend": params.backend,
        "shift": _shift_dict(shift),
        "final": _final_metrics(series.reports[-1]),
        "max_norm_defect": max(abs(r.norm_defect) for r in series.reports),
        "energy_drift": max(abs(r.energy - series.reports[0].energy) for r in series.reports),
        "constraint_check": check.as_dict(),
    }
    return RunOutcome(summary=summary, files=files)


def run_best_match(config: ExperimentConfig, out: Path, backend=None, numerical: bool = True) -> RunOutcome:
    psi, potential = build_initial_state(config)
    system = config.system
    d = config.grid.spatial_dim
    dt = 1e-3
    bm_backend = normalize_backend(backend) if backend else SPLIT
    results: dict[str, BestMatchResult] = {}
    results["translation"] = best_match_translation(psi, system, potential, dt)
    centred = None
    if d >= 2:
        centred = center_state(psi, system)
        results["rotation"] = best_match_rotation(centred, system, potential, dt)
    if numerical:
        n_params = {1: 1, 2: 3, 3: 6}[d]
        guess = np.zeros(n_params)
        guess[:d] = results["translation"].lambda_dot
        domain = [(g - 2.0, g + 2.0) for g in guess]
        results["numerical_translation"] = numerical_best_match(psi, system, potential, dt, domain, active=range(d), backend=bm_backend)
        if centred is not None:
            zeta = np.atleast_1d(results["rotation"].zeta_dot)
            dom = [(0.0, 0.0)] * d + [(z - 1.0, z + 1.0) for z in zeta]
            results["numerical_rotation"] = numerical_best_match(centred, system, potential, dt, dom, active=range(d, n_params), backend=bm_backend)
    summary = {"command": "best-match", "results": {}}
    for name, r in results.items():
        summary["results"][name] = {
            "method": r.method,
            "lambda_dot": r.lambda_dot,
            "zeta_dot": r.zeta_dot,
            "mismatch": r.mismatch,
            "condition": r.condition,
        }
    if numerical:
        gaps = [float(np.max(np.abs(results["numerical_translation"].lambda_dot - results["translation"].lambda_dot)))]
        if "rotation" in results:
            gaps.append(float(np.max(np.abs(np.atleast_1d(results["numerical_rotation"].zeta_dot) - np.atleast_1d(results["rotation"].zeta_dot)))))
        summary["analytic_vs_numerical"] = max(gaps)
    return RunOutcome(summary=summary, files=[])


def run_sample(config: ExperimentConfig, out: Path, seed=None, threads: int = 1, backend=None, strict: bool = False) -> RunOutcome:
    if config.sampler is None:
        raise ValidationError([("sampler", "the sample command needs a [sampler] section")])
    psi, potential, shift = prepare(config)
    params = _solver(config, backend)
    system = config.system
    sc = config.sampler
    seed = sc.seed if seed is None else seed
    last = {}

    def states():
        for state in iterate_states(psi, system, potential, shift, params.dt, params.steps, params.backend, params.tolerance):
            last["psi"] = state
            yield state

    ens = sample_ensemble(states(), system, shift, sc.chains, seed, sc.record_stride or None, sc.noise_eta, threads, strict=strict)
    final = last["psi"]
    cmp = ensemble_density_compare(ens.final, final, sc.min_expected)
    files = [out / "ensemble.csv"]
    write_text(files[0], ensemble_csv(ens))
    reports = [observe(psi, system, potential, shift), observe(final, system, potential, shift)]
    pi0 = -reports[0].energy
    rows = [observable_row(0, reports[0].time, reports[0], shift, system, pi0),
            observable_row(params.steps, reports[1].time, reports[1], shift, system, pi0)]
    files.append(out / "observables.csv")
    write_text(files[-1], observables_csv(rows))
    summary = {
        "command": "sample",
        "seed": seed,
        "chains": sc.chains,
        "steps": ens.steps,
        "dt": ens.dt,
        "noise_eta": sc.noise_eta,
        "clamp_fraction": ens.clamp_fraction,
        "flagged": ens.flagged,
        "shift": _shift_dict(shift),
        "density_comparison": {
            "total_variation": cmp.total_variation,
            "chi2": cmp.chi2,
            "dof": cmp.dof,
            "p_value": cmp.p_value,
            "bins": cmp.bins,
        },
    }
    return RunOutcome(summary=summary, files=files)


def run_parametrized(config: ExperimentConfig, out: Path, backend=None) -> RunOutcome:
    if config.lapse is None:
        raise ValidationError([("lapse", "the parametrized command needs a [lapse] section")])
    psi, potential, shift = prepare(config)
    params = _solver(config, backend)
    system = config.system
    res = parametrized_evolve(psi, system, potential, shift, config.lapse, config.label_steps,
                              params.backend, params.tolerance, params.record_stride)
    rows = [
        observable_row(k, lab, r, shift, system, res.pi0)
        for k, lab, r in zip(res.series.steps, res.labels, res.series.reports)
    ]
    files = [out / "observables.csv"]
    write_text(files[0], observables_csv(rows))
    files.append(write_checkpoint(res.final, system, out / "final.edwf"))
    summary = {
        "command": "parametrized",
        "duration": config.lapse.duration(),
        "final_time": float(res.entropic_time[-1]),
        "pi0": res.pi0,
        "max_super_hamiltonian_residual": float(np.max(res.super_hamiltonian_residual)),
        "final": _final_metrics(res.series.reports[-1]),
    }
    return RunOutcome(summary=summary, files=files)


def failure_summary(command: str, exc: BaseException, code: int) -> dict:
    kind = "config" if code == 2 else "numerical" if code == 3 else "check" if code == 4 else "error"
    return {
        "command": command,
        "status": "error",
        "exit_code": code,
        "reason": kind,
        "error_type": type(exc).__name__,
        "message": str(exc),
    }


NUMERICAL_ERRORS = (EDError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError)
