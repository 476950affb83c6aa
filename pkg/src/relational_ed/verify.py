"""Quick invariant suite behind the ``verify`` subcommand.

Each check compares a computed quantity with an independent oracle and
reports the measured value next to its threshold.  A reference run then
exercises the evolve and sample pipelines end to end and writes the usual
artifacts, so repeated runs can be compared byte for byte.
"""
from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .best_matching import best_match_rotation, best_match_translation, numerical_best_match
from .checkpoint import decode, encode
from .config import ExperimentConfig, parse_config_text
from .core import (
    GridSpec,
    ParticleSystem,
    ShiftVelocity,
    WaveFunction,
    from_function,
    gaussian_packet,
    vortex_state,
    wf_to_epistemic,
)
from .evolution import continuity_residual, iterate_states, make_propagator, propagate
from .geometry import (
    TangentVector,
    assembled_inner_product,
    compatibility_defect,
    complex_structure_apply,
    inner_product,
    metric_eval,
    to_psi_chart,
)
from .maxent import MaxEntProblem, maxent_transition_oracle
from .observables import FREE, PotentialSpec, hamiltonian_expectation
from .runner import fmt, run_evolve, run_sample, write_json, write_text
from .sampler import chunk_generator, fluctuation_covariance, sample_step

log = logging.getLogger(__name__)

REFERENCE_CONFIG = """\
[grid]
spatial_dim = 1
particle_count = 2
points_per_axis = 128
axis_length = 40.0

[system]
masses = [1.0, 2.0]

[potential]
family = "pair-spring"
spring_constant = 1.0

[initial_state]
factory = "gaussian"
centers = [-1.0, 1.0]
widths = [1.3, 1.25]
wavevectors = [0.5, 0.0]

[shift]
policy = "best-match-translation"

[solver]
dt = 0.01
steps = 100
backend = "split-step"

[sampler]
chains = 50000
seed = 0
min_expected = 100
"""


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (limit {self.threshold:.1e}) {self.detail}".rstrip()


def _random_state(grid: GridSpec, rng: np.random.Generator, nodeless: bool = True) -> WaveFunction:
    """Smooth random state: Gaussian envelope times a few random Fourier modes."""
    coeffs = rng.normal(size=(4, 2)) * 0.3
    shifts = rng.normal(size=grid.dim) * 0.5
    # a nodeless base needs density well above the node floor at the box edge
    spread = 16.0 if nodeless else 4.0

    def fn(*xs):
        env = np.ones_like(xs[0], dtype=complex)
        for A, x in enumerate(xs):
            env = env * np.exp(-((x - shifts[A]) ** 2) / spread)
        mod = 1.0 + 0j
        for j, (a, b) in enumerate(coeffs):
            mod = mod + (a + 1j * b) * np.sin((j + 1) * 0.3 * sum(xs))
        if nodeless:
            mod = np.exp(mod - 1.0)
        return env * mod

    return from_function(grid, fn)


def _random_tangent(grid: GridSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    x = grid.coord(0)
    env = np.exp(-(x**2) / 8.0)
    first = rng.normal(size=3) @ np.stack([np.ones_like(x), x, x**2])
    second = rng.normal(size=3) @ np.stack([np.ones_like(x), np.sin(x), np.cos(x)])
    return env * first, env * second


# ------------------------------------------------------------------ checks


def check_geometry_assembly(rng, count: int = 20) -> CheckResult:
    g = GridSpec(1, 1, 64, 16.0)
    worst = 0.0
    for _ in range(count):
        a, b = _random_state(g, rng, False), _random_state(g, rng, False)
        worst = max(worst, abs(assembled_inner_product(a, b) - inner_product(a, b)))
    return CheckResult("geometry_assembly", worst < 1e-10, worst, 1e-10)


def check_complex_structure(rng, count: int = 20) -> CheckResult:
    g = GridSpec(1, 1, 64, 16.0)
    worst = 0.0
    for _ in range(count):
        base = wf_to_epistemic(_random_state(g, rng))
        drho, dphi = _random_tangent(g, rng)
        V = TangentVector.in_rho_phi(base, drho, dphi)
        JJ = complex_structure_apply(complex_structure_apply(V))
        worst = max(worst, float(np.max(np.abs(JJ.first + V.first))), float(np.max(np.abs(JJ.second + V.second))))
        worst = max(worst, compatibility_defect(base.rho))
    return CheckResult("complex_structure", worst < 1e-10, worst, 1e-10, "J^2 = -1 and J = -G^-1 Omega")


def check_chart_metric(rng, count: int = 20) -> CheckResult:
    g = GridSpec(1, 1, 64, 16.0)
    worst = 0.0
    for _ in range(count):
        base = wf_to_epistemic(_random_state(g, rng))
        V = TangentVector.in_rho_phi(base, *_random_tangent(g, rng))
        U = TangentVector.in_rho_phi(base, *_random_tangent(g, rng))
        a = metric_eval(V, U)
        b = metric_eval(to_psi_chart(V), to_psi_chart(U))
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return CheckResult("chart_metric", worst < 1e-10, worst, 1e-10, "G invariant under the chart change")


def check_unitarity(rng, steps: int = 1000) -> CheckResult:
    g = GridSpec(1, 1, 192, 48.0)
    s = ParticleSystem([1.0])
    pot = PotentialSpec("external-harmonic", trap_frequency=0.7)
    psi = gaussian_packet(g, s, 1.0, 1.3, 0.8)
    worst = 0.0
    prev = 1.0
    for state in iterate_states(psi, s, pot, ShiftVelocity.zero(1), 0.01, steps):
        n = state.norm()
        worst = max(worst, abs(n - prev))
        prev = n
    return CheckResult("unitarity", worst < 1e-12, worst, 1e-12, f"max per-step norm drift over {steps} steps")


def check_linearity(rng) -> CheckResult:
    g = GridSpec(1, 1, 128, 32.0)
    s = ParticleSystem([1.0])
    pot = PotentialSpec("external-harmonic", trap_frequency=0.5)
    shift = ShiftVelocity([0.3])
    a = _random_state(g, rng, False)
    b = _random_state(g, rng, False)
    ca, cb = complex(*rng.normal(size=2)), complex(*rng.normal(size=2))
    prop = make_propagator(g, s, pot, shift, 0.01)

    def run(f):
        f = np.array(f)
        for _ in range(50):
            f = prop.step(f)
        return f

    lhs = run(ca * a.amplitudes + cb * b.amplitudes)
    rhs = ca * run(a.amplitudes) + cb * run(b.amplitudes)
    err = float(np.sqrt(np.sum(np.abs(lhs - rhs) ** 2) * g.cell_volume))
    return CheckResult("linearity", err < 1e-12, err, 1e-12)


def check_free_spreading(rng) -> CheckResult:
    g = GridSpec(1, 1, 512, 64.0)
    s = ParticleSystem([1.0])
    sigma0 = 1.0
    T = 2 * s.masses[0] * sigma0**2 / s.hbar
    psi = gaussian_packet(g, s, 0.0, sigma0, 0.0)
    out = propagate(psi, s, FREE, ShiftVelocity.zero(1), T / 200, 200)
    x = g.coord(0)
    mean = g.integrate(x * out.density)
    var = g.integrate((x - mean) ** 2 * out.density)
    exact = sigma0**2 * (1 + (s.hbar * T / (2 * s.masses[0] * sigma0**2)) ** 2)
    rel = abs(var - exact) / exact
    return CheckResult("free_spreading", rel < 1e-4, rel, 1e-4, "variance at t = 2 m sigma0^2 / hbar")


def check_shift_curvature(rng) -> CheckResult:
    g = GridSpec(1, 2, 128, 32.0)
    s = ParticleSystem([1.0, 3.0])
    pot = PotentialSpec("pair-spring", spring_constant=0.5)
    psi = gaussian_packet(g, s, [-0.5, 0.5], [1.1, 1.1], [0.4, -0.2])
    lams = np.array([-1.0, 0.0, 1.0])
    energies = [hamiltonian_expectation(psi, s, pot, ShiftVelocity([v])) for v in lams]
    curvature = energies[0] - 2 * energies[1] + energies[2]
    err = abs(curvature - s.total_mass)
    return CheckResult("shift_curvature", err < 1e-8, err, 1e-8, "d2 H / d lambda^2 = M")


def check_translation_best_match(rng) -> CheckResult:
    g = GridSpec(1, 1, 128, 32.0)
    s = ParticleSystem([1.0])
    psi = gaussian_packet(g, s, 0.0, 1.2, 1.5)
    analytic = best_match_translation(psi, s)
    numeric = numerical_best_match(psi, s, FREE, 1e-3, [(analytic.lambda_dot[0] - 2, analytic.lambda_dot[0] + 2)])
    gap = float(abs(numeric.lambda_dot[0] - analytic.lambda_dot[0]))
    return CheckResult("translation_best_match", gap < 1e-4, gap, 1e-4, "analytic vs numerical minimiser")


def check_vortex_rotation(rng) -> CheckResult:
    g = GridSpec(2, 1, 64, 16.0)
    s = ParticleSystem([1.0])
    zeta = float(best_match_rotation(vortex_state(g), s).zeta_dot)
    err = abs(zeta - 0.5)
    return CheckResult("vortex_rotation", err < 1e-6, err, 1e-6, "zeta_dot = L / I = 1/2")


def check_maxent(rng, count: int = 10) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        alpha = float(rng.uniform(0.5, 4.0))
        slope = float(rng.uniform(-2.0, 2.0))
        kappa = float(rng.uniform(-1.0, 1.0))
        worst = max(worst, maxent_transition_oracle(MaxEntProblem.auto(alpha, slope, kappa)).kl_divergence)
    return CheckResult("maxent_kernel", worst < 1e-8, worst, 1e-8, "KL from the Gaussian kernel")


def check_fluctuation_law(rng, draws: int = 100000) -> CheckResult:
    """Uniform state and zero shift: steps are pure noise with covariance eta dt / m."""
    g = GridSpec(1, 2, 32, 16.0)
    s = ParticleSystem([1.0, 3.0])
    flat = WaveFunction(g, np.ones(g.shape, dtype=complex)).normalized()
    dt = 1e-3
    start = np.zeros((draws, 2))
    seed = int(rng.integers(2**32))
    new = sample_step(start, flat, s, ShiftVelocity.zero(1), dt, chunk_generator(seed, 0))
    cov, se = fluctuation_covariance(new - start)
    target = s.eta * dt * np.diag(1.0 / np.asarray(s.masses))
    z = float(np.max(np.abs(cov - target) / se))
    return CheckResult("fluctuation_law", z < 3.0, z, 3.0, "max |cov - eta dt / m| in standard errors")


def check_checkpoint(rng) -> CheckResult:
    g = GridSpec(1, 2, 16, 8.0)
    s = ParticleSystem([1.0, 2.5], hbar=0.7)
    amp = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    psi = WaveFunction(g, amp, 0.125)
    back = decode(encode(psi, s)).psi
    same = back.amplitudes.tobytes() == psi.amplitudes.tobytes() and back.t == psi.t
    return CheckResult("checkpoint_roundtrip", same, 0.0 if same else 1.0, 0.0)


def check_continuity_order(rng) -> CheckResult:
    g = GridSpec(1, 1, 256, 48.0)
    s = ParticleSystem([1.0])
    zero = ShiftVelocity.zero(1)
    # start away from t = 0, where a packet at rest is time-symmetric and the
    # leading error term cancels
    psi = propagate(gaussian_packet(g, s, 0.0, 1.0, 0.3), s, FREE, zero, 0.05, 10)
    res = []
    for dt in (0.04, 0.02):
        nxt = propagate(psi, s, FREE, zero, dt, 1)
        res.append(continuity_residual(psi, nxt, s, zero))
    ratio = res[0] / res[1]
    ok = 3.5 <= ratio <= 4.5
    return CheckResult("continuity_order", ok, ratio, 4.0, "residual ratio on halving dt, expected in [3.5, 4.5]")


CHECKS: tuple[Callable, ...] = (
    check_geometry_assembly,
    check_complex_structure,
    check_chart_metric,
    check_unitarity,
    check_linearity,
    check_free_spreading,
    check_shift_curvature,
    check_translation_best_match,
    check_vortex_rotation,
    check_maxent,
    check_fluctuation_law,
    check_checkpoint,
    check_continuity_order,
)


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for check in CHECKS:
        t0 = time.perf_counter()
        r = check(rng)
        r = CheckResult(r.name, bool(r.passed), float(r.value), r.threshold, r.detail, time.perf_counter() - t0)
        log.info(r.line())
        out.append(r)
    return out


def reference_checks(evolve_summary: dict, sample_summary: dict) -> list[CheckResult]:
    cc = evolve_summary["constraint_check"]
    tv = sample_summary["density_comparison"]["total_variation"]
    return [
        CheckResult("reference_momentum_constraint", bool(cc["momentum_ok"]), cc["momentum_residual"], cc["tolerance"]),
        CheckResult("reference_norm", evolve_summary["max_norm_defect"] < 1e-12, evolve_summary["max_norm_defect"], 1e-12),
        CheckResult("reference_ensemble_density", tv < 0.05, tv, 0.05, "total variation vs |psi_T|^2"),
    ]


def checks_csv(results: list[CheckResult]) -> str:
    buf = io.StringIO()
    buf.write("name,passed,value,threshold\n")
    for r in results:
        buf.write(f"{r.name},{int(r.passed)},{fmt(r.value)},{fmt(r.threshold)}\n")
    return buf.getvalue()


def run_verify(
    out: Path,
    seed: int | None = None,
    threads: int = 1,
    backend: str | None = None,
    config: ExperimentConfig | None = None,
    printer: Callable[[str], None] = print,
) -> tuple[bool, dict]:
    """Run the checks and the reference pipelines; return (all passed, summary)."""
    out = Path(out)
    config = config or parse_config_text(REFERENCE_CONFIG)
    if config.sampler is None:
        config.sampler = parse_config_text(REFERENCE_CONFIG).sampler
    if seed is not None:
        config.sampler.seed = int(seed)
    seed = config.sampler.seed
    results = run_checks(seed)
    for r in results:
        printer(r.line())
    evolved = run_evolve(config, out, backend)
    sampled_dir = out / "sample"
    sampled = run_sample(config, sampled_dir, seed, threads, backend)
    ref = reference_checks(evolved.summary, sampled.summary)
    for r in ref:
        printer(r.line())
    results += ref
    write_text(out / "checks.csv", checks_csv(results))
    passed = all(r.passed for r in results)
    summary = {
        "command": "verify",
        "seed": seed,
        "passed": passed,
        "checks": {r.name: {"passed": r.passed, "value": r.value, "threshold": r.threshold} for r in results},
        "reference": evolved.summary,
        "sample": sampled.summary,
    }
    printer(f"{'PASS' if passed else 'FAIL'} verify: {sum(r.passed for r in results)}/{len(results)} checks")
    return passed, summary
