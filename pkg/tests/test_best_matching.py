import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relational_ed import GridSpec, ParticleSystem, ShiftVelocity, gaussian_packet, vortex_state
from relational_ed.best_matching import (
    best_match,
    best_match_both,
    best_match_rotation,
    best_match_translation,
    center_state,
    constraint_check,
    galilean_boost,
    mismatch,
    numerical_best_match,
    translate_state,
)
from relational_ed.core import from_function
from relational_ed.errors import DimensionError, NonConvexWarning, NotCentered
from relational_ed.evolution import CN, SolverParams, evolve
from relational_ed.observables import (
    FREE,
    PotentialSpec,
    angular_momentum_expectation,
    center_of_mass,
    hamiltonian_expectation,
    inertia_expectation,
    momentum_expectation,
)

from conftest import smooth_state

G1 = GridSpec(1, 1, 256, 48.0)
G12 = GridSpec(1, 2, 128, 32.0)
GV = GridSpec(2, 1, 96, 16.0)
UNIT = ParticleSystem([1.0])
ZERO1 = ShiftVelocity([0.0])


# ----------------------------------------------------------------- mismatch


def test_mismatch_vanishes_at_zero_dt():
    psi = gaussian_packet(G1, UNIT, 0.0, 1.5, 1.0)
    rep = mismatch(psi, UNIT, FREE, ZERO1, 0.0)
    assert rep.direct == 0.0 and rep.closed_form == 0.0
    with pytest.raises(ValueError):
        mismatch(psi, UNIT, FREE, ZERO1, -0.1)


def test_mismatch_of_eigenstate():
    g = GridSpec(1, 1, 64, 16.0)
    k = g.wavenumbers(0)[3]
    psi = from_function(g, lambda x: np.exp(1j * k * x))
    dt = 1e-3
    rep = mismatch(psi, UNIT, FREE, ZERO1, dt)
    E = k**2 / 2
    assert rep.energy == pytest.approx(E, rel=1e-12)
    assert rep.closed_form == pytest.approx(dt**2 * E**2, rel=1e-12)
    assert abs(rep.direct - dt**2 * E**2) < 10 * dt * dt**2 * E**2


@pytest.mark.parametrize("dt", [1e-2, 1e-3])
def test_direct_and_closed_form_agree(dt, rng):
    g = GridSpec(1, 1, 64, 16.0)
    psi = smooth_state(g, rng)
    rep = mismatch(psi, UNIT, PotentialSpec("external-harmonic", trap_frequency=0.5), ShiftVelocity([0.3]), dt)
    assert rep.relative_difference < 10 * dt


# -------------------------------------------------------------- translation


def test_real_state_has_no_translation_shift(rng):
    psi = smooth_state(G1, rng, False)
    real = psi.replace(np.abs(psi.amplitudes)).normalized()
    assert abs(best_match_translation(real, UNIT).lambda_dot[0]) < 1e-12


def test_boosted_gaussian_translation_shift():
    res = best_match_translation(gaussian_packet(G1, UNIT, 0.0, 1.5, 2.0), UNIT)
    assert res.lambda_dot[0] == pytest.approx(2.0, abs=1e-12)
    assert res.zeta_dot is None and res.method == "analytic"


def test_two_particle_translation_shift():
    s = ParticleSystem([1.0, 3.0])
    k = 1.2
    psi = gaussian_packet(G12, s, [-1.0, 1.0], 1.0, [k, 0.0])
    assert best_match_translation(psi, s).lambda_dot[0] == pytest.approx(k / 4, abs=1e-12)


def test_translation_shift_is_stationary_point():
    s = ParticleSystem([1.0, 3.0])
    psi = gaussian_packet(G12, s, [-1.0, 1.0], 1.0, [0.7, -0.2])
    V = PotentialSpec("pair-spring", spring_constant=0.5)
    lam = best_match_translation(psi, s, V).lambda_dot[0]
    h = 1e-3
    plus = hamiltonian_expectation(psi, s, V, ShiftVelocity([lam + h]))
    minus = hamiltonian_expectation(psi, s, V, ShiftVelocity([lam - h]))
    assert abs(plus - minus) / (2 * h) < 1e-7


def test_shifted_energy_is_parabola_with_total_mass_curvature():
    s = ParticleSystem([1.0, 3.0])
    psi = gaussian_packet(G12, s, [-1.0, 1.0], 1.0, [0.7, -0.2])
    lams = np.linspace(-2.0, 2.0, 9)
    H = [hamiltonian_expectation(psi, s, FREE, ShiftVelocity([v])) for v in lams]
    coeffs = np.polyfit(lams, H, 2)
    assert abs(2 * coeffs[0] - 4.0) < 1e-8


@given(st.floats(-2.0, 2.0))
def test_boost_covariance(v):
    s = ParticleSystem([1.0, 3.0])
    psi = gaussian_packet(G12, s, [-1.0, 1.0], 1.0, [0.7, -0.2])
    before = best_match_translation(psi, s).lambda_dot[0]
    after = best_match_translation(galilean_boost(psi, s, [v]), s).lambda_dot[0]
    assert after == pytest.approx(before - v, abs=1e-10)


# ---------------------------------------------------------------- rotation


def test_vortex_rotation_shift():
    res = best_match_rotation(vortex_state(GV), UNIT)
    assert res.zeta_dot == pytest.approx(0.5, abs=1e-10)
    assert res.condition == 1.0


@pytest.mark.parametrize("scale", [0.8, 1.25])
def test_vortex_rotation_scales_inverse_square(scale):
    g = GridSpec(2, 1, 128, 20.0)
    res = best_match_rotation(vortex_state(g, width=scale), UNIT)
    assert res.zeta_dot == pytest.approx(0.5 / scale**2, rel=1e-9)


def test_real_isotropic_state_has_no_rotation():
    g = GridSpec(2, 1, 128, 32.0)
    res = best_match_rotation(gaussian_packet(g, UNIT, 0.0, 1.0, 0.0), UNIT)
    assert abs(res.zeta_dot) < 1e-14


def test_rotation_requires_centred_state():
    with pytest.raises(NotCentered):
        best_match_rotation(vortex_state(GV, center=(1.0, 0.0)), UNIT)
    with pytest.raises(DimensionError):
        best_match_rotation(gaussian_packet(G1, UNIT), UNIT)


def test_rotation_requires_zero_momentum():
    boosted = galilean_boost(vortex_state(GV), UNIT, [0.3, 0.0])
    with pytest.raises(NotCentered):
        best_match_rotation(boosted, UNIT)


def test_rotation_shift_is_stationary_point():
    psi = vortex_state(GV)
    z = best_match_rotation(psi, UNIT).zeta_dot
    h = 1e-3
    plus = hamiltonian_expectation(psi, UNIT, FREE, ShiftVelocity([0.0, 0.0], z + h))
    minus = hamiltonian_expectation(psi, UNIT, FREE, ShiftVelocity([0.0, 0.0], z - h))
    assert abs(plus - minus) / (2 * h) < 1e-7


def test_three_dimensional_rotation_solves_tensor_equation():
    g = GridSpec(3, 1, 32, 12.0)
    psi = from_function(
        g, lambda x, y, z: (x + 1j * y + 0.4j * z) * np.exp(-(x**2) / 2 - y**2 / 3 - z**2 / 2.5)
    )
    psi = center_state(psi, UNIT)
    res = best_match_rotation(psi, UNIT)
    I = inertia_expectation(psi, UNIT)
    L = angular_momentum_expectation(psi, UNIT)
    assert np.allclose(I @ res.zeta_dot, L, atol=1e-12)
    assert res.condition == pytest.approx(np.linalg.cond(I))


def test_combined_best_match_decouples():
    g = GridSpec(2, 1, 96, 16.0)
    psi = galilean_boost(vortex_state(g), UNIT, [-0.4, 0.2])
    res = best_match_both(psi, UNIT)
    assert res.lambda_dot == pytest.approx([0.4, -0.2], abs=1e-12)
    assert res.zeta_dot == pytest.approx(0.5, abs=1e-10)
    # stationarity in all three shift components
    base = np.array([*res.lambda_dot, res.zeta_dot])
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-3
        up = hamiltonian_expectation(psi, UNIT, FREE, ShiftVelocity((base + e)[:2], (base + e)[2]))
        dn = hamiltonian_expectation(psi, UNIT, FREE, ShiftVelocity((base - e)[:2], (base - e)[2]))
        assert abs(up - dn) / 2e-3 < 1e-7


def test_best_match_dispatch():
    assert best_match(gaussian_packet(G1, UNIT, 0.0, 1.5, 1.0), UNIT).zeta_dot is None
    assert best_match(vortex_state(GV), UNIT).zeta_dot == pytest.approx(0.5)


# --------------------------------------------------------------- numerical


def test_numerical_matches_translation():
    psi = gaussian_packet(G1, UNIT, 0.0, 1.5, 2.0)
    num = numerical_best_match(psi, UNIT, domain=[(-5.0, 5.0)])
    assert num.method == "numerical"
    assert abs(num.lambda_dot[0] - 2.0) < 1e-4


def test_numerical_matches_rotation():
    psi = vortex_state(GV)
    num = numerical_best_match(psi, UNIT, domain=[(-1, 1), (-1, 1), (-2, 2)], active=[2])
    assert abs(num.zeta_dot - 0.5) < 1e-4
    assert np.all(num.lambda_dot == 0)


def test_numerical_zero_motion():
    g = GridSpec(1, 1, 256, 48.0)
    psi = gaussian_packet(g, UNIT, 0.0, 1.5, 0.0)
    num = numerical_best_match(psi, UNIT, domain=[(-3.0, 3.0)])
    assert abs(num.lambda_dot[0]) < 1e-4


def test_nonconvex_warning():
    s = ParticleSystem([1.0, 1.0])
    V = PotentialSpec("pair-gaussian", depth=5.0, width=2.0)
    psi = gaussian_packet(G12, s, [-0.5, 0.5], 1.0, [0.5, 0.5])
    assert hamiltonian_expectation(psi, s, V, ShiftVelocity([0.5])) < 0
    with pytest.warns(NonConvexWarning):
        numerical_best_match(psi, s, V, domain=[(-4.0, 4.0)])


def test_no_warning_when_energy_positive():
    psi = gaussian_packet(G1, UNIT, 0.0, 1.5, 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        numerical_best_match(psi, UNIT, domain=[(-1.0, 5.0)])


# ------------------------------------------------------------ frame changes


def test_galilean_boost():
    psi = gaussian_packet(G1, UNIT, 0.0, 1.5, 2.0)
    assert np.array_equal(galilean_boost(psi, UNIT, [0.0]).amplitudes, psi.amplitudes)
    out = galilean_boost(psi, UNIT, [2.0])
    assert np.allclose(out.density, psi.density, rtol=1e-14, atol=0)
    assert abs(momentum_expectation(out, UNIT)[0]) < 1e-10
    with pytest.raises(DimensionError):
        galilean_boost(psi, UNIT, [1.0, 0.0])


def test_translate_and_centre():
    s = ParticleSystem([1.0, 2.0])
    g = GridSpec(2, 2, 24, 16.0)
    psi = from_function(
        g, lambda x0, y0, x1, y1: np.exp(-((x0 - 0.7) ** 2 + (y0 + 0.2) ** 2 + x1**2 + (y1 - 0.5) ** 2) / 3 + 0.4j * x0)
    )
    moved = translate_state(psi, [0.5, -0.25])
    assert center_of_mass(moved, s) == pytest.approx(center_of_mass(psi, s) + [0.5, -0.25], abs=1e-9)
    c = center_state(psi, s)
    assert np.max(np.abs(center_of_mass(c, s))) < 1e-9
    assert np.max(np.abs(momentum_expectation(c, s))) < 1e-10


# ------------------------------------------------------------- constraints


def test_constraint_check_relational_pair():
    s = ParticleSystem([1.0, 2.0])
    g = GridSpec(1, 2, 160, 48.0)
    psi = gaussian_packet(g, s, [-1.0, 1.0], 1.5, [0.6, 0.0])
    V = PotentialSpec("pair-spring", spring_constant=0.5)
    shift = best_match_translation(psi, s, V).shift
    series = evolve(psi, s, V, shift, SolverParams(0.01, steps=100, record_stride=10))
    rep = constraint_check(series.reports, shift, s, potential=V)
    assert rep.passed and not rep.negative_control_detected
    assert rep.momentum_residual < 1e-6


def test_constraint_check_flags_external_trap():
    # off-centre packet: the trap force changes the momentum
    psi = gaussian_packet(G1, UNIT, 2.0, 1.5, 1.0)
    V = PotentialSpec("external-harmonic", trap_frequency=1.0)
    shift = best_match_translation(psi, UNIT, V).shift
    series = evolve(psi, UNIT, V, shift, SolverParams(0.01, steps=100, record_stride=10))
    rep = constraint_check(series.reports, shift, UNIT, potential=V)
    assert not rep.passed and rep.negative_control_detected
    assert rep.as_dict()["momentum_ok"] is False


def test_constraint_check_free_particle_machine_level():
    psi = gaussian_packet(G1, UNIT, 0.0, 1.5, 1.0)
    shift = best_match_translation(psi, UNIT).shift
    series = evolve(psi, UNIT, FREE, shift, SolverParams(0.01, steps=50, record_stride=10))
    rep = constraint_check(series.reports, shift, UNIT)
    assert rep.momentum_residual < 1e-12 and rep.angular_residual == 0.0


def test_rotation_rate_is_constant_under_evolution():
    # vortex in a trap with omega^2 + zeta^2 = 1 is stationary in the rotating frame
    g = GridSpec(2, 1, 64, 16.0)
    psi = vortex_state(g)
    zeta = best_match_rotation(psi, UNIT).zeta_dot
    V = PotentialSpec("external-harmonic", trap_frequency=np.sqrt(1 - zeta**2))
    shift = ShiftVelocity([0.0, 0.0], zeta)
    series = evolve(psi, UNIT, V, shift, SolverParams(0.05, CN, 20, tolerance=1e-13, record_stride=5))
    for state in series.states[1:]:
        assert abs(best_match_rotation(state, UNIT).zeta_dot - zeta) < 1e-4
