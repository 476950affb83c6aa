import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relational_ed import GridSpec, ParticleSystem, ShiftVelocity, gaussian_packet, vortex_state, wf_to_epistemic
from relational_ed.core import from_function, harmonic_ground_state
from relational_ed.errors import DimensionError, NodeError, NotNormalized
from relational_ed.evolution import propagate
from relational_ed.observables import (
    FREE,
    PotentialSpec,
    angular_momentum_expectation,
    current_velocity,
    hamiltonian_expectation,
    inertia_expectation,
    mean_shift_speed_sq,
    momentum_expectation,
    observe,
    potential_field,
)
from relational_ed.core import WaveFunction

from conftest import smooth_state

seeds = st.integers(0, 2**32 - 1)
G2 = GridSpec(2, 1, 64, 16.0)


# ---------------------------------------------------------------- potential


def test_relational_flags():
    assert PotentialSpec("free").relational
    assert PotentialSpec("pair-spring").relational
    assert PotentialSpec("pair-gaussian").relational
    assert not PotentialSpec("external-harmonic").relational
    with pytest.raises(ValueError):
        PotentialSpec("coulomb")


def test_pair_spring_values():
    g = GridSpec(1, 2, 16, 8.0)
    s = ParticleSystem([1.0, 1.0])
    V = potential_field(g, s, PotentialSpec("pair-spring", spring_constant=2.0))
    r = g.coord(0) - g.coord(1)
    r = r - 8.0 * np.round(r / 8.0)
    assert np.array_equal(V, np.broadcast_to(r**2, g.shape))


def test_pair_potential_lattice_translation_invariance():
    g = GridSpec(1, 2, 32, 8.0)
    s = ParticleSystem([1.0, 2.0])
    for spec in (PotentialSpec("pair-spring"), PotentialSpec("pair-gaussian", depth=2.0, width=0.7)):
        V = potential_field(g, s, spec)
        # moving both particles by the same lattice vector rolls both axes
        assert np.array_equal(np.roll(V, (5, 5), axis=(0, 1)), V)


# ------------------------------------------------------------------- energy


def test_plane_wave_energy():
    g = GridSpec(1, 1, 64, 16.0)
    s = ParticleSystem([2.0], hbar=0.7)
    k = g.wavenumbers(0)[4]
    psi = from_function(g, lambda x: np.exp(1j * k * x))
    E = hamiltonian_expectation(psi, s)
    assert E == pytest.approx((0.7 * k) ** 2 / (2 * 2.0), rel=1e-12)


@pytest.mark.parametrize("mass, omega", [(1.0, 1.0), (2.0, 0.5)])
def test_harmonic_ground_state_energy(mass, omega):
    g = GridSpec(2, 1, 128, 20.0)
    s = ParticleSystem([mass])
    psi = harmonic_ground_state(g, s, omega)
    E = hamiltonian_expectation(psi, s, PotentialSpec("external-harmonic", trap_frequency=omega))
    assert abs(E - 2 * 0.5 * omega) < 1e-6


@given(seeds)
def test_shift_expansion(seed):
    rng = np.random.default_rng(seed)
    psi = smooth_state(G2, rng, False)
    s = ParticleSystem([1.3])
    V = PotentialSpec("external-harmonic", trap_frequency=0.4)
    shift = ShiftVelocity(rng.normal(size=2), rng.normal())
    H0 = hamiltonian_expectation(psi, s, V)
    Hs, imag = hamiltonian_expectation(psi, s, V, shift, with_imag=True)
    # oracle built from the separately computed moments
    expected = (
        H0
        - shift.lambda_dot @ momentum_expectation(psi, s)
        - shift.zeta_dot * angular_momentum_expectation(psi, s)
        + mean_shift_speed_sq(psi, s, shift)
    )
    assert abs(Hs - expected) < 1e-10 * max(1.0, abs(expected))
    assert abs(imag) < 1e-10


def test_translation_shift_expansion_closed_form():
    g = GridSpec(1, 2, 128, 32.0)
    s = ParticleSystem([1.0, 3.0])
    psi = gaussian_packet(g, s, [-1.0, 1.0], 1.0, [0.5, -0.25])
    lam = np.array([0.3])
    H0 = hamiltonian_expectation(psi, s)
    Hs = hamiltonian_expectation(psi, s, FREE, ShiftVelocity(lam))
    P = momentum_expectation(psi, s)
    assert Hs == pytest.approx(H0 - lam @ P + 0.5 * 4.0 * lam @ lam, rel=1e-12)


def test_energy_requires_normalized_state():
    g = GridSpec(1, 1, 128, 32.0)
    psi = WaveFunction(g, 2 * gaussian_packet(g, ParticleSystem([1.0])).amplitudes)
    with pytest.raises(NotNormalized):
        hamiltonian_expectation(psi, ParticleSystem([1.0]))


def test_shift_dimension_mismatch():
    psi = smooth_state(G2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        hamiltonian_expectation(psi, ParticleSystem([1.0]), FREE, ShiftVelocity([0.1]))


# ----------------------------------------------------------------- momentum


def test_real_state_has_no_momentum(rng):
    psi = smooth_state(G2, rng, False)
    real = WaveFunction(G2, np.abs(psi.amplitudes))
    assert np.max(np.abs(momentum_expectation(real.normalized(), ParticleSystem([1.0])))) < 1e-12


def test_opposite_boosts_cancel():
    g = GridSpec(1, 2, 128, 32.0)
    s = ParticleSystem([1.0, 1.0])
    psi = gaussian_packet(g, s, [-1.0, 1.0], 1.0, [1.5, -1.5])
    assert abs(momentum_expectation(psi, s)[0]) < 1e-12


# ---------------------------------------------------------- angular momentum


def test_vortex_angular_momentum_and_inertia():
    g = GridSpec(2, 1, 96, 16.0)
    s = ParticleSystem([1.0])
    psi = vortex_state(g)
    assert angular_momentum_expectation(psi, s) == pytest.approx(1.0, abs=1e-12)
    # <r^2> = int r^5 e^{-r^2} / int r^3 e^{-r^2} = 1 / (1/2) = 2
    assert inertia_expectation(psi, s)[2, 2] == pytest.approx(2.0, abs=1e-10)


def test_isotropic_real_gaussian_has_no_angular_momentum(unit):
    psi = gaussian_packet(GridSpec(2, 1, 128, 32.0), unit, 0.0, 1.0, 0.0)
    assert abs(angular_momentum_expectation(psi, unit)) < 1e-14


@pytest.mark.parametrize("theta", [0.3, 1.1, np.pi / 2])
def test_rotated_state_keeps_angular_momentum(theta):
    g = GridSpec(2, 1, 96, 16.0)
    s = ParticleSystem([1.0])

    def fn(x, y, c=np.cos(theta), sn=np.sin(theta)):
        u, v = c * x + sn * y, -sn * x + c * y
        return (u + 0.5 + 1j * v) * np.exp(-((u - 0.3) ** 2) / 2 - v**2 / 3)

    base = from_function(g, lambda x, y: fn(x, y, 1.0, 0.0))
    rotated = from_function(g, fn)
    La, Lb = angular_momentum_expectation(base, s), angular_momentum_expectation(rotated, s)
    assert abs(La - Lb) < 1e-10


def test_rotational_quantities_need_two_dimensions(grid1, unit):
    psi = gaussian_packet(grid1, unit)
    with pytest.raises(DimensionError):
        angular_momentum_expectation(psi, unit)
    with pytest.raises(DimensionError):
        inertia_expectation(psi, unit)
    assert observe(psi, unit).angular_momentum is None


# ------------------------------------------------------------------ inertia


def _blob(cx, cy):
    # two particles with correlated Gaussian envelopes around (cx, cy)
    def fn(x0, y0, x1, y1):
        u0, v0, u1, v1 = x0 - cx, y0 - cy, x1 - cx, y1 - cy
        return np.exp(-(u0**2 + v0**2 + u1**2 + v1**2) / 4 - 0.2 * (u0 * u1 + v0 * v1) + 0.3j * u0)

    return fn


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_parallel_axis(cx, cy):
    g = GridSpec(2, 2, 28, 20.0)
    s = ParticleSystem([1.0, 2.0])
    base = from_function(g, _blob(0.0, 0.0))
    moved = from_function(g, _blob(cx, cy))
    dI = inertia_expectation(moved, s)[2, 2] - inertia_expectation(base, s)[2, 2]
    assert dI == pytest.approx(3.0 * (cx**2 + cy**2), abs=1e-9)


@given(seeds)
def test_inertia_symmetric_psd(seed):
    g = GridSpec(3, 1, 16, 8.0)
    psi = smooth_state(g, np.random.default_rng(seed), False)
    I = inertia_expectation(psi, ParticleSystem([1.7]))
    assert np.array_equal(I, I.T)
    assert np.linalg.eigvalsh(I).min() > -1e-12


def test_report_fields(unit):
    r = observe(gaussian_packet(GridSpec(2, 1, 128, 32.0), unit, 0.0, 1.0, [0.5, 0.0]), unit)
    assert abs(r.norm_defect) < 1e-12
    assert abs(r.energy_imag) < 1e-12
    assert r.momentum == pytest.approx([0.5, 0.0], abs=1e-12)


# ----------------------------------------------------------- current velocity


def test_current_velocity_zero_phase(unit):
    g = GridSpec(1, 1, 64, 16.0)
    state = wf_to_epistemic(from_function(g, lambda x: np.exp(-(x**2) / 16)))
    assert np.max(np.abs(current_velocity(state, unit))) < 1e-13


def test_current_velocity_plane_wave_and_shift(unit):
    g = GridSpec(1, 1, 64, 16.0)
    k = g.wavenumbers(0)[3]
    psi = from_function(g, lambda x: np.exp(1j * k * x) * (1.5 + np.cos(2 * np.pi * x / 16)))
    v = current_velocity(psi, unit)
    assert np.max(np.abs(v - k)) < 1e-12
    flat = wf_to_epistemic(from_function(g, lambda x: np.exp(-(x**2) / 16)))
    v = current_velocity(flat, unit, ShiftVelocity([0.7]))
    assert np.max(np.abs(v + 0.7)) < 1e-13


def test_current_velocity_rejects_nodes(grid2):
    with pytest.raises(NodeError):
        current_velocity(vortex_state(grid2), ParticleSystem([1.0]))


# ---------------------------------------------------------------- Ehrenfest


def test_momentum_conserved_by_pair_potential():
    g = GridSpec(1, 2, 160, 48.0)
    s = ParticleSystem([1.0, 2.0])
    psi = gaussian_packet(g, s, [-1.0, 1.0], 1.5, [0.5, 0.0])
    V = PotentialSpec("pair-gaussian", depth=1.0, width=1.5)
    P0 = momentum_expectation(psi, s)
    later = propagate(psi, s, V, ShiftVelocity([0.0]), 0.01, 100)
    assert np.max(np.abs(momentum_expectation(later, s) - P0)) < 1e-8


def test_angular_momentum_conserved_by_isotropic_pair_potential():
    g = GridSpec(2, 2, 32, 20.0)
    s = ParticleSystem([1.0, 1.0])
    psi = from_function(
        g, lambda x0, y0, x1, y1: np.exp(-((x0 + 1) ** 2 + y0**2 + (x1 - 1) ** 2 + y1**2) / 3 + 0.3j * (y0 - y1))
    )
    V = PotentialSpec("pair-spring", spring_constant=0.5)
    L0 = angular_momentum_expectation(psi, s)
    later = propagate(psi, s, V, ShiftVelocity([0.0, 0.0]), 0.02, 50)
    assert abs(angular_momentum_expectation(later, s) - L0) < 1e-8
