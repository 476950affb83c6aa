import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relational_ed import GridSpec, ParticleSystem, wf_to_epistemic
from relational_ed.core import from_function
from relational_ed.errors import ChartMismatch, GridMismatch, NodeError
from relational_ed.geometry import (
    PSI,
    TangentVector,
    assembled_inner_product,
    compatibility_defect,
    complex_structure_apply,
    inner_product,
    metric_eval,
    require_geometry_units,
    symplectic_eval,
    to_psi_chart,
    to_rho_phi_chart,
)

from conftest import smooth_state

GRID = GridSpec(1, 1, 64, 16.0)


def _tangent(base, rng):
    x = GRID.coord(0)
    env = np.exp(-(x**2) / 8.0)
    drho = env * (rng.normal() + rng.normal() * x + rng.normal() * x**2)
    dphi = env * (rng.normal() + rng.normal() * np.sin(x) + rng.normal() * np.cos(x))
    return TangentVector.in_rho_phi(base, drho, dphi)


def _pair(seed):
    rng = np.random.default_rng(seed)
    base = wf_to_epistemic(smooth_state(GRID, rng))
    return base, _tangent(base, rng), _tangent(base, rng)


seeds = st.integers(0, 2**32 - 1)


# --------------------------------------------------------------- symplectic


@given(seeds)
def test_symplectic_antisymmetry(seed):
    _, V, U = _pair(seed)
    assert abs(symplectic_eval(V, V)) < 1e-14
    assert symplectic_eval(V, U) == pytest.approx(-symplectic_eval(U, V), abs=1e-14)


def test_symplectic_quadrature_oracle():
    base, _, _ = _pair(1)
    x = GRID.coord(0)
    drho = np.exp(-(x**2) / 2)
    dphi = np.cos(x)
    V = TangentVector.in_rho_phi(base, drho, np.zeros_like(x))
    U = TangentVector.in_rho_phi(base, np.zeros_like(x), dphi)
    # int exp(-x^2/2) cos(x) dx = sqrt(2 pi) exp(-1/2)
    assert symplectic_eval(V, U) == pytest.approx(np.sqrt(2 * np.pi) * np.exp(-0.5), abs=1e-12)


@given(seeds)
def test_symplectic_chart_invariance(seed):
    _, V, U = _pair(seed)
    a = symplectic_eval(V, U)
    b = symplectic_eval(to_psi_chart(V), to_psi_chart(U))
    assert abs(a - b) < 1e-10 * max(1.0, abs(a))


# ------------------------------------------------------------------- metric


@given(seeds)
def test_metric_symmetric_positive(seed):
    _, V, U = _pair(seed)
    assert metric_eval(V, U) == pytest.approx(metric_eval(U, V), rel=1e-14, abs=1e-14)
    assert metric_eval(V, V) > 0


@given(seeds)
def test_metric_chart_identity(seed):
    base, V, _ = _pair(seed)
    rho = base.rho
    dpsi = (V.first / (2 * np.sqrt(rho)) + 1j * np.sqrt(rho) * V.second / base.hbar) * np.exp(1j * base.phi / base.hbar)
    oracle = 2 * base.hbar * GRID.integrate(np.abs(dpsi) ** 2)
    assert metric_eval(V, V) == pytest.approx(oracle, rel=1e-10)
    assert metric_eval(to_psi_chart(V), to_psi_chart(V)) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("hbar", [1.0, 0.5])
def test_metric_constant_phase_shift(hbar):
    rng = np.random.default_rng(2)
    base = wf_to_epistemic(smooth_state(GRID, rng), hbar)
    c = 0.7
    V = TangentVector.in_rho_phi(base, np.zeros(GRID.shape), np.full(GRID.shape, c))
    assert metric_eval(V, V) == pytest.approx(2 * c**2 / hbar, rel=1e-12)


def test_metric_rejects_nodes():
    g = GridSpec(1, 1, 64, 16.0)
    psi = from_function(g, lambda x: x * np.exp(-(x**2) / 8))
    base = wf_to_epistemic(psi, require_nodeless=False)
    V = TangentVector.in_rho_phi(base, np.zeros(g.shape), np.ones(g.shape))
    with pytest.raises(NodeError):
        metric_eval(V, V)


def test_chart_mismatch():
    _, V, U = _pair(3)
    with pytest.raises(ChartMismatch):
        metric_eval(V, to_psi_chart(U))


# ------------------------------------------------------- complex structure


@given(seeds)
def test_complex_structure_squares_to_minus_one(seed):
    _, V, _ = _pair(seed)
    JJ = complex_structure_apply(complex_structure_apply(V))
    assert np.max(np.abs(JJ.first + V.first)) < 1e-12 * np.max(np.abs(V.first))
    assert np.max(np.abs(JJ.second + V.second)) < 1e-12 * np.max(np.abs(V.second))


@given(seeds)
def test_complex_structure_is_multiplication_by_i(seed):
    _, V, _ = _pair(seed)
    JV = to_psi_chart(complex_structure_apply(V))
    iV = 1j * to_psi_chart(V).first
    assert np.max(np.abs(JV.first - iV)) < 1e-10 * np.max(np.abs(iV))


@given(seeds)
def test_complex_structure_is_isometry(seed):
    _, V, U = _pair(seed)
    JV, JU = complex_structure_apply(V), complex_structure_apply(U)
    assert metric_eval(JV, JU) == pytest.approx(metric_eval(V, U), rel=1e-10, abs=1e-12)


@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=30), st.sampled_from([1.0, 0.3, 2.0]))
def test_fiber_compatibility(rho, hbar):
    assert compatibility_defect(np.array(rho), hbar) < 1e-12 * max(1.0, max(rho) / hbar, hbar / min(rho))


def test_psi_chart_layout():
    base, V, _ = _pair(4)
    W = to_psi_chart(V)
    assert W.chart == PSI
    assert W.layout_defect() < 1e-14
    back = to_rho_phi_chart(W)
    assert np.allclose(back.first, V.first, atol=1e-12)
    assert np.allclose(back.second, V.second, atol=1e-12)


@given(seeds)
def test_norm_preserving_direction_is_tangent_to_simplex(seed):
    rng = np.random.default_rng(seed)
    psi = smooth_state(GRID, rng)
    g = np.cos(rng.normal() * GRID.coord(0)) + rng.normal()
    g = g - GRID.integrate(g * psi.density)
    W = TangentVector.in_psi(psi, g * psi.amplitudes + 1j * rng.normal() * psi.amplitudes)
    assert abs(GRID.integrate(to_rho_phi_chart(W).first)) < 1e-12


# ----------------------------------------------------------- inner product


@given(seeds)
def test_assembly_identity(seed):
    rng = np.random.default_rng(seed)
    a, b = smooth_state(GRID, rng, False), smooth_state(GRID, rng, False)
    assert abs(assembled_inner_product(a, b) - inner_product(a, b)) < 1e-11
    inner_product(a, b, check=True)


@given(seeds)
def test_conjugate_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = smooth_state(GRID, rng, False), smooth_state(GRID, rng, False)
    assert inner_product(a, b) == pytest.approx(np.conj(inner_product(b, a)), abs=1e-15)
    assert inner_product(a, a) == pytest.approx(1.0, abs=1e-12)


def test_discrete_plane_waves_are_orthogonal():
    k = GRID.wavenumbers(0)
    a = from_function(GRID, lambda x: np.exp(1j * k[2] * x))
    b = from_function(GRID, lambda x: np.exp(1j * k[5] * x))
    assert abs(inner_product(a, b)) < 1e-12


def test_inner_product_grid_mismatch():
    rng = np.random.default_rng(6)
    a = smooth_state(GRID, rng, False)
    b = smooth_state(GridSpec(1, 1, 32, 16.0), rng, False)
    with pytest.raises(GridMismatch):
        inner_product(a, b)


def test_geometry_units_guard():
    require_geometry_units(ParticleSystem([1.0]))
    with pytest.raises(ValueError):
        require_geometry_units(ParticleSystem([1.0], hbar=1.0, eta=0.5))
