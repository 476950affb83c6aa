"""Symplectic form, information metric and complex structure on e-phase space.

Two charts are supported for tangent vectors: ``"rho_phi"`` with components
``(d rho, d phi)`` and ``"psi"`` with components ``(d psi, i hbar d psi*)``.
Integrals over configuration space are Riemann sums, so functional
derivatives become pointwise ones and the Dirac delta is ``delta_ij / h^D``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    NODE_FLOOR,
    EpistemicState,
    ParticleSystem,
    WaveFunction,
    epistemic_to_wf,
    require_same_grid,
    wf_to_epistemic,
)
from .errors import ChartMismatch, NodeError

RHO_PHI = "rho_phi"
PSI = "psi"


@dataclass(frozen=True, eq=False)
class TangentVector:
    chart: str
    first: np.ndarray
    second: np.ndarray
    base: EpistemicState | WaveFunction
    hbar: float = 1.0

    def __post_init__(self):
        if self.chart not in (RHO_PHI, PSI):
            raise ValueError(f"unknown chart {self.chart!r}")
        shape = self.base.grid.shape
        if np.shape(self.first) != shape or np.shape(self.second) != shape:
            raise ValueError("tangent components must match the grid shape")

    @classmethod
    def in_rho_phi(cls, base: EpistemicState, drho, dphi) -> "TangentVector":
        return cls(RHO_PHI, np.asarray(drho, float), np.asarray(dphi, float), base, base.hbar)

    @classmethod
    def in_psi(cls, base: WaveFunction, dpsi, hbar: float = 1.0) -> "TangentVector":
        dpsi = np.asarray(dpsi, dtype=complex)
        return cls(PSI, dpsi, 1j * hbar * np.conj(dpsi), base, hbar)

    @property
    def grid(self):
        return self.base.grid

    def layout_defect(self) -> float:
        """How far the psi-chart pair is from (d psi, i hbar d psi*)."""
        if self.chart != PSI:
            return 0.0
        return float(np.max(np.abs(self.second - 1j * self.hbar * np.conj(self.first))))


def _check_pair(V: TangentVector, U: TangentVector):
    if V.chart != U.chart:
        raise ChartMismatch(f"{V.chart} vs {U.chart}")
    require_same_grid(V.grid, U.grid)


def _base_rho(V: TangentVector) -> np.ndarray:
    rho = V.base.rho if isinstance(V.base, EpistemicState) else V.base.density
    if rho.min() <= NODE_FLOOR * rho.max():
        raise NodeError("metric in the (rho, phi) chart needs a nodeless base state")
    return rho


def symplectic_form(V: TangentVector, U: TangentVector) -> complex:
    """Omega[V, U] = int (V^1 U^2 - V^2 U^1), kept complex for assembly."""
    _check_pair(V, U)
    return complex(V.grid.integrate(V.first * U.second - V.second * U.first))


def symplectic_eval(V: TangentVector, U: TangentVector) -> float:
    return symplectic_form(V, U).real


def metric_form(V: TangentVector, U: TangentVector) -> complex:
    """G[V, U] with the chart's own tensor components."""
    _check_pair(V, U)
    if V.chart == RHO_PHI:
        rho = _base_rho(V)
        h = V.hbar
        integrand = (h / (2 * rho)) * V.first * U.first + (2 * rho / h) * V.second * U.second
    else:
        integrand = -1j * (V.first * U.second + V.second * U.first)
    return complex(V.grid.integrate(integrand))


def metric_eval(V: TangentVector, U: TangentVector) -> float:
    return metric_form(V, U).real


def complex_structure_apply(V: TangentVector) -> TangentVector:
    if V.chart == RHO_PHI:
        rho = _base_rho(V)
        h = V.hbar
        return TangentVector(RHO_PHI, -(2 * rho / h) * V.second, (h / (2 * rho)) * V.first, V.base, h)
    return TangentVector(PSI, 1j * V.first, -1j * V.second, V.base, V.hbar)


def to_psi_chart(V: TangentVector) -> TangentVector:
    """Push a (d rho, d phi) vector through psi = rho^(1/2) exp(i phi / hbar)."""
    if V.chart == PSI:
        return V
    base = V.base if isinstance(V.base, EpistemicState) else wf_to_epistemic(V.base, V.hbar)
    rho = _base_rho(V)
    sq = np.sqrt(rho)
    dpsi = (V.first / (2 * sq) + 1j * sq * V.second / V.hbar) * np.exp(1j * base.phi / V.hbar)
    return TangentVector.in_psi(epistemic_to_wf(base), dpsi, V.hbar)


def to_rho_phi_chart(V: TangentVector) -> TangentVector:
    if V.chart == RHO_PHI:
        return V
    psi = V.base if isinstance(V.base, WaveFunction) else epistemic_to_wf(V.base)
    rho = psi.density
    if rho.min() <= NODE_FLOOR * rho.max():
        raise NodeError("chart change needs a nodeless base state")
    prod = np.conj(psi.amplitudes) * V.first
    drho = 2 * prod.real
    dphi = V.hbar * prod.imag / rho
    return TangentVector.in_rho_phi(wf_to_epistemic(psi, V.hbar), drho, dphi)


# ------------------------------------------------------------ 2x2 fibers


def metric_block(rho: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    out = np.zeros(np.shape(rho) + (2, 2))
    out[..., 0, 0] = hbar / (2 * rho)
    out[..., 1, 1] = 2 * rho / hbar
    return out


def symplectic_block(shape) -> np.ndarray:
    out = np.zeros(tuple(shape) + (2, 2))
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = -1.0
    return out


def complex_structure_block(rho: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    out = np.zeros(np.shape(rho) + (2, 2))
    out[..., 0, 1] = -2 * rho / hbar
    out[..., 1, 0] = hbar / (2 * rho)
    return out


def compatibility_defect(rho: np.ndarray, hbar: float = 1.0) -> float:
    """max |J + G^-1 Omega| over all fibers."""
    g_inv = np.linalg.inv(metric_block(rho, hbar))
    lhs = -g_inv @ symplectic_block(np.shape(rho))
    return float(np.max(np.abs(complex_structure_block(rho, hbar) - lhs)))


# ----------------------------------------------------------- inner product


def assembled_inner_product(psi: WaveFunction, chi: WaveFunction, hbar: float = 1.0) -> complex:
    """(1 / 2 hbar) (G + i Omega)[Psi, X] with Psi = (psi, i hbar psi*)."""
    require_same_grid(psi.grid, chi.grid)
    Psi = TangentVector.in_psi(psi, psi.amplitudes, hbar)
    X = TangentVector.in_psi(chi, chi.amplitudes, hbar)
    return (metric_form(Psi, X) + 1j * symplectic_form(Psi, X)) / (2 * hbar)


def inner_product(psi: WaveFunction, chi: WaveFunction, check: bool = False, hbar: float = 1.0, tol: float = 1e-12) -> complex:
    """<psi|chi>.  With ``check=True`` the geometric assembly is compared too."""
    require_same_grid(psi.grid, chi.grid)
    value = complex(np.vdot(psi.amplitudes, chi.amplitudes) * psi.grid.cell_volume)
    if check:
        other = assembled_inner_product(psi, chi, hbar)
        if abs(other - value) > tol:
            raise ArithmeticError(f"inner product assembly mismatch {abs(other - value):.3e}")
    return value


def require_geometry_units(system: ParticleSystem):
    """Geometry identities are stated with hbar; refuse to run when eta differs."""
    if system.eta != system.hbar:
        raise ValueError("geometry checks require eta == hbar")
