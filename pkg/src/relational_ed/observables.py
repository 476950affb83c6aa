"""Potentials, the shifted Hamiltonian and expectation functionals."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from .core import (
    NODE_FLOOR,
    EpistemicState,
    GridSpec,
    ParticleSystem,
    ShiftVelocity,
    WaveFunction,
    as_wavefunction,
)
from .errors import DimensionError, NodeError

FAMILIES = ("free", "pair-spring", "pair-gaussian", "external-harmonic")
RELATIONAL_FAMILIES = frozenset({"free", "pair-spring", "pair-gaussian"})


@dataclass(frozen=True)
class PotentialSpec:
    """One of the built-in potential families.

    pair-spring:       sum_{n<m} k |x_n - x_m|^2 / 2
    pair-gaussian:     sum_{n<m} -depth exp(-|x_n - x_m|^2 / 2 width^2)
    external-harmonic: sum_n m_n omega^2 |x_n|^2 / 2   (breaks translations)

    Pair separations use the minimum periodic image.
    """

    family: str = "free"
    spring_constant: float = 1.0
    depth: float = 1.0
    width: float = 1.0
    trap_frequency: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.width <= 0:
            raise ValueError("pair-gaussian width must be positive")

    @property
    def relational(self) -> bool:
        return self.family in RELATIONAL_FAMILIES


FREE = PotentialSpec()


def _pair_distance_sq(grid: GridSpec, n: int, m: int) -> np.ndarray:
    total = 0.0
    for a in range(grid.spatial_dim):
        A, B = grid.axis_index(n, a), grid.axis_index(m, a)
        L = grid.axis_length[A]
        if L != grid.axis_length[B]:
            raise ValueError("pair potentials need equal box lengths per spatial axis")
        r = grid.coord(A) - grid.coord(B)
        r = r - L * np.round(r / L)
        total = total + r**2
    return total


@lru_cache(maxsize=16)
def potential_field(grid: GridSpec, system: ParticleSystem, spec: PotentialSpec) -> np.ndarray:
    system.check_grid(grid)
    V = np.zeros(grid.shape)
    N = grid.particle_count
    if spec.family in ("pair-spring", "pair-gaussian"):
        for n in range(N):
            for m in range(n + 1, N):
                r2 = _pair_distance_sq(grid, n, m)
                if spec.family == "pair-spring":
                    V = V + 0.5 * spec.spring_constant * r2
                else:
                    V = V - spec.depth * np.exp(-r2 / (2 * spec.width**2))
    elif spec.family == "external-harmonic":
        for n in range(N):
            r2 = sum(grid.coord(A) ** 2 for A in grid.particle_axes(n))
            V = V + 0.5 * system.masses[n] * spec.trap_frequency**2 * r2
    V = np.broadcast_to(V, grid.shape).copy()
    V.setflags(write=False)
    return V


class ShiftedHamiltonian:
    """Grid operator sum_n |p_n - m_n xi_dot_n|^2 / 2 m_n + V.

    Split into three Hermitian pieces that the propagators use separately:

    * ``kinetic_symbol``: sum_A (hbar k_A - m_A lambda_A)^2 / 2 m_A, diagonal in k
    * ``angular``: -zeta . sum_n L_n
    * ``position_term``: V + sum_n m_n |zeta x x_n|^2 / 2 + m_n lambda . (zeta x x_n)
    """

    def __init__(self, grid: GridSpec, system: ParticleSystem, potential: PotentialSpec, shift: ShiftVelocity):
        system.check_grid(grid)
        shift.check_grid(grid)
        self.grid = grid
        self.system = system
        self.potential = potential
        self.shift = shift
        self.hbar = system.hbar
        self.axis_masses = system.axis_masses(grid.spatial_dim)
        self._zeta = shift.zeta3

    @property
    def rotating(self) -> bool:
        return self.shift.rotating

    def kinetic_symbol(self) -> np.ndarray:
        g, hbar = self.grid, self.hbar
        out = np.zeros(g.shape)
        for A in range(g.dim):
            m = self.axis_masses[A]
            lam = self.shift.lambda_dot[A % g.spatial_dim]
            out = out + (hbar * g.kcoord(A) - m * lam) ** 2 / (2 * m)
        return out

    def position_term(self) -> np.ndarray:
        g = self.grid
        W = np.array(potential_field(g, self.system, self.potential))
        if not self.rotating:
            return W
        d = g.spatial_dim
        lam3 = np.zeros(3)
        lam3[:d] = self.shift.lambda_dot
        z = self._zeta
        for n in range(g.particle_count):
            xs = [g.coord(A) for A in g.particle_axes(n)] + [0.0] * (3 - d)
            u = [z[1] * xs[2] - z[2] * xs[1], z[2] * xs[0] - z[0] * xs[2], z[0] * xs[1] - z[1] * xs[0]]
            m = self.system.masses[n]
            W = W + 0.5 * m * sum(c * c for c in u) + m * sum(lam3[a] * u[a] for a in range(3))
        return W

    def momentum(self, f: np.ndarray, A: int) -> np.ndarray:
        """(hbar / i) d_A f."""
        g = self.grid
        fk = sfft.fft(f, axis=A)
        fk *= self.hbar * g.dcoord(A)
        return sfft.ifft(fk, axis=A)

    def angular_components(self, f: np.ndarray, particle: int, momenta=None) -> list:
        """L_n f as [L_x f, L_y f, L_z f]; entries that vanish in 2D are None."""
        g = self.grid
        axes = g.particle_axes(particle)
        d = g.spatial_dim
        if momenta is None:
            momenta = {A: self.momentum(f, A) for A in axes}
        xs = [g.coord(A) for A in axes]
        p = [momenta[A] for A in axes]
        if d == 2:
            return [None, None, xs[0] * p[1] - xs[1] * p[0]]
        return [
            xs[1] * p[2] - xs[2] * p[1],
            xs[2] * p[0] - xs[0] * p[2],
            xs[0] * p[1] - xs[1] * p[0],
        ]

    def apply_angular(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=complex)
        if not self.rotating:
            return out
        for n in range(self.grid.particle_count):
            for a, comp in enumerate(self.angular_components(f, n)):
                if comp is not None and self._zeta[a] != 0:
                    out -= self._zeta[a] * comp
        return out

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        kin = sfft.ifftn(self._kin * sfft.fftn(f))
        return kin + self._W * f + self.apply_angular(f)

    @cached_property
    def _kin(self):
        return self.kinetic_symbol()

    @cached_property
    def _W(self):
        return self.position_term()


# ------------------------------------------------------------ expectations


def _expect(grid: GridSpec, psi: np.ndarray, op_psi: np.ndarray) -> complex:
    return complex(np.vdot(psi, op_psi) * grid.cell_volume)


def hamiltonian_expectation(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec = FREE,
    shift: ShiftVelocity | None = None,
    with_imag: bool = False,
):
    """<psi| H_xi |psi>, evaluated with spectral derivatives.

    With ``with_imag=True`` returns ``(real, imag)``; the imaginary part is a
    Hermiticity diagnostic and should sit at rounding level.
    """
    psi.require_normalized()
    shift = ShiftVelocity.zero(psi.grid.spatial_dim) if shift is None else shift
    H = ShiftedHamiltonian(psi.grid, system, potential, shift)
    value = _expect(psi.grid, psi.amplitudes, H.apply(psi.amplitudes))
    return (value.real, value.imag) if with_imag else value.real


def momentum_expectation(psi: WaveFunction, system: ParticleSystem) -> np.ndarray:
    """Total momentum P_a = sum_n <(hbar / i) d_na>."""
    psi.require_normalized()
    g = psi.grid
    H = ShiftedHamiltonian(g, system, FREE, ShiftVelocity.zero(g.spatial_dim))
    P = np.zeros(g.spatial_dim)
    for n in range(g.particle_count):
        for a, A in enumerate(g.particle_axes(n)):
            P[a] += _expect(g, psi.amplitudes, H.momentum(psi.amplitudes, A)).real
    return P


def angular_momentum_expectation(psi: WaveFunction, system: ParticleSystem):
    """Total angular momentum about the origin; a scalar (z) in 2D."""
    g = psi.grid
    if g.spatial_dim < 2:
        raise DimensionError("angular momentum needs spatial_dim >= 2")
    psi.require_normalized()
    H = ShiftedHamiltonian(g, system, FREE, ShiftVelocity.zero(g.spatial_dim))
    L = np.zeros(3)
    for n in range(g.particle_count):
        for a, comp in enumerate(H.angular_components(psi.amplitudes, n)):
            if comp is not None:
                L[a] += _expect(g, psi.amplitudes, comp).real
    return float(L[2]) if g.spatial_dim == 2 else L


def inertia_expectation(psi: WaveFunction, system: ParticleSystem) -> np.ndarray:
    """Moment of inertia tensor about the origin as a 3x3 array.

    In 2D the particles sit in the z = 0 plane, so only the (z, z) entry
    enters rotational best matching.
    """
    g = psi.grid
    if g.spatial_dim < 2:
        raise DimensionError("moment of inertia needs spatial_dim >= 2")
    psi.require_normalized()
    rho = psi.density
    dV = g.cell_volume
    I = np.zeros((3, 3))
    for n in range(g.particle_count):
        m = system.masses[n]
        xs = [g.coord(A) for A in g.particle_axes(n)]
        second = np.zeros((3, 3))
        for a in range(g.spatial_dim):
            for b in range(a, g.spatial_dim):
                val = float((rho * (xs[a] * xs[b])).sum() * dV)
                second[a, b] = second[b, a] = val
        I += m * (np.trace(second) * np.eye(3) - second)
    return I


def center_of_mass(psi: WaveFunction, system: ParticleSystem) -> np.ndarray:
    g = psi.grid
    rho = psi.density
    out = np.zeros(g.spatial_dim)
    for n in range(g.particle_count):
        for a, A in enumerate(g.particle_axes(n)):
            out[a] += system.masses[n] * float((rho * g.coord(A)).sum() * g.cell_volume)
    return out / system.total_mass


@dataclass(frozen=True)
class ObservableReport:
    time: float
    energy: float
    energy_imag: float
    momentum: np.ndarray
    angular_momentum: float | np.ndarray | None
    inertia: np.ndarray | None
    norm_defect: float
    center_of_mass: np.ndarray


def observe(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec = FREE,
    shift: ShiftVelocity | None = None,
) -> ObservableReport:
    g = psi.grid
    shift = ShiftVelocity.zero(g.spatial_dim) if shift is None else shift
    energy, imag = hamiltonian_expectation(psi, system, potential, shift, with_imag=True)
    rotational = g.spatial_dim >= 2
    return ObservableReport(
        time=psi.t,
        energy=energy,
        energy_imag=imag,
        momentum=momentum_expectation(psi, system),
        angular_momentum=angular_momentum_expectation(psi, system) if rotational else None,
        inertia=inertia_expectation(psi, system) if rotational else None,
        norm_defect=1.0 - psi.norm(),
        center_of_mass=center_of_mass(psi, system),
    )


def mean_shift_speed_sq(psi: WaveFunction, system: ParticleSystem, shift: ShiftVelocity) -> float:
    """sum_n (m_n / 2) <|xi_dot_n|^2>."""
    g = psi.grid
    comps = shift.field(g)
    rho = psi.density
    masses = system.axis_masses(g.spatial_dim)
    total = sum(0.5 * masses[A] * np.broadcast_to(comps[A], g.shape) ** 2 for A in range(g.dim))
    return float((rho * total).sum() * g.cell_volume)


def phase_gradient(psi: WaveFunction, hbar: float, floor: float = 0.0) -> list[np.ndarray]:
    """d_A phi from the wave function, hbar Im(psi* d_A psi) / max(rho, floor)."""
    g = psi.grid
    rho = np.maximum(psi.density, floor)
    out = []
    for A in range(g.dim):
        prod = np.conj(psi.amplitudes) * g.derivative(psi.amplitudes, A)
        out.append(hbar * prod.imag / rho)
    return out


def current_velocity(state: EpistemicState | WaveFunction, system: ParticleSystem, shift: ShiftVelocity | None = None) -> np.ndarray:
    """v^A = m^AB d_B phi - xi_dot^A, shape ``(D, *grid.shape)``.

    The phase gradient is taken through the wave function so that phases
    which wind around the box are handled without unwrapping.
    """
    psi = as_wavefunction(state)
    g = psi.grid
    rho = psi.density
    if rho.min() <= NODE_FLOOR * rho.max():
        raise NodeError("current velocity is undefined where the density vanishes")
    shift = ShiftVelocity.zero(g.spatial_dim) if shift is None else shift
    hbar = state.hbar if isinstance(state, EpistemicState) else system.hbar
    grad = phase_gradient(psi, hbar)
    masses = system.axis_masses(g.spatial_dim)
    xi = shift.field(g)
    return np.stack([grad[A] / masses[A] - np.broadcast_to(xi[A], g.shape) for A in range(g.dim)])
