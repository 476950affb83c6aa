"""Grids, particle systems and the two coordinate charts of a quantum state.

Configuration space has ``D = N * d`` axes.  Axis ``A = n * d + a`` carries
coordinate ``a`` of particle ``n``.  Every axis is periodic with ``x`` running
over ``[-L/2, L/2)`` so the coordinate origin sits on a grid point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import (
    BoundaryLeak,
    DimensionError,
    GridMismatch,
    NodeError,
    NotNormalized,
    UnresolvableWidth,
)

MAX_CONFIG_DIM = 4
NORM_TOL = 1e-12
NODE_FLOOR = 1e-10
LEAK_TOL = 1e-10


def _per_axis(value, n, name, cast):
    arr = np.atleast_1d(np.asarray(value))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise ValueError(f"{name}: expected 1 or {n} entries, got {arr.size}")
    return tuple(cast(v) for v in arr)


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic tensor grid over the N-particle configuration space.

    ``points_per_axis`` and ``axis_length`` accept a scalar (used on every
    axis) or one entry per configuration axis.
    """

    spatial_dim: int
    particle_count: int
    points_per_axis: Sequence[int] | int
    axis_length: Sequence[float] | float

    def __post_init__(self):
        d, n = int(self.spatial_dim), int(self.particle_count)
        if d not in (1, 2, 3):
            raise DimensionError(f"spatial_dim must be 1, 2 or 3, got {d}")
        if n < 1:
            raise ValueError("particle_count must be >= 1")
        dim = n * d
        if dim > MAX_CONFIG_DIM:
            raise DimensionError(
                f"configuration dimension {dim} exceeds the dense-grid cap {MAX_CONFIG_DIM}"
            )
        pts = _per_axis(self.points_per_axis, dim, "points_per_axis", int)
        lengths = _per_axis(self.axis_length, dim, "axis_length", float)
        if min(pts) < 8:
            raise ValueError("points_per_axis must be >= 8")
        if min(lengths) <= 0:
            raise ValueError("axis_length must be positive")
        object.__setattr__(self, "spatial_dim", d)
        object.__setattr__(self, "particle_count", n)
        object.__setattr__(self, "points_per_axis", pts)
        object.__setattr__(self, "axis_length", lengths)

    @property
    def dim(self) -> int:
        return self.spatial_dim * self.particle_count

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.axis_length, self.points_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_index(self, particle: int, component: int) -> int:
        return particle * self.spatial_dim + component

    def particle_axes(self, particle: int) -> tuple[int, ...]:
        d = self.spatial_dim
        return tuple(range(particle * d, (particle + 1) * d))

    def axis(self, A: int) -> np.ndarray:
        """1D coordinate array of axis ``A``."""
        n, L = self.points_per_axis[A], self.axis_length[A]
        return -0.5 * L + (L / n) * np.arange(n)

    def coord(self, A: int) -> np.ndarray:
        """Coordinate of axis ``A`` shaped for broadcasting against the grid."""
        shape = [1] * self.dim
        shape[A] = self.points_per_axis[A]
        return self.axis(A).reshape(shape)

    def wavenumbers(self, A: int) -> np.ndarray:
        n = self.points_per_axis[A]
        return 2.0 * np.pi * sfft.fftfreq(n, d=self.spacing[A])

    def kcoord(self, A: int) -> np.ndarray:
        shape = [1] * self.dim
        shape[A] = self.points_per_axis[A]
        return self.wavenumbers(A).reshape(shape)

    def dcoord(self, A: int) -> np.ndarray:
        """Wavenumbers for odd derivatives: the Nyquist mode is zeroed so that
        real inputs keep real derivatives."""
        k = self.kcoord(A).copy()
        n = self.points_per_axis[A]
        if n % 2 == 0:
            k.flat[n // 2] = 0.0
        return k

    def origin_index(self) -> tuple[int, ...]:
        return tuple(n // 2 for n in self.points_per_axis)

    def integrate(self, values: np.ndarray):
        return values.sum() * self.cell_volume

    def derivative(self, f: np.ndarray, A: int) -> np.ndarray:
        """Spectral first derivative of ``f`` along axis ``A`` (complex result)."""
        fk = sfft.fft(f, axis=A)
        fk *= 1j * self.dcoord(A)
        return sfft.ifft(fk, axis=A)

    def translate(self, f: np.ndarray, A: int, shift: float) -> np.ndarray:
        """Return ``f(x - shift)`` along axis ``A`` by a Fourier phase ramp."""
        fk = sfft.fft(f, axis=A)
        fk *= np.exp(-1j * self.kcoord(A) * shift)
        return sfft.ifft(fk, axis=A)

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        """Wrap ``(..., D)`` positions periodically into ``[-L/2, L/2)``."""
        L = np.asarray(self.axis_length)
        return np.mod(positions + 0.5 * L, L) - 0.5 * L

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.spatial_dim == other.spatial_dim
            and self.particle_count == other.particle_count
            and self.points_per_axis == other.points_per_axis
            and self.axis_length == other.axis_length
        )


def require_same_grid(a: GridSpec, b: GridSpec):
    if not a.same_as(b):
        raise GridMismatch("states live on different grids")


@dataclass(frozen=True)
class ParticleSystem:
    """Particle masses and the action constants hbar and eta (eta defaults to hbar)."""

    masses: Sequence[float]
    hbar: float = 1.0
    eta: float | None = None

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        if not masses or min(masses) <= 0 or not all(np.isfinite(masses)):
            raise ValueError("masses must be positive and finite")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        eta = self.hbar if self.eta is None else float(self.eta)
        if not eta > 0:
            raise ValueError("eta must be positive")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "hbar", float(self.hbar))
        object.__setattr__(self, "eta", eta)

    @property
    def particle_count(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(sum(self.masses))

    def axis_masses(self, spatial_dim: int) -> np.ndarray:
        """Diagonal of m_AB, one entry per configuration axis."""
        return np.repeat(np.asarray(self.masses), spatial_dim)

    def mass_tensor(self, spatial_dim: int) -> np.ndarray:
        return np.diag(self.axis_masses(spatial_dim))

    def inverse_mass_tensor(self, spatial_dim: int) -> np.ndarray:
        return np.diag(1.0 / self.axis_masses(spatial_dim))

    def check_grid(self, grid: GridSpec):
        if grid.particle_count != self.particle_count:
            raise DimensionError(
                f"system has {self.particle_count} particles, grid has {grid.particle_count}"
            )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex amplitudes on the grid at entropic time ``t``."""

    grid: GridSpec
    amplitudes: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        if amp.shape != self.grid.shape:
            raise ValueError(f"amplitudes shape {amp.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes contain NaN or Inf")
        object.__setattr__(self, "amplitudes", _frozen(amp))
        object.__setattr__(self, "t", float(self.t))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(self.grid.integrate(self.density))

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes / np.sqrt(self.norm()), self.t)

    def replace(self, amplitudes=None, t=None) -> "WaveFunction":
        return WaveFunction(
            self.grid,
            self.amplitudes if amplitudes is None else amplitudes,
            self.t if t is None else t,
        )

    def require_normalized(self, tol: float = 1e-10):
        defect = abs(self.norm() - 1.0)
        if defect > tol:
            raise NotNormalized(f"state norm deviates from 1 by {defect:.3e}")


@dataclass(frozen=True, eq=False)
class EpistemicState:
    """Density ``rho`` and phase ``phi`` (units of action) on the grid."""

    grid: GridSpec
    rho: np.ndarray
    phi: np.ndarray
    t: float = 0.0
    hbar: float = 1.0
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if rho.shape != self.grid.shape or phi.shape != self.grid.shape:
            raise ValueError("rho and phi must match the grid shape")
        if self.check:
            if np.any(rho < 0):
                raise ValueError("rho must be nonnegative")
            defect = abs(1.0 - self.grid.integrate(rho))
            if defect > NORM_TOL:
                raise NotNormalized(f"|1 - int rho| = {defect:.3e}")
        object.__setattr__(self, "rho", _frozen(rho))
        object.__setattr__(self, "phi", _frozen(phi))

    @property
    def norm_defect(self) -> float:
        return float(1.0 - self.grid.integrate(self.rho))


@dataclass(frozen=True)
class ShiftVelocity:
    """Rates of rigid translation ``lambda_dot`` and rotation ``zeta_dot``.

    ``zeta_dot`` is ``None`` in one dimension, a scalar (the z component)
    in two, and a 3-vector in three.
    """

    lambda_dot: Sequence[float]
    zeta_dot: float | Sequence[float] | None = None

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lambda_dot))
        d = len(lam)
        if d not in (1, 2, 3):
            raise DimensionError("lambda_dot must have 1, 2 or 3 components")
        zeta = self.zeta_dot
        if d == 1:
            if zeta is not None and np.any(np.asarray(zeta) != 0):
                raise DimensionError("zeta_dot is undefined in one dimension")
            zeta = None
        elif d == 2:
            z = np.atleast_1d(np.asarray(0.0 if zeta is None else zeta, dtype=float))
            if z.size == 3:
                if np.any(z[:2] != 0):
                    raise DimensionError("in-plane rotation rates are undefined in two dimensions")
                z = z[2:]
            if z.size != 1:
                raise DimensionError("zeta_dot must be a scalar in two dimensions")
            zeta = float(z[0])
        else:
            zeta = (0.0, 0.0, 0.0) if zeta is None else tuple(float(v) for v in np.atleast_1d(zeta))
            if len(zeta) != 3:
                raise DimensionError("zeta_dot must be a 3-vector in three dimensions")
        object.__setattr__(self, "lambda_dot", lam)
        object.__setattr__(self, "zeta_dot", zeta)

    @classmethod
    def zero(cls, spatial_dim: int) -> "ShiftVelocity":
        return cls((0.0,) * spatial_dim)

    @property
    def spatial_dim(self) -> int:
        return len(self.lambda_dot)

    @property
    def zeta3(self) -> np.ndarray:
        """Angular velocity as a 3-vector (zero in 1D)."""
        if self.zeta_dot is None:
            return np.zeros(3)
        if self.spatial_dim == 2:
            return np.array([0.0, 0.0, self.zeta_dot])
        return np.asarray(self.zeta_dot, dtype=float)

    @property
    def rotating(self) -> bool:
        return bool(np.any(self.zeta3 != 0))

    def check_grid(self, grid: GridSpec):
        if self.spatial_dim != grid.spatial_dim:
            raise DimensionError(
                f"shift has dimension {self.spatial_dim}, grid has spatial_dim {grid.spatial_dim}"
            )

    def _velocity(self, pos3: np.ndarray) -> np.ndarray:
        return np.cross(self.zeta3, pos3)

    def field(self, grid: GridSpec) -> list[np.ndarray]:
        """Configuration-space field xi_dot^A(x), one broadcastable array per axis."""
        self.check_grid(grid)
        d = grid.spatial_dim
        zeta = self.zeta3
        out = []
        for n in range(grid.particle_count):
            xs = [grid.coord(A) for A in grid.particle_axes(n)]
            xs += [0.0] * (3 - d)
            for a in range(d):
                b, c = (a + 1) % 3, (a + 2) % 3
                comp = zeta[b] * xs[c] - zeta[c] * xs[b] + self.lambda_dot[a]
                out.append(np.broadcast_to(np.asarray(comp, dtype=float), grid.shape) if np.ndim(comp) == 0 else comp)
        return out

    def at(self, positions: np.ndarray, grid: GridSpec) -> np.ndarray:
        """Evaluate xi_dot at off-grid ``(..., D)`` positions."""
        self.check_grid(grid)
        d = grid.spatial_dim
        pos = np.asarray(positions, dtype=float)
        out = np.empty_like(pos)
        for n in range(grid.particle_count):
            axes = list(grid.particle_axes(n))
            p3 = np.zeros(pos.shape[:-1] + (3,))
            p3[..., :d] = pos[..., axes]
            out[..., axes] = self._velocity(p3)[..., :d] + np.asarray(self.lambda_dot)
        return out


def divergence(grid: GridSpec, components: Sequence[np.ndarray]) -> np.ndarray:
    """Spectral divergence of a configuration-space vector field."""
    total = np.zeros(grid.shape, dtype=complex)
    for A, comp in enumerate(components):
        total += grid.derivative(np.broadcast_to(comp, grid.shape), A)
    return total.real


def rigidity_defect(grid: GridSpec, shift: ShiftVelocity) -> float:
    """Largest entry of the symmetrized Jacobian of xi_dot per particle.

    Rigid motions satisfy d_a xi_b + d_b xi_a = 0.  The field is affine, so
    central differences on interior points are exact up to rounding.
    """
    comps = [np.broadcast_to(c, grid.shape) for c in shift.field(grid)]
    worst = 0.0
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    for n in range(grid.particle_count):
        axes = grid.particle_axes(n)
        jac = {}
        for a, A in enumerate(axes):
            for b, B in enumerate(axes):
                diff = (np.roll(comps[A], -1, axis=B) - np.roll(comps[A], 1, axis=B)) / (2 * grid.spacing[B])
                jac[a, b] = diff[inner]
        for a in range(len(axes)):
            for b in range(len(axes)):
                worst = max(worst, float(np.max(np.abs(jac[a, b] + jac[b, a]))))
    return worst


# ---------------------------------------------------------------- factories


def _as_positions(values, grid: GridSpec, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 1:
        return np.full(grid.dim, float(arr.reshape(-1)[0]))
    arr = arr.reshape(-1)
    if arr.size != grid.dim:
        raise ValueError(f"{name}: expected {grid.dim} values, got {arr.size}")
    return arr


def _leak_mass(grid: GridSpec, density: np.ndarray) -> float:
    """Probability mass outside the central half of the box."""
    inside = np.ones(grid.shape, dtype=bool)
    for A in range(grid.dim):
        inside = inside & (np.abs(grid.coord(A)) < 0.25 * grid.axis_length[A])
    total = density.sum()
    return float(density[~inside].sum() / total)


def from_function(grid: GridSpec, fn: Callable[..., np.ndarray], t: float = 0.0) -> WaveFunction:
    """Sample ``fn(x_0, ..., x_{D-1})`` on the grid and normalize."""
    amp = np.broadcast_to(fn(*[grid.coord(A) for A in range(grid.dim)]), grid.shape)
    psi = WaveFunction(grid, amp, t)
    norm = psi.norm()
    if not norm > 0:
        raise ValueError("function vanishes on the grid")
    return psi.normalized()


def gaussian_packet(
    grid: GridSpec,
    system: ParticleSystem,
    centers=0.0,
    widths=1.0,
    wavevectors=0.0,
    t: float = 0.0,
) -> WaveFunction:
    """Product of Gaussians exp(-(x-c)^2 / 4 sigma^2 + i k x) over every axis.

    ``centers`` is given per particle (shape ``(N, d)``) or flat; ``widths``
    and ``wavevectors`` per configuration axis or as a scalar.
    """
    system.check_grid(grid)
    c = _as_positions(centers, grid, "centers")
    sigma = _as_positions(widths, grid, "widths")
    k = _as_positions(wavevectors, grid, "wavevectors")
    for A in range(grid.dim):
        if sigma[A] < 4 * grid.spacing[A]:
            raise UnresolvableWidth(
                f"width {sigma[A]} on axis {A} is below 4h = {4 * grid.spacing[A]}"
            )
    amp = np.ones(grid.shape, dtype=complex)
    for A in range(grid.dim):
        x = grid.coord(A)
        amp = amp * np.exp(-((x - c[A]) ** 2) / (4 * sigma[A] ** 2) + 1j * k[A] * x)
    psi = WaveFunction(grid, amp, t).normalized()
    leak = _leak_mass(grid, psi.density)
    if leak > LEAK_TOL:
        raise BoundaryLeak(f"packet mass outside the central half of the box is {leak:.2e}")
    return psi


def harmonic_ground_state(grid: GridSpec, system: ParticleSystem, omega: float) -> WaveFunction:
    """Ground state of an isotropic trap m_n omega^2 |x_n|^2 / 2 centred at the origin."""
    widths = np.sqrt(system.hbar / (2.0 * system.axis_masses(grid.spatial_dim) * omega))
    return gaussian_packet(grid, system, 0.0, widths, 0.0)


def vortex_state(
    grid: GridSpec,
    width: float = 1.0,
    charge: int = 1,
    center=(0.0, 0.0),
    particle: int = 0,
) -> WaveFunction:
    """(x + i y)^charge exp(-r^2 / 2 w^2) for one particle, Gaussian on the other axes."""
    if grid.spatial_dim < 2:
        raise DimensionError("a vortex needs at least two spatial dimensions")
    axes = grid.particle_axes(particle)

    def fn(*xs):
        x = xs[axes[0]] - center[0]
        y = xs[axes[1]] - center[1]
        out = (x + 1j * np.sign(charge) * y) ** abs(charge) * np.exp(-(x**2 + y**2) / (2 * width**2))
        for A in range(grid.dim):
            if A not in axes[:2]:
                out = out * np.exp(-xs[A] ** 2 / (2 * width**2))
        return out

    return from_function(grid, fn)


# ------------------------------------------------------------------ charts


def unwrap_phase(phase: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Remove 2 pi jumps by sweeping the axes from last to first.

    The result is then shifted by a multiple of 2 pi so the value at the
    coordinate origin lies in ``[-pi, pi)``.
    """
    out = np.array(phase, dtype=float)
    for A in reversed(range(grid.dim)):
        out = np.unwrap(out, axis=A)
    at_origin = out[grid.origin_index()]
    out -= 2 * np.pi * np.floor((at_origin + np.pi) / (2 * np.pi))
    return out


def wf_to_epistemic(psi: WaveFunction, hbar: float = 1.0, require_nodeless: bool = True) -> EpistemicState:
    rho = psi.density
    peak = rho.max()
    if require_nodeless and rho.min() <= NODE_FLOOR * peak:
        raise NodeError(
            f"min |psi|^2 = {rho.min():.3e} is below {NODE_FLOOR:g} x max; phase is undefined there"
        )
    if require_nodeless:
        phase = unwrap_phase(np.angle(psi.amplitudes), psi.grid)
    else:
        phase = np.angle(psi.amplitudes)
    return EpistemicState(psi.grid, rho, hbar * phase, psi.t, hbar, check=False)


def epistemic_to_wf(state: EpistemicState) -> WaveFunction:
    amp = np.sqrt(state.rho) * np.exp(1j * state.phi / state.hbar)
    return WaveFunction(state.grid, amp, state.t)


def as_wavefunction(state) -> WaveFunction:
    """Accept either chart and return the wave-function view."""
    if isinstance(state, WaveFunction):
        return state
    if isinstance(state, EpistemicState):
        return epistemic_to_wf(state)
    raise TypeError(f"expected WaveFunction or EpistemicState, got {type(state).__name__}")


def overlap(psi: WaveFunction, chi: WaveFunction) -> complex:
    """<psi|chi> as a Riemann sum."""
    require_same_grid(psi.grid, chi.grid)
    return complex(np.vdot(psi.amplitudes, chi.amplitudes) * psi.grid.cell_volume)


def infidelity(psi: WaveFunction, chi: WaveFunction) -> float:
    """1 - |<psi|chi>|^2 for normalized states."""
    return float(max(0.0, 1.0 - abs(overlap(psi, chi)) ** 2))


def trace_distance(psi: WaveFunction, chi: WaveFunction) -> float:
    """Trace distance sqrt(1 - |<psi|chi>|^2) between two pure states."""
    return float(np.sqrt(infidelity(psi, chi)))


def state_distance(psi: WaveFunction, chi: WaveFunction) -> float:
    """L2 distance between two states."""
    require_same_grid(psi.grid, chi.grid)
    diff = psi.amplitudes - chi.amplitudes
    return float(np.sqrt(psi.grid.integrate(np.abs(diff) ** 2)))
