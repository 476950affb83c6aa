"""Time stepping of the shifted Schrodinger equation.

Two propagators share one spatial discretization (spectral derivatives on
the periodic grid) so that their difference is purely temporal:

* ``split-step``: Strang splitting kinetic / rotation / position / rotation /
  kinetic.  Every factor is unitary; the rotation factor rotates the
  configuration of each particle with Fourier shears.
* ``crank-nicolson``: the Cayley transform of the full grid Hamiltonian,
  solved matrix-free with preconditioned GMRES.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.spatial.transform import Rotation

from .core import (
    EpistemicState,
    GridSpec,
    ParticleSystem,
    ShiftVelocity,
    WaveFunction,
    as_wavefunction,
    require_same_grid,
    state_distance,
)
from .errors import BoundaryLeakWarning, NegativeLapse, SolverDivergence
from .observables import FREE, ObservableReport, PotentialSpec, ShiftedHamiltonian, observe

log = logging.getLogger(__name__)

SPLIT = "split-step"
CN = "crank-nicolson"
_BACKEND_ALIASES = {"split": SPLIT, "split-step": SPLIT, "cn": CN, "crank-nicolson": CN}
EDGE_CELLS = 2
EDGE_DENSITY_TOL = 1e-8


def normalize_backend(name: str) -> str:
    try:
        return _BACKEND_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; use split-step or crank-nicolson") from None


@dataclass(frozen=True)
class SolverParams:
    dt: float
    backend: str = SPLIT
    steps: int = 0
    tolerance: float = 1e-13
    record_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 0 or self.record_stride < 1:
            raise ValueError("steps must be >= 0 and record_stride >= 1")
        object.__setattr__(self, "backend", normalize_backend(self.backend))

    def cfl_number(self, grid: GridSpec, system: ParticleSystem) -> float:
        """dt hbar / (h_min^2 m_min); split-step accuracy degrades above ~1."""
        return self.dt * system.hbar / (min(grid.spacing) ** 2 * min(system.masses))


# ------------------------------------------------------------ propagators


def _shear(f: np.ndarray, grid: GridSpec, along: int, by: int, coef: float) -> np.ndarray:
    """f(x + coef * x_by e_along) via a Fourier phase along ``along``."""
    fk = sfft.fft(f, axis=along)
    fk *= np.exp(1j * grid.kcoord(along) * coef * grid.coord(by))
    return sfft.ifft(fk, axis=along)


def rotate_plane(f: np.ndarray, grid: GridSpec, u: int, v: int, angle: float) -> np.ndarray:
    """g(x) = f(R x) with R rotating the (x_u, x_v) plane by ``angle``.

    Uses the three-shear factorization R = S_u(a) S_v(b) S_u(a) with
    a = -tan(angle / 2) and b = sin(angle).
    """
    if angle == 0.0:
        return f
    a = -np.tan(0.5 * angle)
    b = np.sin(angle)
    f = _shear(f, grid, u, v, a)
    f = _shear(f, grid, v, u, b)
    return _shear(f, grid, u, v, a)


def rotate_configuration(f: np.ndarray, grid: GridSpec, rotvec: np.ndarray) -> np.ndarray:
    """g(x) = f(R x_1, ..., R x_N) with R the rotation of vector ``rotvec``."""
    rotvec = np.asarray(rotvec, dtype=float)
    d = grid.spatial_dim
    for n in range(grid.particle_count):
        axes = grid.particle_axes(n)
        if d == 2:
            f = rotate_plane(f, grid, axes[0], axes[1], rotvec[2])
        else:
            ax, ay, az = Rotation.from_rotvec(rotvec).as_euler("XYZ")
            f = rotate_plane(f, grid, axes[1], axes[2], ax)
            f = rotate_plane(f, grid, axes[2], axes[0], ay)
            f = rotate_plane(f, grid, axes[0], axes[1], az)
    return f


class SplitStepPropagator:
    def __init__(self, H: ShiftedHamiltonian, dt: float):
        hbar = H.hbar
        self.H = H
        self.dt = dt
        self.grid = H.grid
        self.half_kinetic = np.exp(-0.5j * dt * H.kinetic_symbol() / hbar)
        self.full_position = np.exp(-1j * dt * H.position_term() / hbar)
        # exp(-i (dt/2) A / hbar) with A = -zeta.L is f -> f(R x), R of rotvec dt zeta / 2
        self.half_rotvec = 0.5 * dt * H.shift.zeta3 if H.rotating else None

    def _rotate(self, f):
        if self.half_rotvec is None:
            return f
        return rotate_configuration(f, self.grid, self.half_rotvec)

    def step(self, f: np.ndarray) -> np.ndarray:
        f = sfft.ifftn(self.half_kinetic * sfft.fftn(f))
        f = self._rotate(f)
        f = self.full_position * f
        f = self._rotate(f)
        return sfft.ifftn(self.half_kinetic * sfft.fftn(f))


class CrankNicolsonPropagator:
    def __init__(self, H: ShiftedHamiltonian, dt: float, tolerance: float = 1e-13, max_iter: int = 400):
        self.H = H
        self.dt = dt
        self.tolerance = tolerance
        self.max_iter = max_iter
        self.tau = 0.5 * dt / H.hbar
        shape = H.grid.shape
        size = H.grid.size
        self._shape = shape
        tau = self.tau
        pre = 1.0 / (1.0 + 1j * tau * H.kinetic_symbol())

        def lhs(v):
            v = v.reshape(shape)
            return (v + 1j * tau * H.apply(v)).ravel()

        def precond(v):
            return sfft.ifftn(pre * sfft.fftn(v.reshape(shape))).ravel()

        self.operator = LinearOperator((size, size), matvec=lhs, dtype=complex)
        self.preconditioner = LinearOperator((size, size), matvec=precond, dtype=complex)

    def step(self, f: np.ndarray) -> np.ndarray:
        rhs = (f - 1j * self.tau * self.H.apply(f)).ravel()
        x0 = self.preconditioner.matvec(rhs)
        sol, info = gmres(
            self.operator,
            rhs,
            x0=x0,
            rtol=self.tolerance,
            atol=0.0,
            restart=40,
            maxiter=self.max_iter,
            M=self.preconditioner,
        )
        resid = np.linalg.norm(self.operator.matvec(sol) - rhs) / np.linalg.norm(rhs)
        if not np.isfinite(resid) or resid > 100 * self.tolerance:
            raise SolverDivergence(f"GMRES stopped at relative residual {resid:.2e} (info={info})")
        return sol.reshape(self._shape)


def make_propagator(
    grid: GridSpec,
    system: ParticleSystem,
    potential: PotentialSpec,
    shift: ShiftVelocity,
    dt: float,
    backend: str = SPLIT,
    tolerance: float = 1e-13,
):
    H = ShiftedHamiltonian(grid, system, potential, shift)
    if normalize_backend(backend) == SPLIT:
        return SplitStepPropagator(H, dt)
    return CrankNicolsonPropagator(H, dt, tolerance)


def _edge_density(psi: WaveFunction) -> float:
    g = psi.grid
    rho = psi.density
    near = np.zeros(g.shape, dtype=bool)
    for A in range(g.dim):
        idx = np.arange(g.shape[A])
        mask = (idx < EDGE_CELLS) | (idx >= g.shape[A] - EDGE_CELLS)
        shape = [1] * g.dim
        shape[A] = g.shape[A]
        near = near | mask.reshape(shape)
    return float(rho[near].max())


def _warn_edges(psi: WaveFunction, shift: ShiftVelocity):
    if shift.rotating:
        edge = _edge_density(psi)
        if edge > EDGE_DENSITY_TOL:
            warnings.warn(
                f"density {edge:.2e} near the box edge while rotating; the rotation term is not periodic",
                BoundaryLeakWarning,
                stacklevel=3,
            )


def step_schrodinger(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec,
    shift: ShiftVelocity,
    params: SolverParams,
) -> WaveFunction:
    """Advance ``psi`` by one step ``params.dt`` under the shifted Hamiltonian."""
    psi.require_normalized()
    _warn_edges(psi, shift)
    prop = make_propagator(psi.grid, system, potential, shift, params.dt, params.backend, params.tolerance)
    return psi.replace(prop.step(np.array(psi.amplitudes)), psi.t + params.dt)


@dataclass
class EvolutionSeries:
    states: list[WaveFunction] = field(default_factory=list)
    reports: list[ObservableReport] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)

    @property
    def final(self) -> WaveFunction:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def _run(psi, system, potential, shift, dts, backend, tolerance, stride, record_observables, series=None):
    """Shared time loop; ``dts`` is the sequence of step sizes."""
    psi.require_normalized()
    _warn_edges(psi, shift)
    series = EvolutionSeries() if series is None else series

    def record(state, k):
        series.states.append(state)
        series.steps.append(k)
        if record_observables:
            series.reports.append(observe(state, system, potential, shift))

    record(psi, 0)
    props = {}
    f = np.array(psi.amplitudes)
    t = psi.t
    n = len(dts)
    for k, dt in enumerate(dts, start=1):
        prop = props.get(dt)
        if prop is None:
            if len(props) > 4:
                props.clear()
            prop = props[dt] = make_propagator(psi.grid, system, potential, shift, dt, backend, tolerance)
        f = prop.step(f)
        t = t + dt
        if k % stride == 0 or k == n:
            record(WaveFunction(psi.grid, f, t), k)
    return series


def evolve(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec,
    shift: ShiftVelocity,
    params: SolverParams,
    record_observables: bool = True,
) -> EvolutionSeries:
    """Iterate ``params.steps`` steps, recording every ``record_stride`` steps.

    The initial and final states are always recorded.
    """
    dts = [params.dt] * params.steps
    return _run(psi, system, potential, shift, dts, params.backend, params.tolerance,
                params.record_stride, record_observables)


def propagate(psi, system, potential, shift, dt, steps, backend=SPLIT, tolerance=1e-13) -> WaveFunction:
    """Final state after ``steps`` steps, without recording."""
    params = SolverParams(dt, backend, steps, tolerance, record_stride=max(steps, 1))
    return evolve(psi, system, potential, shift, params, record_observables=False).final


def iterate_states(psi, system, potential, shift, dt, steps, backend=SPLIT, tolerance=1e-13):
    """Yield the initial state and then the state after every step."""
    psi.require_normalized()
    _warn_edges(psi, shift)
    prop = make_propagator(psi.grid, system, potential, shift, dt, backend, tolerance)
    f = np.array(psi.amplitudes)
    yield psi
    for k in range(1, steps + 1):
        f = prop.step(f)
        yield WaveFunction(psi.grid, f, psi.t + k * dt)


def composition_error(psi, system, potential, shift, dt, n, backend=SPLIT) -> float:
    """|| U(dt)^(2n) psi - U(2 dt)^n psi ||, an O(dt^2) quantity for 2nd-order schemes."""
    fine = propagate(psi, system, potential, shift, dt, 2 * n, backend)
    coarse = propagate(psi, system, potential, shift, 2 * dt, n, backend)
    return state_distance(fine, coarse)


def richardson_ratio(psi, system, potential, shift, total_time, steps, backend=SPLIT) -> float:
    """e(dt) / e(dt/2) with e(dt) = ||psi_dt - psi_dt/2|| at a fixed final time."""
    dt = total_time / steps
    a = propagate(psi, system, potential, shift, dt, steps, backend)
    b = propagate(psi, system, potential, shift, dt / 2, 2 * steps, backend)
    c = propagate(psi, system, potential, shift, dt / 4, 4 * steps, backend)
    return state_distance(a, b) / state_distance(b, c)


# ------------------------------------------------------------ continuity


def flux_divergence(state, system: ParticleSystem, shift: ShiftVelocity) -> np.ndarray:
    """d_A [rho v^A] with rho m^AB d_B phi = (hbar / m) Im(psi* d_A psi).

    Computed in the wave-function chart, so no division by rho occurs.
    """
    psi = as_wavefunction(state)
    g = psi.grid
    hbar = state.hbar if isinstance(state, EpistemicState) else system.hbar
    masses = system.axis_masses(g.spatial_dim)
    rho = psi.density
    xi = shift.field(g)
    total = np.zeros(g.shape)
    for A in range(g.dim):
        j = hbar * (np.conj(psi.amplitudes) * g.derivative(psi.amplitudes, A)).imag / masses[A]
        j = j - rho * xi[A]
        total += g.derivative(j, A).real
    return total


def continuity_residual(state_t, state_next, system: ParticleSystem, shift: ShiftVelocity | None = None) -> float:
    """L2 norm of (rho' - rho) / dt + d_A[rho v^A] averaged over both instants."""
    a, b = as_wavefunction(state_t), as_wavefunction(state_next)
    require_same_grid(a.grid, b.grid)
    dt = b.t - a.t
    if not dt > 0:
        raise ValueError("states must be ordered in time")
    shift = ShiftVelocity.zero(a.grid.spatial_dim) if shift is None else shift
    resid = (b.density - a.density) / dt + 0.5 * (
        flux_divergence(state_t, system, shift) + flux_divergence(state_next, system, shift)
    )
    return float(np.sqrt(a.grid.integrate(resid**2)))


# ------------------------------------------------------- parametrized time


@dataclass(frozen=True)
class LapseProfile:
    """Lapse beta(x0) >= 0 over the label interval [start, end].

    kinds: ``constant`` (beta = value), ``sine`` (value + amplitude *
    sin(frequency x0 + phase)) and ``tabulated`` (piecewise linear through
    ``table_x``, ``table_beta``).
    """

    start: float
    end: float
    kind: str = "constant"
    value: float = 1.0
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    table_x: Sequence[float] = ()
    table_beta: Sequence[float] = ()

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("label interval must have end > start")
        if self.kind == "constant":
            if self.value < 0:
                raise NegativeLapse(f"constant lapse {self.value} < 0")
        elif self.kind == "sine":
            if self.frequency == 0:
                raise ValueError("sine lapse needs a nonzero frequency")
            if self.value - abs(self.amplitude) < 0:
                raise NegativeLapse("sine lapse dips below zero")
        elif self.kind == "tabulated":
            x = np.asarray(self.table_x, float)
            b = np.asarray(self.table_beta, float)
            if x.size < 2 or x.shape != b.shape or np.any(np.diff(x) <= 0):
                raise ValueError("tabulated lapse needs increasing nodes with matching values")
            if x[0] > self.start or x[-1] < self.end:
                raise ValueError("lapse table must cover the label interval")
            if np.any(b < 0):
                raise NegativeLapse("tabulated lapse has negative entries")
            object.__setattr__(self, "table_x", tuple(x))
            object.__setattr__(self, "table_beta", tuple(b))
        else:
            raise ValueError(f"unknown lapse kind {self.kind!r}")

    def beta(self, x0):
        x0 = np.asarray(x0, float)
        if self.kind == "constant":
            return np.full_like(x0, self.value)
        if self.kind == "sine":
            return self.value + self.amplitude * np.sin(self.frequency * x0 + self.phase)
        return np.interp(x0, self.table_x, self.table_beta)

    def antiderivative(self, x0):
        x0 = np.asarray(x0, float)
        if self.kind == "constant":
            return self.value * x0
        if self.kind == "sine":
            return self.value * x0 - (self.amplitude / self.frequency) * np.cos(self.frequency * x0 + self.phase)
        xs = np.asarray(self.table_x)
        bs = np.asarray(self.table_beta)
        nodes = np.concatenate([[0.0], np.cumsum(0.5 * (bs[1:] + bs[:-1]) * np.diff(xs))])
        j = np.clip(np.searchsorted(xs, x0, side="right") - 1, 0, xs.size - 2)
        return nodes[j] + 0.5 * (x0 - xs[j]) * (bs[j] + self.beta(x0))

    def duration(self) -> float:
        """Total entropic time, the integral of beta over the label interval."""
        return float(self.antiderivative(self.end) - self.antiderivative(self.start))

    def labels(self, steps: int) -> np.ndarray:
        return self.start + (self.end - self.start) / steps * np.arange(steps + 1)

    def increments(self, steps: int) -> np.ndarray:
        """Entropic-time step for each of ``steps`` equal label steps."""
        dx = (self.end - self.start) / steps
        if self.kind == "constant":
            return np.full(steps, self.value * dx)
        F = self.antiderivative(self.labels(steps))
        return np.diff(F)


@dataclass
class ParametrizedResult:
    series: EvolutionSeries
    labels: np.ndarray
    entropic_time: np.ndarray
    pi0: float
    super_hamiltonian_residual: np.ndarray

    @property
    def final(self) -> WaveFunction:
        return self.series.final


def parametrized_evolve(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec,
    shift: ShiftVelocity,
    lapse: LapseProfile,
    label_steps: int,
    backend: str = SPLIT,
    tolerance: float = 1e-13,
    record_stride: int = 1,
) -> ParametrizedResult:
    """Evolve in the label x0 with entropic step beta(x0) dx0.

    The momentum conjugate to t is pinned at pi0 = -H(0); the reported
    super-Hamiltonian residual |pi0 + H(t)| therefore measures energy drift.
    """
    if label_steps < 1:
        raise ValueError("label_steps must be >= 1")
    dts = [float(v) for v in lapse.increments(label_steps)]
    series = _run(psi, system, potential, shift, dts, backend, tolerance, record_stride, True)
    labels = lapse.labels(label_steps)[series.steps]
    pi0 = -series.reports[0].energy
    energies = np.array([r.energy for r in series.reports])
    return ParametrizedResult(
        series=series,
        labels=labels,
        entropic_time=series.times,
        pi0=pi0,
        super_hamiltonian_residual=np.abs(pi0 + energies),
    )
