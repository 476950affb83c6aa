"""Quantum best matching: mismatch, optimal shifts and constraint checks.

The mismatch between consecutive states is ``|<psi_t|psi_{t+dt}> - 1|^2``,
which for short steps is ``(dt / hbar)^2 H^2`` with ``H`` the shifted energy.
Best matching picks the shift where ``H`` is stationary:

* translations: ``M lambda_dot = P``
* rotations (centre-of-mass frame): ``I zeta_dot = L``
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .core import GridSpec, ParticleSystem, ShiftVelocity, WaveFunction, from_function, overlap
from .errors import DimensionError, NonConvexWarning, NotCentered, SingularInertia
from .evolution import SPLIT, make_propagator
from .observables import (
    FREE,
    ObservableReport,
    PotentialSpec,
    angular_momentum_expectation,
    center_of_mass,
    hamiltonian_expectation,
    inertia_expectation,
    momentum_expectation,
)

SINGULAR_COND = 1e8
CENTER_TOL = 1e-6


@dataclass(frozen=True)
class BestMatchResult:
    lambda_dot: np.ndarray
    zeta_dot: float | np.ndarray | None
    mismatch: float
    condition: float
    method: str

    @property
    def shift(self) -> ShiftVelocity:
        return ShiftVelocity(self.lambda_dot, self.zeta_dot)


@dataclass(frozen=True)
class MismatchReport:
    direct: float
    closed_form: float
    energy: float

    @property
    def ratio(self) -> float:
        """direct / closed form; tends to 1 as dt -> 0."""
        if self.closed_form == 0.0:
            return 1.0 if self.direct == 0.0 else np.inf
        return self.direct / self.closed_form

    @property
    def relative_difference(self) -> float:
        return abs(self.ratio - 1.0)


def direct_mismatch(psi, system, potential, shift, dt, backend=SPLIT) -> float:
    """|<psi|U(dt) psi> - 1|^2 with one solver step."""
    if dt == 0:
        return 0.0
    prop = make_propagator(psi.grid, system, potential, shift, dt, backend)
    nxt = psi.replace(prop.step(np.array(psi.amplitudes)))
    return float(abs(overlap(psi, nxt) - 1.0) ** 2)


def mismatch(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec,
    shift: ShiftVelocity,
    dt: float,
    backend: str = SPLIT,
) -> MismatchReport:
    """Direct and closed-form mismatch of one step of length ``dt``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    psi.require_normalized()
    energy = hamiltonian_expectation(psi, system, potential, shift)
    closed = (dt / system.hbar) ** 2 * energy**2
    return MismatchReport(direct_mismatch(psi, system, potential, shift, dt, backend), closed, energy)


def best_match_translation(psi: WaveFunction, system: ParticleSystem, potential: PotentialSpec = FREE, dt: float = 1e-3) -> BestMatchResult:
    """lambda_dot = P / M, the expected centre-of-mass velocity."""
    psi.require_normalized()
    lam = momentum_expectation(psi, system) / system.total_mass
    d = psi.grid.spatial_dim
    zeta = None if d == 1 else (0.0 if d == 2 else np.zeros(3))
    shift = ShiftVelocity(lam, zeta)
    energy = hamiltonian_expectation(psi, system, potential, shift)
    return BestMatchResult(lam, zeta, (dt / system.hbar) ** 2 * energy**2, 1.0, "analytic")


def _solve_inertia(I: np.ndarray, L, spatial_dim: int):
    if spatial_dim == 2:
        izz = I[2, 2]
        cond = 1.0 if izz > 0 else np.inf
        if cond > SINGULAR_COND:
            raise SingularInertia("moment of inertia about z vanishes")
        return float(L / izz), cond
    cond = float(np.linalg.cond(I))
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularInertia(f"inertia tensor condition number {cond:.3e} exceeds {SINGULAR_COND:g}")
    return np.linalg.solve(I, L), cond


def best_match_rotation(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec = FREE,
    dt: float = 1e-3,
    center_tol: float = CENTER_TOL,
) -> BestMatchResult:
    """Solve I zeta_dot = L about the origin.

    The state must already sit in its centre-of-mass frame (centred and
    with zero momentum); see :func:`center_state`.
    """
    g = psi.grid
    if g.spatial_dim < 2:
        raise DimensionError("rotational best matching needs spatial_dim >= 2")
    psi.require_normalized()
    com = center_of_mass(psi, system)
    P = momentum_expectation(psi, system)
    if np.max(np.abs(com)) > center_tol or np.max(np.abs(P)) > center_tol:
        raise NotCentered(
            f"centre of mass {com} and momentum {P} must vanish within {center_tol:g}; call center_state first"
        )
    L = angular_momentum_expectation(psi, system)
    I = inertia_expectation(psi, system)
    zeta, cond = _solve_inertia(I, L, g.spatial_dim)
    lam = np.zeros(g.spatial_dim)
    shift = ShiftVelocity(lam, zeta)
    energy = hamiltonian_expectation(psi, system, potential, shift)
    return BestMatchResult(lam, zeta, (dt / system.hbar) ** 2 * energy**2, cond, "analytic")


def best_match_both(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec = FREE,
    dt: float = 1e-3,
    center_tol: float = CENTER_TOL,
) -> BestMatchResult:
    """Joint optimum ``M lambda_dot = P`` and ``I zeta_dot = L`` about the origin.

    With the mean position at the origin the cross terms between translation
    and rotation vanish in expectation, so the two conditions decouple and
    the state may keep its momentum.
    """
    g = psi.grid
    if g.spatial_dim < 2:
        raise DimensionError("rotational best matching needs spatial_dim >= 2")
    psi.require_normalized()
    com = center_of_mass(psi, system)
    if np.max(np.abs(com)) > center_tol:
        raise NotCentered(f"centre of mass {com} must vanish within {center_tol:g}; call translate_state first")
    lam = momentum_expectation(psi, system) / system.total_mass
    L = angular_momentum_expectation(psi, system)
    I = inertia_expectation(psi, system)
    zeta, cond = _solve_inertia(I, L, g.spatial_dim)
    shift = ShiftVelocity(lam, zeta)
    energy = hamiltonian_expectation(psi, system, potential, shift)
    return BestMatchResult(lam, zeta, (dt / system.hbar) ** 2 * energy**2, cond, "analytic")


def best_match(psi, system, potential=FREE, rotations=True, dt=1e-3) -> BestMatchResult:
    """Translations only in 1D or when ``rotations`` is false, both otherwise.

    For the combined case the state is expected in its centre-of-mass frame,
    where the translational optimum is zero.
    """
    if not rotations or psi.grid.spatial_dim == 1:
        return best_match_translation(psi, system, potential, dt)
    return best_match_rotation(psi, system, potential, dt)


# ------------------------------------------------------------ numerical


def _pack(shift: ShiftVelocity) -> np.ndarray:
    d = shift.spatial_dim
    if d == 1:
        return np.asarray(shift.lambda_dot)
    if d == 2:
        return np.concatenate([shift.lambda_dot, [shift.zeta_dot]])
    return np.concatenate([shift.lambda_dot, shift.zeta_dot])


def _unpack(v: np.ndarray, d: int) -> ShiftVelocity:
    if d == 1:
        return ShiftVelocity(v[:1])
    if d == 2:
        return ShiftVelocity(v[:2], float(v[2]))
    return ShiftVelocity(v[:3], v[3:6])


def shift_parameter_count(spatial_dim: int) -> int:
    return {1: 1, 2: 3, 3: 6}[spatial_dim]


def numerical_best_match(
    psi: WaveFunction,
    system: ParticleSystem,
    potential: PotentialSpec = FREE,
    dt: float = 1e-3,
    domain: Sequence[tuple[float, float]] | None = None,
    active: Sequence[int] | None = None,
    sweeps: int = 12,
    xtol: float = 1e-7,
    backend: str = SPLIT,
) -> BestMatchResult:
    """Minimise the direct mismatch by coordinate descent.

    ``domain`` gives a ``(low, high)`` bracket per shift parameter, ordered as
    lambda components followed by zeta components (one in 2D, three in 3D).
    ``active`` restricts the search to a subset of parameters; the others stay
    at zero.  Each sweep minimises along one parameter at a time with a
    bounded Brent search, then halves the bracket around the current point.
    """
    psi.require_normalized()
    d = psi.grid.spatial_dim
    n = shift_parameter_count(d)
    if domain is None:
        domain = [(-5.0, 5.0)] * n
    domain = np.asarray(domain, dtype=float).reshape(n, 2)
    active = list(range(n)) if active is None else sorted(active)
    scale = (system.hbar / dt) ** 2

    def objective(v):
        return scale * direct_mismatch(psi, system, potential, _unpack(v, d), dt, backend)

    x = np.zeros(n)
    for i in active:
        x[i] = np.clip(0.0, *domain[i])
    half = 0.5 * (domain[:, 1] - domain[:, 0])
    for _ in range(sweeps):
        previous = x.copy()
        for i in active:
            lo = max(domain[i, 0], x[i] - half[i])
            hi = min(domain[i, 1], x[i] + half[i])

            def along(s, i=i):
                y = x.copy()
                y[i] = s
                return objective(y)

            res = minimize_scalar(along, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
            x[i] = res.x
        half = np.maximum(0.5 * half, 1e3 * xtol)
        if np.max(np.abs(x - previous)) < xtol:
            break

    shift = _unpack(x, d)
    _warn_if_sign_change(psi, system, potential, x, domain, active, d)
    cond = 1.0
    if d >= 2:
        I = inertia_expectation(psi, system)
        cond = (1.0 if I[2, 2] > 0 else np.inf) if d == 2 else float(np.linalg.cond(I))
    return BestMatchResult(
        np.asarray(shift.lambda_dot),
        shift.zeta_dot if d != 3 else np.asarray(shift.zeta_dot),
        objective(x) / scale,
        cond,
        "numerical",
    )


def _warn_if_sign_change(psi, system, potential, x, domain, active, d, samples=9):
    """Warn when the shifted energy changes sign along any searched direction.

    Then the mismatch (dt/hbar)^2 H^2 has zeros instead of a single minimum
    at the stationary point of H.
    """
    values = []
    for i in active:
        for s in np.linspace(domain[i, 0], domain[i, 1], samples):
            y = x.copy()
            y[i] = s
            values.append(hamiltonian_expectation(psi, system, potential, _unpack(y, d)))
    values.append(hamiltonian_expectation(psi, system, potential, _unpack(x, d)))
    if min(values) <= 0.0 <= max(values):
        warnings.warn(
            "shifted energy changes sign on the search domain; the mismatch has several minima",
            NonConvexWarning,
            stacklevel=3,
        )


# ------------------------------------------------------- frame changes


def galilean_boost(psi: WaveFunction, system: ParticleSystem, velocity) -> WaveFunction:
    """Multiply by exp(-(i / hbar) sum_n m_n v . x_n); momentum drops by M v."""
    g = psi.grid
    v = np.asarray(velocity, dtype=float).reshape(-1)
    if v.size != g.spatial_dim:
        raise DimensionError(f"velocity needs {g.spatial_dim} components")
    phase = np.zeros(g.shape)
    for n in range(g.particle_count):
        for a, A in enumerate(g.particle_axes(n)):
            phase = phase + system.masses[n] * v[a] * g.coord(A)
    return psi.replace(psi.amplitudes * np.exp(-1j * phase / system.hbar))


def translate_state(psi: WaveFunction, displacement) -> WaveFunction:
    """Rigidly move every particle by ``displacement`` (spectral shift)."""
    g = psi.grid
    c = np.asarray(displacement, dtype=float).reshape(-1)
    f = np.array(psi.amplitudes)
    for n in range(g.particle_count):
        for a, A in enumerate(g.particle_axes(n)):
            if c[a] != 0:
                f = g.translate(f, A, c[a])
    return psi.replace(f)


def center_state(psi: WaveFunction, system: ParticleSystem) -> WaveFunction:
    """Move to the centre-of-mass frame: zero expected position and momentum."""
    moved = translate_state(psi, -center_of_mass(psi, system)).normalized()
    return galilean_boost(moved, system, momentum_expectation(moved, system) / system.total_mass)


# ---------------------------------------------------------- constraints


@dataclass(frozen=True)
class ConstraintReport:
    momentum_residual: float
    angular_residual: float
    tolerance: float
    relational: bool

    @property
    def momentum_ok(self) -> bool:
        return self.momentum_residual < self.tolerance

    @property
    def angular_ok(self) -> bool:
        return self.angular_residual < self.tolerance

    @property
    def passed(self) -> bool:
        return self.momentum_ok and self.angular_ok

    @property
    def negative_control_detected(self) -> bool:
        """A non-relational potential is expected to break momentum conservation."""
        return (not self.relational) and not self.momentum_ok

    def as_dict(self) -> dict:
        return {
            "momentum_residual": self.momentum_residual,
            "angular_residual": self.angular_residual,
            "tolerance": self.tolerance,
            "relational": self.relational,
            "momentum_ok": self.momentum_ok,
            "angular_ok": self.angular_ok,
            "passed": self.passed,
        }


def constraint_residuals(report: ObservableReport, shift: ShiftVelocity, system: ParticleSystem) -> tuple[float, float]:
    """(|P - M lambda_dot|, |L - I zeta_dot|) for one report."""
    mom = float(np.linalg.norm(report.momentum - system.total_mass * np.asarray(shift.lambda_dot)))
    if report.angular_momentum is None:
        return mom, 0.0
    if shift.spatial_dim == 2:
        return mom, float(abs(report.angular_momentum - report.inertia[2, 2] * shift.zeta_dot))
    return mom, float(np.linalg.norm(report.angular_momentum - report.inertia @ shift.zeta3))


def constraint_check(
    reports: Sequence[ObservableReport],
    shift: ShiftVelocity,
    system: ParticleSystem,
    tolerance: float = 1e-6,
    potential: PotentialSpec = FREE,
) -> ConstraintReport:
    """Largest constraint residuals over a recorded run."""
    mom = ang = 0.0
    for r in reports:
        a, b = constraint_residuals(r, shift, system)
        mom, ang = max(mom, a), max(ang, b)
    return ConstraintReport(mom, ang, tolerance, potential.relational)


# ---------------------------------------------------- reference states


def corotating_pair_state(grid: GridSpec, system: ParticleSystem, zeta: float):
    """Two particles in 2D whose best-matching rotation rate is ``zeta``.

    Returns ``(psi, spring_constant)``.  Under the pair spring and the
    rotating shift the Hamiltonian separates into centre-of-mass and relative
    parts, each an isotropic oscillator coupled to -zeta L.  The centre of
    mass sits in the Gaussian ground level (frequency zeta) and the relative
    coordinate in the nodeless-radius l = 2 level of frequency 3 zeta, which
    makes the state stationary with L = 2 hbar and I zeta = L exactly.
    """
    if grid.spatial_dim != 2 or grid.particle_count != 2:
        raise DimensionError("needs two particles in two dimensions")
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    m1, m2 = system.masses
    M = m1 + m2
    mu = m1 * m2 / M
    hbar = system.hbar
    omega = 3.0 * zeta
    spring = mu * (omega**2 - zeta**2)

    def fn(x1, y1, x2, y2):
        X = (m1 * x1 + m2 * x2) / M
        Y = (m1 * y1 + m2 * y2) / M
        rx, ry = x1 - x2, y1 - y2
        com = np.exp(-M * zeta * (X**2 + Y**2) / (2 * hbar))
        rel = (rx + 1j * ry) ** 2 * np.exp(-mu * omega * (rx**2 + ry**2) / (2 * hbar))
        return com * rel

    return from_function(grid, fn), spring
