"""Ontic trajectories sampled from the short-step transition kernel.

Each chain takes Euler-Maruyama steps

    dx^A = dt (m^AB d_B varphi - xi_dot^A) + dw^A,   <dw^A dw^B> = eta dt m^AB

against the co-evolving epistemic state, where the drift potential is
``varphi = phi + eta log rho^(1/2)``.  Randomness is counter based: chains are
split into fixed-size chunks and chunk ``c`` draws from
``Philox(SeedSequence(seed, spawn_key=(c,)))``, so the ensemble does not
depend on how many threads process the chunks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.ndimage import map_coordinates

from .core import EpistemicState, GridSpec, ParticleSystem, ShiftVelocity, WaveFunction, as_wavefunction
from .errors import NodeError, UndersampledBins

DENSITY_FLOOR = 1e-12
CLAMP_LIMIT = 1e-3
CHUNK_SIZE = 4096


@dataclass(frozen=True, eq=False)
class DriftField:
    """Gradient of the drift potential on the grid plus the floored density."""

    grid: GridSpec
    grad_varphi: np.ndarray  # (D, *shape)
    grad_phi: np.ndarray
    grad_log_rho: np.ndarray
    rho: np.ndarray
    floor: float
    eta: float

    def decomposition_defect(self, system: ParticleSystem, shift: ShiftVelocity | None = None) -> float:
        """max |m^AB d_B varphi - (v^A + xi^A + (eta/2) m^AB d_B log rho)|."""
        g = self.grid
        shift = ShiftVelocity.zero(g.spatial_dim) if shift is None else shift
        masses = system.axis_masses(g.spatial_dim)
        xi = shift.field(g)
        worst = 0.0
        for A in range(g.dim):
            v = self.grad_phi[A] / masses[A] - xi[A]
            rhs = v + xi[A] + 0.5 * self.eta * self.grad_log_rho[A] / masses[A]
            worst = max(worst, float(np.max(np.abs(self.grad_varphi[A] / masses[A] - rhs))))
        return worst


def drift_field(state, system: ParticleSystem, eta: float | None = None, floor: float = DENSITY_FLOOR) -> DriftField:
    """Build d varphi = d phi + (eta / 2) d log rho from either chart.

    Both gradients come from spectral derivatives of psi,
    ``d phi = hbar Im(psi* d psi) / rho`` and ``d log rho = 2 Re(psi* d psi) / rho``,
    with ``rho`` floored at ``floor * max(rho)``.
    """
    psi = as_wavefunction(state)
    g = psi.grid
    hbar = state.hbar if isinstance(state, EpistemicState) else system.hbar
    eta = system.eta if eta is None else float(eta)
    rho = psi.density
    rho_floor = floor * rho.max()
    safe = np.maximum(rho, rho_floor)
    grad_phi = np.empty((g.dim,) + g.shape)
    grad_log = np.empty((g.dim,) + g.shape)
    for A in range(g.dim):
        prod = np.conj(psi.amplitudes) * g.derivative(psi.amplitudes, A)
        grad_phi[A] = hbar * prod.imag / safe
        grad_log[A] = 2.0 * prod.real / safe
    return DriftField(g, grad_phi + 0.5 * eta * grad_log, grad_phi, grad_log, rho, rho_floor, eta)


def _grid_index(grid: GridSpec, positions: np.ndarray) -> np.ndarray:
    """Fractional grid indices, shape (D, n), for (n, D) positions."""
    lo = np.array([grid.axis(A)[0] for A in range(grid.dim)])
    h = np.asarray(grid.spacing)
    return ((positions - lo) / h).T


def interpolate(grid: GridSpec, values: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of a grid field at (n, D) positions."""
    return map_coordinates(values, _grid_index(grid, positions), order=1, mode="grid-wrap")


def sample_step(
    positions: np.ndarray,
    drift: DriftField | EpistemicState | WaveFunction,
    system: ParticleSystem,
    shift: ShiftVelocity,
    dt: float,
    rng: np.random.Generator,
    noise_eta: float | None = None,
    return_clamps: bool = False,
):
    """Advance (n, D) positions by one Euler-Maruyama step and wrap them.

    ``noise_eta`` overrides the diffusion constant of the fluctuation only;
    it exists for negative-control runs.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not isinstance(drift, DriftField):
        drift = drift_field(drift, system)
    g = drift.grid
    shift.check_grid(g)
    pos = np.asarray(positions, dtype=float)
    masses = system.axis_masses(g.spatial_dim)
    idx = _grid_index(g, pos)
    mean = np.empty_like(pos)
    for A in range(g.dim):
        mean[:, A] = map_coordinates(drift.grad_varphi[A], idx, order=1, mode="grid-wrap") / masses[A]
    mean -= shift.at(pos, g)
    eta = drift.eta if noise_eta is None else float(noise_eta)
    noise = rng.standard_normal(pos.shape) * np.sqrt(eta * dt / masses)
    new = g.wrap(pos + dt * mean + noise)
    if return_clamps:
        rho_here = map_coordinates(drift.rho, idx, order=1, mode="grid-wrap")
        return new, int(np.count_nonzero(rho_here < drift.floor))
    return new


def initial_positions(psi: WaveFunction, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw grid nodes with probability rho h^D by inverse CDF over the flattened grid.

    Flattening in C order makes this the sequential conditional sampler
    x_0 ~ rho(x_0), x_1 ~ rho(x_1 | x_0), ...
    """
    g = psi.grid
    cdf = np.cumsum(psi.density.ravel())
    u = rng.random(count) * cdf[-1]
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    idx = np.unravel_index(flat, g.shape)
    return np.stack([g.axis(A)[idx[A]] for A in range(g.dim)], axis=-1)


def chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


@dataclass
class TrajectoryEnsemble:
    positions: np.ndarray  # (records, chains, D)
    times: np.ndarray
    record_steps: np.ndarray
    seed: int
    dt: float
    chunk_size: int
    steps: int
    clamps: int = 0
    noise_eta: float | None = None
    grid: GridSpec | None = field(default=None, repr=False)

    @property
    def chains(self) -> int:
        return self.positions.shape[1]

    @property
    def chunk_keys(self) -> list[tuple[int]]:
        """SeedSequence spawn keys of the per-chunk generators."""
        return [(c,) for c in range(-(-self.chains // self.chunk_size))]

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def clamp_fraction(self) -> float:
        total = self.chains * max(self.steps, 1)
        return self.clamps / total

    @property
    def flagged(self) -> bool:
        return self.clamp_fraction > CLAMP_LIMIT


def sample_ensemble(
    states,
    system: ParticleSystem,
    shift: ShiftVelocity,
    chains: int,
    seed: int,
    record_stride: int | None = None,
    noise_eta: float | None = None,
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
    strict: bool = False,
) -> TrajectoryEnsemble:
    """Sample ``chains`` trajectories against a sequence of states.

    ``states`` is an evolution series, a list, or any iterable (for example
    :func:`relational_ed.evolution.iterate_states`) yielding the state after
    every step of a uniform ``dt``.  Chains start on grid nodes drawn from the
    first density; each step uses the drift of the state at its start.
    Positions are recorded every ``record_stride`` steps and always at the
    first and last instants.
    """
    it = iter(getattr(states, "states", states))
    try:
        first = as_wavefunction(next(it))
    except StopIteration:
        raise ValueError("need at least the initial state") from None
    grid = first.grid
    n_chunks = -(-chains // chunk_size)
    sizes = [min(chunk_size, chains - c * chunk_size) for c in range(n_chunks)]
    gens = [chunk_generator(seed, c) for c in range(n_chunks)]
    pos = [initial_positions(first, sizes[c], gens[c]) for c in range(n_chunks)]
    stride = int(record_stride or 0)
    records, times, steps_rec = [np.concatenate(pos)], [first.t], [0]
    clamps = 0
    dt = None
    k = 0
    prev = first
    pool = ThreadPoolExecutor(max_workers=int(threads)) if threads and int(threads) > 1 else None
    try:
        for state in it:
            state = as_wavefunction(state)
            step = state.t - prev.t
            if dt is None:
                dt = step
            elif not np.isclose(step, dt, rtol=1e-9, atol=0.0):
                raise ValueError("sampler needs states recorded at every step of a uniform dt")
            drift = drift_field(prev, system)

            def advance(c, drift=drift):
                return sample_step(pos[c], drift, system, shift, dt, gens[c], noise_eta, return_clamps=True)

            results = list(pool.map(advance, range(n_chunks))) if pool else [advance(c) for c in range(n_chunks)]
            pos = [r[0] for r in results]
            clamps += sum(r[1] for r in results)
            k += 1
            prev = state
            if stride and k % stride == 0:
                records.append(np.concatenate(pos))
                times.append(state.t)
                steps_rec.append(k)
    finally:
        if pool:
            pool.shutdown()
    if steps_rec[-1] != k:
        records.append(np.concatenate(pos))
        times.append(prev.t)
        steps_rec.append(k)
    ens = TrajectoryEnsemble(
        positions=np.stack(records),
        times=np.array(times),
        record_steps=np.array(steps_rec),
        seed=seed,
        dt=0.0 if dt is None else float(dt),
        chunk_size=chunk_size,
        steps=k,
        clamps=clamps,
        noise_eta=noise_eta,
        grid=grid,
    )
    if strict and ens.flagged:
        raise NodeError(f"drift clamped on {ens.clamp_fraction:.2%} of chain steps")
    return ens


# ------------------------------------------------------------ statistics


@dataclass(frozen=True)
class DensityComparison:
    total_variation: float
    chi2: float
    dof: int
    p_value: float
    bins: int
    samples: int


def _block_index(grid: GridSpec, positions: np.ndarray, factors) -> np.ndarray:
    """Flat coarse-block index of each position (nearest node, then block)."""
    idx = np.rint(_grid_index(grid, positions)).astype(np.int64)
    flat = np.zeros(positions.shape[0], dtype=np.int64)
    for A in range(grid.dim):
        n = grid.shape[A]
        nb = -(-n // factors[A])
        flat = flat * nb + (np.mod(idx[A], n) // factors[A])
    return flat


def _block_probabilities(grid: GridSpec, density: np.ndarray, factors) -> np.ndarray:
    p = density * grid.cell_volume
    for A in range(grid.dim):
        n = grid.shape[A]
        nb = -(-n // factors[A])
        edges = np.arange(nb) * factors[A]
        p = np.add.reduceat(p, edges, axis=A)
    return p.ravel() / p.sum()


def _coarsening(grid: GridSpec, samples: int, min_expected: float, bins_per_axis, density=None):
    """Block factor per axis.

    Without an explicit ``bins_per_axis`` the finest uniform factor is used
    whose bins holding at least ``min_expected`` counts number no more than
    ``samples / (20 min_expected)``, so occupied bins average about twenty
    times the minimum whatever fraction of the box the density fills.
    """
    if bins_per_axis is not None:
        if np.ndim(bins_per_axis) == 0:
            bins_per_axis = [int(bins_per_axis)] * grid.dim
        return [max(1, -(-grid.shape[A] // int(bins_per_axis[A]))) for A in range(grid.dim)]
    limit = max(2, int(samples / (20 * min_expected)))
    if density is None:
        target = max(2, int(limit ** (1.0 / grid.dim)))
        return [max(1, -(-grid.shape[A] // target)) for A in range(grid.dim)]
    for f in range(1, max(grid.shape) + 1):
        factors = [min(f, n) for n in grid.shape]
        kept = np.count_nonzero(samples * _block_probabilities(grid, density, factors) >= min_expected)
        if kept <= limit:
            return factors
    return list(grid.shape)


def _pool(expected: np.ndarray, min_expected: float):
    """Bin labels where every bin below ``min_expected`` joins one pooled tail bin."""
    keep = expected >= min_expected
    if not np.any(keep):
        raise UndersampledBins(f"no bin reaches {min_expected:g} expected counts")
    labels = np.full(expected.size, -1, dtype=np.int64)
    labels[keep] = np.arange(np.count_nonzero(keep))
    tail = ~keep
    n_bins = int(np.count_nonzero(keep))
    if np.any(tail):
        tail_mass = expected[tail].sum()
        if tail_mass >= min_expected:
            labels[tail] = n_bins
            n_bins += 1
        else:
            # fold a thin tail into the smallest kept bin
            smallest = np.flatnonzero(keep)[np.argmin(expected[keep])]
            labels[tail] = labels[smallest]
    return labels, n_bins


def ensemble_density_compare(
    positions,
    psi: WaveFunction,
    min_expected: float = 100.0,
    bins_per_axis=None,
) -> DensityComparison:
    """Histogram (n, D) positions on coarse blocks and compare with |psi|^2.

    Blocks whose expected count is below ``min_expected`` are pooled into one
    tail bin.  Reports total-variation distance, chi-square and its p-value.
    """
    if isinstance(positions, TrajectoryEnsemble):
        positions = positions.final
    pos = np.asarray(positions, dtype=float)
    g = psi.grid
    n = pos.shape[0]
    factors = _coarsening(g, n, min_expected, bins_per_axis, psi.density)
    probs = _block_probabilities(g, psi.density, factors)
    labels, k = _pool(n * probs, min_expected)
    expected = np.bincount(labels, weights=n * probs, minlength=k)
    counts = np.bincount(labels[_block_index(g, pos, factors)], minlength=k).astype(float)
    tv = 0.5 * float(np.abs(counts / n - expected / n).sum())
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    dof = k - 1
    p = float(stats.chi2.sf(chi2, dof)) if dof > 0 else 1.0
    return DensityComparison(tv, chi2, dof, p, k, n)


def two_sample_compare(a, b, grid: GridSpec, min_expected: float = 100.0, bins_per_axis=None) -> DensityComparison:
    """Chi-square homogeneity test between two position samples on coarse blocks."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    na, nb = a.shape[0], b.shape[0]
    ones = [1] * grid.dim
    both = np.bincount(_block_index(grid, np.concatenate([a, b]), ones), minlength=grid.size)
    factors = _coarsening(grid, min(na, nb), min_expected, bins_per_axis, both.reshape(grid.shape).astype(float))
    nblocks = int(np.prod([-(-grid.shape[A] // factors[A]) for A in range(grid.dim)]))
    ca = np.bincount(_block_index(grid, a, factors), minlength=nblocks).astype(float)
    cb = np.bincount(_block_index(grid, b, factors), minlength=nblocks).astype(float)
    pooled = (ca + cb) * min(na, nb) / (na + nb)
    labels, k = _pool(pooled, min_expected)
    ca = np.bincount(labels, weights=ca, minlength=k)
    cb = np.bincount(labels, weights=cb, minlength=k)
    ka, kb = np.sqrt(nb / na), np.sqrt(na / nb)
    chi2 = float(((ka * ca - kb * cb) ** 2 / (ca + cb)).sum())
    tv = 0.5 * float(np.abs(ca / na - cb / nb).sum())
    dof = k - 1
    p = float(stats.chi2.sf(chi2, dof)) if dof > 0 else 1.0
    return DensityComparison(tv, chi2, dof, p, k, na + nb)


def fluctuation_covariance(increments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of (n, D) increments and its elementwise standard error.

    The standard error of cov(X_A, X_B) is estimated from the sample as
    sqrt(var(X_A X_B) / n) with centred X.
    """
    x = np.asarray(increments, float)
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (n - 1)
    prod = xc[:, :, None] * xc[:, None, :]
    se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return cov, se
