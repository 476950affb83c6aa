"""Numerical maximum-entropy derivation of the one-axis short-step kernel.

Maximising S[P, Q] = -sum P log(P / Q) over a lattice of candidate steps,
with Gaussian prior Q ~ exp(-alpha dx^2 / 2) and the single constraint
``slope * <dx> = kappa``, gives the exponential family P ~ Q exp(a slope dx).
The multiplier ``a`` is found by root finding on the constraint, which is
monotone in ``a``.  The closed-form answer is a Gaussian with mean
``a slope / alpha`` and variance ``1 / alpha``, where ``a = kappa alpha / slope^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import logsumexp, rel_entr

from .errors import InfeasibleConstraint

TAIL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MaxEntProblem:
    lattice: np.ndarray
    alpha: float
    slope: float
    kappa: float

    def __post_init__(self):
        lat = np.asarray(self.lattice, dtype=float)
        if lat.ndim != 1 or lat.size < 3 or np.any(np.diff(lat) <= 0):
            raise ValueError("lattice must be an increasing 1D array")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "lattice", lat)
        if self.tail_mass() > TAIL_TOL:
            raise ValueError(f"lattice misses {self.tail_mass():.2e} of the target Gaussian")

    @classmethod
    def auto(cls, alpha, slope, kappa, spacing_sigmas=0.25, half_width_sigmas=12.0):
        """Uniform lattice through dx = 0 covering the expected step.

        The lattice spans ``half_width_sigmas`` prior widths beyond the
        expected step on both sides of zero.
        """
        sigma = 1.0 / np.sqrt(alpha)
        centre = kappa / slope if slope != 0 else 0.0
        h = spacing_sigmas * sigma
        reach = abs(centre) + half_width_sigmas * sigma
        n = int(np.ceil(reach / h))
        return cls(h * np.arange(-n, n + 1), alpha, slope, kappa)

    @property
    def sigma(self) -> float:
        return 1.0 / np.sqrt(self.alpha)

    def closed_form_multiplier(self) -> float:
        if self.slope == 0:
            return 0.0
        return self.kappa * self.alpha / self.slope**2

    def closed_form_mean(self) -> float:
        return self.closed_form_multiplier() * self.slope / self.alpha

    def tail_mass(self) -> float:
        """Mass of the closed-form Gaussian beyond the lattice ends."""
        if self.slope == 0 and self.kappa != 0:
            mu = 0.0
        else:
            mu = self.closed_form_mean()
        lo, hi = self.lattice[0], self.lattice[-1]
        return float(stats.norm.cdf(lo, mu, self.sigma) + stats.norm.sf(hi, mu, self.sigma))

    def log_prior(self) -> np.ndarray:
        logq = -0.5 * self.alpha * self.lattice**2
        return logq - logsumexp(logq)


@dataclass(frozen=True, eq=False)
class MaxEntSolution:
    probabilities: np.ndarray
    multiplier: float
    log_partition: float
    reference: np.ndarray
    kl_divergence: float
    constraint_residual: float
    entropy: float


def _tilted(logq: np.ndarray, x: np.ndarray, t: float):
    logw = logq + t * x
    logz = logsumexp(logw)
    return np.exp(logw - logz), logz


def _gaussian_on_lattice(x: np.ndarray, mean: float, alpha: float) -> np.ndarray:
    logp = -0.5 * alpha * (x - mean) ** 2
    return np.exp(logp - logsumexp(logp))


def maxent_transition_oracle(problem: MaxEntProblem) -> MaxEntSolution:
    """Solve the one-dimensional dual problem and compare with the Gaussian."""
    x = problem.lattice
    logq = problem.log_prior()
    s, kappa = problem.slope, problem.kappa
    if s == 0:
        if kappa != 0:
            raise InfeasibleConstraint("constraint slope is zero but kappa is not")
        p, t, logz = np.exp(logq), 0.0, 0.0
    else:
        target = kappa / s
        if not x[0] < target < x[-1]:
            raise InfeasibleConstraint(
                f"expected step {target:g} lies outside the lattice support [{x[0]:g}, {x[-1]:g}]"
            )

        def gap(t):
            p, _ = _tilted(logq, x, t)
            return float(p @ x) - target

        # the tilted mean is increasing in t = a * slope
        lo, hi = -1.0, 1.0
        while gap(lo) > 0:
            lo *= 2
        while gap(hi) < 0:
            hi *= 2
        t = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        p, logz = _tilted(logq, x, t)
    reference = _gaussian_on_lattice(x, problem.closed_form_mean(), problem.alpha)
    kl = float(rel_entr(p, reference).sum())
    entropy = float(-rel_entr(p, np.exp(logq)).sum())
    residual = float(s * (p @ x) - kappa)
    multiplier = t / s if s != 0 else 0.0
    return MaxEntSolution(p, multiplier, float(logz), reference, max(kl, 0.0), residual, entropy)
