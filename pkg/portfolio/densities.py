"""
Signal mark densities f1 (bull) and f2 (bear).

Each family evaluates both densities, samples marks, and describes its support
and truncation so that the quadrature, the BLR checker and the simulators share
one description of the signal.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .constants import BEAR, BULL, DEFAULT_QUAD_NODES, LOG_OVERFLOW, MIN_SUPPORT_MASS, TAIL_MASS
from .exceptions import InvalidArgument, SupportMismatch
from .quadrature import QuadratureRule, composite_rule

logger = logging.getLogger(__name__)


def _check_regime(regime: int) -> None:
    if regime not in (BULL, BEAR):
        raise InvalidArgument(f'regime must be 1 or 2, got {regime!r}')


class DensityFamily(ABC):
    """Common interface of the signal density families."""

    name: str = ''
    support: tuple[float, float] = (-np.inf, np.inf)
    breakpoints: tuple[float, ...] = ()
    singular: tuple[float, ...] = ()

    @abstractmethod
    def pdf(self, regime: int, z: ArrayLike) -> NDArray[np.float64]:
        """Density of regime `regime` at `z`; zero outside the support."""

    @abstractmethod
    def cdf(self, regime: int, z: ArrayLike) -> NDArray[np.float64]:
        ...

    @abstractmethod
    def sample(self, regime: int, size: int, rng: np.random.Generator) -> NDArray[np.float64]:
        ...

    def mass(self, regime: int, lo: float, hi: float) -> float:
        """Probability that a mark of regime `regime` falls in [lo, hi]."""
        return float(self.cdf(regime, hi) - self.cdf(regime, lo))

    @abstractmethod
    def truncation(self, tail_mass: float) -> tuple[float, float]:
        """Finite interval outside which each density has mass below `tail_mass`."""

    @abstractmethod
    def params(self) -> dict:
        ...

    def logpdf(self, regime: int, z: ArrayLike) -> NDArray[np.float64]:
        with np.errstate(divide='ignore'):
            return np.log(self.pdf(regime, z))

    def identical(self) -> bool:
        return False

    def same_support(self) -> bool:
        return True

    def ratio_quadratic(self) -> tuple[float, float, float] | None:
        """Coefficients (A, B, C) with ln(f2/f1)(z) = A z^2 + B z + C, when available."""
        return None

    def d3_finite(self) -> bool | None:
        """Analytic verdict on the integrability of f1^3 / f2^2, when available."""
        return None

    def d3_closed_form(self) -> float | None:
        return None

    def in_support(self, z: ArrayLike) -> NDArray[np.bool_]:
        z = np.asarray(z, dtype=np.float64)
        lo, hi = self.support
        return (z >= lo) & (z <= hi)


class GaussianFamily(DensityFamily):
    """f_i = N(mean_i, var_i)."""

    name = 'gaussian'

    def __init__(self, mean: ArrayLike, var: ArrayLike):
        self.mean = tuple(float(m) for m in mean)
        self.var = tuple(float(v) for v in var)
        if len(self.mean) != 2 or len(self.var) != 2:
            raise InvalidArgument('gaussian family needs two means and two variances')
        if min(self.var) <= 0:
            raise InvalidArgument('gaussian variances must be positive')

    def pdf(self, regime, z):
        _check_regime(regime)
        i = regime - 1
        return stats.norm.pdf(z, loc=self.mean[i], scale=np.sqrt(self.var[i]))

    def logpdf(self, regime, z):
        _check_regime(regime)
        i = regime - 1
        return stats.norm.logpdf(z, loc=self.mean[i], scale=np.sqrt(self.var[i]))

    def cdf(self, regime, z):
        _check_regime(regime)
        i = regime - 1
        return stats.norm.cdf(z, loc=self.mean[i], scale=np.sqrt(self.var[i]))

    def sample(self, regime, size, rng):
        _check_regime(regime)
        i = regime - 1
        return rng.normal(self.mean[i], np.sqrt(self.var[i]), size)

    def truncation(self, tail_mass):
        q = tail_mass / 4.0
        lows = [stats.norm.ppf(q, m, np.sqrt(v)) for m, v in zip(self.mean, self.var)]
        highs = [stats.norm.isf(q, m, np.sqrt(v)) for m, v in zip(self.mean, self.var)]
        return float(min(lows)), float(max(highs))

    def params(self):
        return {'mean': list(self.mean), 'var': list(self.var)}

    def identical(self):
        return self.mean[0] == self.mean[1] and self.var[0] == self.var[1]

    def ratio_quadratic(self):
        (m1, m2), (v1, v2) = self.mean, self.var
        a = 0.5 / v1 - 0.5 / v2
        b = m2 / v2 - m1 / v1
        c = 0.5 * m1 * m1 / v1 - 0.5 * m2 * m2 / v2 + 0.5 * np.log(v1 / v2)
        return a, b, c

    def d3_finite(self):
        v1, v2 = self.var
        return -1.5 / v1 + 1.0 / v2 < 0.0

    def d3_closed_form(self):
        # f1^3 / f2^2 = exp(-p z^2 + q z + r)
        (m1, m2), (v1, v2) = self.mean, self.var
        p = 1.5 / v1 - 1.0 / v2
        if p <= 0.0:
            return np.inf
        q = 3.0 * m1 / v1 - 2.0 * m2 / v2
        r = -1.5 * m1 * m1 / v1 + m2 * m2 / v2 - 1.5 * np.log(2.0 * np.pi * v1) + np.log(2.0 * np.pi * v2)
        log_integral = 0.5 * np.log(np.pi / p) + q * q / (4.0 * p) + r
        if log_integral > LOG_OVERFLOW:
            return np.inf
        return max(0.0, float(np.expm1(log_integral)) / 6.0)


class GaussianMixtureFamily(DensityFamily):
    """f1 = sum_j w_j N(means_j, vars_j) against a single Gaussian f2 = N(mean, var)."""

    name = 'gaussian_mixture'

    def __init__(self, weights: ArrayLike, means: ArrayLike, vars: ArrayLike, mean: float, var: float):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.vars = np.asarray(vars, dtype=np.float64)
        self.mean2 = float(mean)
        self.var2 = float(var)
        if not (self.weights.shape == self.means.shape == self.vars.shape) or self.weights.ndim != 1:
            raise InvalidArgument('mixture weights, means and vars must have the same length')
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise InvalidArgument('mixture weights must be nonnegative and sum to 1')
        if np.any(self.vars <= 0) or self.var2 <= 0:
            raise InvalidArgument('mixture variances must be positive')
        self.weights = self.weights / self.weights.sum()

    def pdf(self, regime, z):
        _check_regime(regime)
        z = np.asarray(z, dtype=np.float64)
        if regime == BEAR:
            return stats.norm.pdf(z, self.mean2, np.sqrt(self.var2))
        out = np.zeros_like(z)
        for w, m, v in zip(self.weights, self.means, self.vars):
            out = out + w * stats.norm.pdf(z, m, np.sqrt(v))
        return out

    def logpdf(self, regime, z):
        _check_regime(regime)
        z = np.asarray(z, dtype=np.float64)
        if regime == BEAR:
            return stats.norm.logpdf(z, self.mean2, np.sqrt(self.var2))
        parts = stats.norm.logpdf(z[..., None], self.means, np.sqrt(self.vars))
        with np.errstate(divide='ignore'):
            return logsumexp(parts, axis=-1, b=self.weights)

    def cdf(self, regime, z):
        _check_regime(regime)
        z = np.asarray(z, dtype=np.float64)
        if regime == BEAR:
            return stats.norm.cdf(z, self.mean2, np.sqrt(self.var2))
        return np.sum(self.weights * stats.norm.cdf(z[..., None], self.means, np.sqrt(self.vars)), axis=-1)

    def sample(self, regime, size, rng):
        _check_regime(regime)
        if regime == BEAR:
            return rng.normal(self.mean2, np.sqrt(self.var2), size)
        component = rng.choice(self.weights.size, size=size, p=self.weights)
        return rng.normal(self.means[component], np.sqrt(self.vars[component]))

    def truncation(self, tail_mass):
        q = tail_mass / (4.0 * (self.weights.size + 1))
        sd = np.sqrt(np.append(self.vars, self.var2))
        mu = np.append(self.means, self.mean2)
        return float(np.min(stats.norm.ppf(q, mu, sd))), float(np.max(stats.norm.isf(q, mu, sd)))

    def params(self):
        return {
            'weights': self.weights.tolist(),
            'means': self.means.tolist(),
            'vars': self.vars.tolist(),
            'mean': self.mean2,
            'var': self.var2,
        }

    def identical(self):
        active = self.weights > 0
        return bool(np.all(self.means[active] == self.mean2) and np.all(self.vars[active] == self.var2))

    def d3_finite(self):
        active = self.weights > 0
        return bool(np.all(-1.5 / self.vars[active] + 1.0 / self.var2 < 0.0))


class MixtureGammaFamily(DensityFamily):
    """Power/exponential mixture against a Gamma(a1) density on the positive half-line.

    f1(z) = a2 a1 z^(a1-1) on (0, 1) and (1 - a2) e^(1-z) on (1, inf);
    f2(z) = z^(a1-1) e^(-z) / Gamma(a1).
    """

    name = 'mixture_gamma'
    support = (0.0, np.inf)
    breakpoints = (1.0,)
    singular = (0.0,)

    def __init__(self, a1: float, a2: float):
        self.a1 = float(a1)
        self.a2 = float(a2)
        if not (0.0 < self.a1 < 1.0 and 0.0 < self.a2 < 1.0):
            raise InvalidArgument('mixture_gamma needs a1, a2 in (0, 1)')

    def pdf(self, regime, z):
        _check_regime(regime)
        z = np.asarray(z, dtype=np.float64)
        if regime == BEAR:
            return stats.gamma.pdf(z, self.a1)
        low = (z > 0.0) & (z < 1.0)
        high = z > 1.0
        power = self.a2 * self.a1 * np.where(low, z, 1.0) ** (self.a1 - 1.0)
        tail = (1.0 - self.a2) * np.exp(1.0 - np.where(high, z, 1.0))
        return np.where(low, power, np.where(high, tail, 0.0))

    def logpdf(self, regime, z):
        _check_regime(regime)
        z = np.asarray(z, dtype=np.float64)
        if regime == BEAR:
            return stats.gamma.logpdf(z, self.a1)
        low = (z > 0.0) & (z < 1.0)
        high = z > 1.0
        power = np.log(self.a2 * self.a1) + (self.a1 - 1.0) * np.log(np.where(low, z, 1.0))
        tail = np.log(1.0 - self.a2) + 1.0 - np.where(high, z, 1.0)
        return np.where(low, power, np.where(high, tail, -np.inf))

    def cdf(self, regime, z):
        _check_regime(regime)
        z = np.asarray(z, dtype=np.float64)
        if regime == BEAR:
            return stats.gamma.cdf(z, self.a1)
        power = self.a2 * np.clip(z, 0.0, 1.0) ** self.a1
        tail = (1.0 - self.a2) * -np.expm1(1.0 - np.maximum(z, 1.0))
        return np.where(z > 0.0, power + tail, 0.0)

    def sample(self, regime, size, rng):
        _check_regime(regime)
        if regime == BEAR:
            return rng.gamma(self.a1, 1.0, size)
        low = rng.random(size) < self.a2
        u = rng.random(size)
        return np.where(low, u ** (1.0 / self.a1), 1.0 + rng.exponential(1.0, size))

    def truncation(self, tail_mass):
        q = tail_mass / 4.0
        hi1 = 1.0 - np.log(q / (1.0 - self.a2))
        hi2 = stats.gamma.isf(q, self.a1)
        return 0.0, float(max(hi1, hi2))

    def params(self):
        return {'a1': self.a1, 'a2': self.a2}


class TabulatedFamily(DensityFamily):
    """Densities given on a shared grid, linearly interpolated and renormalised."""

    name = 'tabulated'

    def __init__(self, grid: ArrayLike, f1: ArrayLike, f2: ArrayLike):
        self.grid = np.asarray(grid, dtype=np.float64)
        raw = [np.asarray(f1, dtype=np.float64), np.asarray(f2, dtype=np.float64)]
        if self.grid.ndim != 1 or self.grid.size < 2 or np.any(np.diff(self.grid) <= 0):
            raise InvalidArgument('tabulated grid must be strictly increasing with at least 2 nodes')
        if any(v.shape != self.grid.shape for v in raw):
            raise InvalidArgument('tabulated values must match the grid')
        if any(np.any(v < 0) for v in raw):
            raise InvalidArgument('tabulated densities must be nonnegative')
        mass = [trapezoid(v, self.grid) for v in raw]
        if min(mass) <= 0:
            raise InvalidArgument('tabulated densities must have positive mass')
        self.values = [v / m for v, m in zip(raw, mass)]
        self.support = (float(self.grid[0]), float(self.grid[-1]))
        if self.grid.size <= 9:
            self.breakpoints = tuple(self.grid[1:-1].tolist())
        self._cdf = [self._refined_cdf(v) for v in self.values]

    def _refined_cdf(self, values):
        fine = np.linspace(0.0, 1.0, 33)
        z = (self.grid[:-1, None] + np.diff(self.grid)[:, None] * fine[None, :-1]).ravel()
        z = np.append(z, self.grid[-1])
        f = np.interp(z, self.grid, values)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(z))])
        return z, cdf / cdf[-1]

    def pdf(self, regime, z):
        _check_regime(regime)
        return np.interp(np.asarray(z, dtype=np.float64), self.grid, self.values[regime - 1], left=0.0, right=0.0)

    def cdf(self, regime, z):
        _check_regime(regime)
        nodes, cdf = self._cdf[regime - 1]
        return np.interp(np.asarray(z, dtype=np.float64), nodes, cdf, left=0.0, right=1.0)

    def sample(self, regime, size, rng):
        _check_regime(regime)
        z, cdf = self._cdf[regime - 1]
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return np.interp(rng.random(size), cdf[keep], z[keep])

    def truncation(self, tail_mass):
        return self.support

    def params(self):
        return {'grid': self.grid.tolist(), 'f1': self.values[0].tolist(), 'f2': self.values[1].tolist()}

    def identical(self):
        return bool(np.array_equal(self.values[0], self.values[1]))

    def same_support(self):
        # Linear interpolation: positivity on each cell is decided by its end nodes.
        cells = [(v[:-1] > 0) | (v[1:] > 0) for v in self.values]
        return bool(np.array_equal(cells[0], cells[1]))


FAMILIES = {
    'gaussian': GaussianFamily,
    'gaussian_mixture': GaussianMixtureFamily,
    'mixture_gamma': MixtureGammaFamily,
    'tabulated': TabulatedFamily,
}


def build_family(name: str, params: dict) -> DensityFamily:
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise InvalidArgument(f'unknown density family {name!r}; valid: {sorted(FAMILIES)}') from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise InvalidArgument(f'bad parameters for {name}: {exc}') from None


@dataclass(frozen=True)
class SignalDensityPair:
    """Signal arrival intensity and the density pair (f1, f2).

    Attributes:
        lam (float): Poisson arrival intensity of signals (1/time).
        family (DensityFamily): The two mark densities.
        support_override (tuple): Optional explicit support interval. Both densities
            are truncated to it and renormalised, and marks are sampled from the
            truncated laws.
    """

    lam: float
    family: DensityFamily
    support_override: tuple[float, float] | None = None
    _rules: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _mass: tuple[float, float] = field(default=(1.0, 1.0), init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidArgument(f'signal intensity must be nonnegative, got {self.lam}')
        if self.support_override is not None:
            lo, hi = self.support_override
            if not lo < hi:
                raise InvalidArgument('support must satisfy low < high')
            mass = tuple(self.family.mass(regime, lo, hi) for regime in (BULL, BEAR))
            if min(mass) < MIN_SUPPORT_MASS:
                raise InvalidArgument(
                    f'support [{lo}, {hi}] keeps masses {mass[0]:.3g}, {mass[1]:.3g} of f1, f2; '
                    f'each must be at least {MIN_SUPPORT_MASS:g}'
                )
            object.__setattr__(self, '_mass', mass)

    @property
    def support(self) -> tuple[float, float]:
        return self.support_override or self.family.support

    def pdf(self, regime: int, z: ArrayLike) -> NDArray[np.float64]:
        z = np.asarray(z, dtype=np.float64)
        lo, hi = self.support
        density = self.family.pdf(regime, z)
        return np.where((z >= lo) & (z <= hi), density / self._mass[regime - 1], 0.0)

    def f1(self, z: ArrayLike) -> NDArray[np.float64]:
        return self.pdf(BULL, z)

    def f2(self, z: ArrayLike) -> NDArray[np.float64]:
        return self.pdf(BEAR, z)

    def logpdf(self, regime: int, z: ArrayLike) -> NDArray[np.float64]:
        z = np.asarray(z, dtype=np.float64)
        lo, hi = self.support
        density = self.family.logpdf(regime, z) - np.log(self._mass[regime - 1])
        return np.where((z >= lo) & (z <= hi), density, -np.inf)

    def log_ratio(self, z: ArrayLike) -> NDArray[np.float64]:
        """ln(f2 / f1) inside the support; nan where both densities vanish."""
        with np.errstate(invalid='ignore'):
            return self.logpdf(BEAR, z) - self.logpdf(BULL, z)

    def sample(self, regime: int, size: int, rng: np.random.Generator) -> NDArray[np.float64]:
        """Draw `size` marks of regime `regime`, restricted to the support by rejection."""
        if self.support_override is None:
            return self.family.sample(regime, size, rng)
        _check_regime(regime)
        lo, hi = self.support_override
        mass = self._mass[regime - 1]
        kept = [np.empty(0)]
        missing = size
        while missing > 0:
            draws = self.family.sample(regime, int(np.ceil(1.2 * missing / mass)) + 16, rng)
            draws = draws[(draws >= lo) & (draws <= hi)][:missing]
            kept.append(draws)
            missing -= draws.size
        return np.concatenate(kept)

    def sample_mixture(self, x: ArrayLike, rng: np.random.Generator) -> NDArray[np.float64]:
        """Draw one mark per entry of `x` from x f1 + (1 - x) f2.

        A Bernoulli(x) flip picks the regime, then the chosen density is sampled.
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        bull = rng.random(x.size) < x
        marks = np.empty(x.size)
        n_bull = int(bull.sum())
        marks[bull] = self.sample(BULL, n_bull, rng)
        marks[~bull] = self.sample(BEAR, x.size - n_bull, rng)
        return marks

    @property
    def uninformative(self) -> bool:
        return self.family.identical()

    def check_support(self) -> None:
        if not self.family.same_support():
            raise SupportMismatch(f'{self.family.name} densities do not share the same support')

    def quadrature(self, n_nodes: int = DEFAULT_QUAD_NODES, tail_mass: float = TAIL_MASS) -> QuadratureRule:
        """Composite Gauss-Legendre rule on the truncated mark domain (cached)."""
        key = (n_nodes, tail_mass)
        rule = self._rules.get(key)
        if rule is None:
            lo, hi = self.family.truncation(tail_mass)
            s_lo, s_hi = self.support
            lo, hi = max(lo, s_lo), min(hi, s_hi)
            rule = composite_rule(
                lo, hi, n_nodes,
                breakpoints=self.family.breakpoints,
                singular=self.family.singular,
                tail_mass=tail_mass,
            )
            self._rules[key] = rule
            logger.debug('Built %d-node mark quadrature on [%.4g, %.4g]', rule.size, lo, hi)
        return rule

    def to_dict(self) -> dict:
        lo, hi = self.support
        return {
            'lambda': self.lam,
            'family': self.family.name,
            'params': self.family.params(),
            'support': [None if np.isinf(lo) else lo, None if np.isinf(hi) else hi],
        }
