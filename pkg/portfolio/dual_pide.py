"""
Dual HJB PIDE for the auxiliary value Lambda(t, x) on [0, T] x [0, 1].

    d_t L + mu_bar d_x L + 1/2 sigma_bar^2 d_xx L - d0 L + I_beta[L] + 1 = 0,   L(T, .) = 1

The local part is stepped implicitly (upwind drift, central diffusion,
discount) with one tridiagonal solve per time step; the nonlocal signal term
and the source are explicit. The filter boundaries x = 0 and x = 1 are never
reached, so no boundary condition is imposed there: the diffusion vanishes and
the drift points inward, which the one-sided upwind stencil respects.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, solve_banded

from .constants import (
    BOUND_TOL,
    DEFAULT_QUAD_NODES,
    EPS_POS,
    MIN_GRID_NX,
    NONLOCAL_STABILITY,
    TAIL_MASS,
)
from .exceptions import (
    BoundViolation,
    InvalidArgument,
    PositivityViolation,
    SolverSingular,
)
from .filtering import xi
from .market_signal import ModelConfig, f_hat, theta_hat
from .quadrature import NODES_PER_PANEL, QuadratureRule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PideConfig:
    """
    Grid and quadrature settings of the dual solver.

    Attributes:
        n_x (int): Number of x intervals; the grid has n_x + 1 nodes on [0, 1].
        n_t (int): Number of time steps on [0, T].
        n_q (int): Quadrature nodes for the mark integral.
        tail_mass (float): Mass of either density left outside the mark domain.
        m_clamp (float | None): Optional clamp on the dual control.
        eps_pos (float): Positivity floor before fractional powers.
        bounds_theta (str): 'max' uses max(theta1^2, theta2^2) in the analytic
            bounds, 'first' uses theta1^2.
        bound_tol (float): Slack on the uniform bounds.
    """

    n_x: int = 101
    n_t: int = 2000
    n_q: int = DEFAULT_QUAD_NODES
    tail_mass: float = TAIL_MASS
    m_clamp: float | None = None
    eps_pos: float = EPS_POS
    bounds_theta: str = 'max'
    bound_tol: float = BOUND_TOL

    def __post_init__(self):
        if self.n_x < MIN_GRID_NX:
            raise InvalidArgument(f'n_x must be at least {MIN_GRID_NX}, got {self.n_x}')
        if self.n_t < 1:
            raise InvalidArgument('n_t must be positive')
        if self.n_q < NODES_PER_PANEL:
            raise InvalidArgument(f'n_q must be at least {NODES_PER_PANEL}, got {self.n_q}')
        if self.m_clamp is not None and not self.m_clamp > 0:
            raise InvalidArgument('m_clamp must be positive')
        if self.bounds_theta not in ('max', 'first'):
            raise InvalidArgument(f'unknown bounds_theta {self.bounds_theta!r}')
        if not self.eps_pos > 0:
            raise InvalidArgument('eps_pos must be positive')

    def to_dict(self) -> dict:
        return {
            'n_x': self.n_x,
            'n_t': self.n_t,
            'n_q': self.n_q,
            'tail_mass': self.tail_mass,
            'm_clamp': self.m_clamp,
            'eps_pos': self.eps_pos,
            'bounds_theta': self.bounds_theta,
            'bound_tol': self.bound_tol,
        }


def coefficients(x: ArrayLike, model: ModelConfig):
    """Drift mu_bar, diffusion sigma_bar and discount d0 of the dual filter dynamics."""
    x = np.asarray(x, dtype=np.float64)
    regime, market = model.regime, model.market
    beta = model.utility.beta
    th = theta_hat(x, market)
    sigma_bar = x * (1.0 - x) * (market.theta1 - market.theta2)
    mu_bar = regime.a2 - regime.total * x - beta * sigma_bar * th
    risk = th * th if model.d0_form == 'squared' else th
    d0 = beta * market.r + 0.5 * beta * (1.0 - beta) * risk
    return mu_bar, sigma_bar, d0


def _discount_rate(model: ModelConfig, bounds_theta: str = 'max') -> float:
    market = model.market
    theta_sq = market.theta_max_sq if bounds_theta == 'max' else market.theta1 ** 2
    beta = model.utility.beta
    return beta * (market.r + 0.5 * (1.0 - beta) * theta_sq)


def slice_bounds(model: ModelConfig, tau: ArrayLike, bounds_theta: str = 'max'):
    """Analytic bounds of Lambda at time-to-go `tau`."""
    tau = np.asarray(tau, dtype=np.float64)
    c = _discount_rate(model, bounds_theta)
    envelope = np.exp(-c * tau) * (1.0 + tau)
    if model.utility.kappa < 0:
        return envelope, 1.0 + tau
    return np.ones_like(tau), envelope


def bounds(model: ModelConfig, bounds_theta: str = 'max') -> tuple[float, float]:
    """Uniform bounds (C_l, C_u) over [0, T] x [0, 1]."""
    T = model.horizon
    c = _discount_rate(model, bounds_theta)
    envelope = float(np.exp(-c * T) * (1.0 + T))
    if model.utility.kappa < 0:
        # Lambda(T, .) = 1, so the lower bound can never exceed 1.
        return min(1.0, envelope), 1.0 + T
    return 1.0, envelope


def minimal_clamp(model: ModelConfig, config: PideConfig | None = None) -> float:
    """Smallest clamp level that can never bind: ln(C_u / C_l) / (1 - beta)."""
    c_l, c_u = bounds(model, (config or PideConfig()).bounds_theta)
    return float(np.log(c_u / c_l) / (1.0 - model.utility.beta))


def _grid_positions(x: NDArray[np.float64], n_x: int):
    """Cell index and fraction of `x` on the uniform grid of [0, 1]."""
    pos = x * n_x
    snapped = np.rint(pos)
    pos = np.where(np.abs(pos - snapped) < 1e-9, snapped, pos)
    idx = np.clip(np.floor(pos).astype(np.int64), 0, n_x - 1)
    return idx, pos - idx


def _interp(u: NDArray[np.float64], idx, frac):
    # A flat slice interpolates to exactly the same value.
    return u[..., idx] + frac * (u[..., idx + 1] - u[..., idx])


class NonlocalOperator:
    """
    Signal integral on a fixed set of filter points.

    For every point x_j and mark node z_q it stores where xi(x_j, z_q) falls on
    the solver grid and the weight w_q f_hat(x_j, z_q), so that any slice of
    the value surface can be integrated against the mixture density.
    """

    def __init__(self, model: ModelConfig, x: ArrayLike, n_x: int, rule: QuadratureRule):
        self.model = model
        self.x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        self.n_x = n_x
        self.rule = rule
        self.beta = model.utility.beta
        self.lam = model.signal.lam
        self.active = self.lam > 0 and not model.signal.uninformative
        z = rule.nodes[None, :]
        xs = self.x[:, None]
        mixture = f_hat(xs, z, model.signal)
        raw = mixture * rule.weights
        # Renormalised on the truncated mark domain: a zero control integrates to lambda.
        self.weights = raw / raw.sum(axis=1, keepdims=True)
        self.home_idx, self.home_frac = _grid_positions(self.x, n_x)
        if self.active:
            # xi(x, z) where the mixture is positive; those nodes carry no weight otherwise.
            live = mixture > 0
            post = np.where(live, model.signal.f1(z) * xs / np.where(live, mixture, 1.0), xs)
            self.idx, self.frac = _grid_positions(np.clip(post, 0.0, 1.0), n_x)
        else:
            self.idx = np.broadcast_to(self.home_idx[:, None], self.weights.shape)
            self.frac = np.broadcast_to(self.home_frac[:, None], self.weights.shape)

    @classmethod
    def on_grid(cls, model: ModelConfig, config: PideConfig) -> 'NonlocalOperator':
        rule = model.signal.quadrature(config.n_q, config.tail_mass)
        return cls(model, np.linspace(0.0, 1.0, config.n_x + 1), config.n_x, rule)

    def home(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Slice values at the operator's own points."""
        return _interp(u, self.home_idx, self.home_frac)

    def log_ratio(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """ln(L(xi(x_j, z_q)) / L(x_j)) for a grid slice (or a stack of slices)."""
        if not self.active:
            return np.zeros(u.shape[:-1] + self.weights.shape)
        post = _interp(u, self.idx, self.frac)
        return np.log(post) - np.log(self.home(u))[..., None]

    def integrate(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """lambda * sum_q w_q f_hat(x_j, z_q) values[..., j, q]."""
        return self.lam * np.sum(values * self.weights, axis=-1)

    def apply(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """I_beta of the slice `u` at the operator's points."""
        if not self.active:
            return np.zeros(u.shape[:-1] + self.x.shape)
        gain = np.expm1(self.log_ratio(u) / (1.0 - self.beta))
        return (1.0 - self.beta) * self.home(u) * self.integrate(gain)


def _check_positive(u: NDArray[np.float64], eps_pos: float, t: float | None = None) -> None:
    low = int(np.argmin(u))
    if u[low] < eps_pos:
        x = low / (u.size - 1)
        raise PositivityViolation(np.nan if t is None else t, x, float(u[low]))


def i_beta(
    values: ArrayLike,
    x: ArrayLike,
    model: ModelConfig,
    n_q: int = DEFAULT_QUAD_NODES,
    tail_mass: float = TAIL_MASS,
    eps_pos: float = EPS_POS,
) -> NDArray[np.float64]:
    """
    Nonlocal term of the PIDE for one slice.

    `values` holds L(t, .) on the uniform grid of [0, 1]; L at xi(x, z) is
    obtained by linear interpolation.
    """
    u = np.asarray(values, dtype=np.float64)
    if u.ndim != 1 or u.size < 2:
        raise InvalidArgument('values must be a slice on a uniform grid of [0, 1]')
    _check_positive(u, eps_pos)
    rule = model.signal.quadrature(n_q, tail_mass)
    return NonlocalOperator(model, x, u.size - 1, rule).apply(u)


class HjbStepper:
    """Backward IMEX step on a fixed grid; the banded matrix is built once."""

    def __init__(self, model: ModelConfig, config: PideConfig, dt: float, operator: NonlocalOperator | None = None):
        self.model = model
        self.config = config
        self.dt = dt
        self.x = np.linspace(0.0, 1.0, config.n_x + 1)
        self.operator = operator or NonlocalOperator.on_grid(model, config)
        self.banded = self._assemble()

    def _assemble(self) -> NDArray[np.float64]:
        n = self.x.size
        dx = 1.0 / self.config.n_x
        mu, sigma, d0 = coefficients(self.x, self.model)
        diff = 0.5 * sigma * sigma / (dx * dx)
        forward = mu > 0
        forward[0], forward[-1] = True, False
        drift = np.abs(mu) / dx

        lower = diff + np.where(forward, 0.0, drift)
        upper = diff + np.where(forward, drift, 0.0)
        centre = -2.0 * diff - drift - d0
        lower[0] = upper[-1] = 0.0

        ab = np.zeros((3, n))
        ab[0, 1:] = -self.dt * upper[:-1]
        ab[1] = 1.0 - self.dt * centre
        ab[2, :-1] = -self.dt * lower[1:]
        return ab

    def step(self, u_next: NDArray[np.float64], t: float | None = None) -> NDArray[np.float64]:
        _check_positive(u_next, self.config.eps_pos, t)
        rhs = u_next + self.dt * (self.operator.apply(u_next) + 1.0)
        try:
            u = solve_banded((1, 1), self.banded, rhs)
        except (LinAlgError, ValueError) as exc:
            raise SolverSingular(f'tridiagonal solve failed at t={t}: {exc}') from exc
        if not np.all(np.isfinite(u)):
            raise SolverSingular(f'tridiagonal solve produced non-finite values at t={t}')
        return u


def hjb_step(
    u_next: ArrayLike,
    model: ModelConfig,
    config: PideConfig,
    dt: float | None = None,
) -> NDArray[np.float64]:
    """One backward step from t_{i+1} to t_i = t_{i+1} - dt."""
    u_next = np.asarray(u_next, dtype=np.float64)
    if u_next.shape != (config.n_x + 1,):
        raise InvalidArgument(f'slice must have {config.n_x + 1} nodes')
    dt = model.horizon / config.n_t if dt is None else dt
    return HjbStepper(model, config, dt).step(u_next)


def stability_number(model: ModelConfig, config: PideConfig) -> float:
    """dt * lambda * (1 - beta) * gain, the budget of the explicit nonlocal term."""
    beta = model.utility.beta
    c_l, c_u = bounds(model, config.bounds_theta)
    gain = (c_u / c_l) ** (1.0 / (1.0 - beta))
    return model.horizon / config.n_t * model.signal.lam * (1.0 - beta) * gain


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """
    Lambda(t_i, x_j) on uniform grids, t ascending.

    Attributes:
        t (ndarray): n_t + 1 time nodes.
        x (ndarray): n_x + 1 filter nodes.
        values (ndarray): Shape (n_t + 1, n_x + 1); the last row is the terminal slice.
        model (ModelConfig): Instance the surface was solved for.
        config (PideConfig): Grid settings.
        meta (dict): Bounds check and solver diagnostics.
    """

    t: NDArray[np.float64]
    x: NDArray[np.float64]
    values: NDArray[np.float64]
    model: ModelConfig
    config: PideConfig
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n_t(self) -> int:
        return self.t.size - 1

    @property
    def n_x(self) -> int:
        return self.x.size - 1

    def _time_positions(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any((t < -1e-12) | (t > self.t[-1] + 1e-12)):
            raise InvalidArgument(f'time outside [0, {self.t[-1]}]')
        pos = np.clip(t / self.dt, 0.0, self.n_t)
        snapped = np.rint(pos)
        pos = np.where(np.abs(pos - snapped) < 1e-9, snapped, pos)
        i = np.clip(np.floor(pos).astype(np.int64), 0, self.n_t - 1)
        return i, pos - i

    def at(self, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        """Bilinear interpolation; `t` and `x` broadcast against each other."""
        x = np.asarray(x, dtype=np.float64)
        if np.any((x < 0.0) | (x > 1.0)):
            raise InvalidArgument('filter value must lie in [0, 1]')
        i, wt = self._time_positions(t)
        j, wx = _grid_positions(x, self.n_x)
        v = self.values
        now = v[i, j] + wx * (v[i, j + 1] - v[i, j])
        later = v[i + 1, j] + wx * (v[i + 1, j + 1] - v[i + 1, j])
        return now + wt * (later - now)

    def slice_at(self, t: float) -> NDArray[np.float64]:
        """The x-slice at time t, linear in t between grid rows."""
        i, wt = self._time_positions(t)
        i, wt = int(i), float(wt)
        return self.values[i] + wt * (self.values[i + 1] - self.values[i])

    def clamp_activations(self, m_clamp: float) -> int:
        """Count (t, x, mark) grid triples where |nu_hat| exceeds `m_clamp`."""
        operator = NonlocalOperator.on_grid(self.model, self.config)
        if not operator.active:
            return 0
        scale = 1.0 - self.model.utility.beta
        count = 0
        for row in self.values:
            count += int(np.count_nonzero(np.abs(operator.log_ratio(row) / scale) > m_clamp))
        return count

    def to_dict(self) -> dict:
        return {
            'n_t': self.n_t,
            'n_x': self.n_x,
            'horizon': float(self.t[-1]),
            'meta': self.meta,
        }


def solve_lambda(model: ModelConfig, config: PideConfig | None = None) -> ValueSurface:
    """
    Sweep backward from L(T, .) = 1 to t = 0.

    Raises:
        SupportMismatch: f1 and f2 do not share a support.
        InvalidArgument: The time step breaks the explicit nonlocal budget.
        PositivityViolation, BoundViolation: The surface left its analytic range.
    """
    config = config or PideConfig()
    model.signal.check_support()
    stability = stability_number(model, config)
    if stability > NONLOCAL_STABILITY:
        needed = int(np.ceil(config.n_t * stability / NONLOCAL_STABILITY))
        raise InvalidArgument(
            f'dt * lambda * (1 - beta) * gain = {stability:.3g} exceeds {NONLOCAL_STABILITY}; use n_t >= {needed}'
        )

    started = time.perf_counter()
    T = model.horizon
    t = np.linspace(0.0, T, config.n_t + 1)
    x = np.linspace(0.0, 1.0, config.n_x + 1)
    dt = T / config.n_t
    c_l, c_u = bounds(model, config.bounds_theta)
    tol = config.bound_tol

    stepper = HjbStepper(model, config, dt)
    values = np.empty((t.size, x.size))
    values[-1] = 1.0
    slice_breaches = 0
    for i in range(config.n_t - 1, -1, -1):
        u = stepper.step(values[i + 1], t[i + 1])
        _check_positive(u, config.eps_pos, t[i])
        outside = (u < c_l - tol) | (u > c_u + tol)
        if np.any(outside):
            j = int(np.flatnonzero(outside)[0])
            raise BoundViolation(t[i], x[j], float(u[j]), c_l, c_u)
        lo, hi = slice_bounds(model, T - t[i], config.bounds_theta)
        slice_breaches += int(np.count_nonzero((u < lo - tol) | (u > hi + tol)))
        values[i] = u

    meta = {
        'C_l': c_l,
        'C_u': c_u,
        'min': float(values.min()),
        'max': float(values.max()),
        'bounds_ok': True,
        'slice_bound_breaches': slice_breaches,
        'stability': stability,
        'dt': dt,
        'quadrature': stepper.operator.rule.metadata(),
        'config': config.to_dict(),
        'elapsed': time.perf_counter() - started,
    }
    surface = ValueSurface(t, x, values, model, config, meta)
    if config.m_clamp is not None:
        meta['clamp_activations'] = surface.clamp_activations(config.m_clamp)
    logger.info(
        'Solved dual PIDE on %dx%d grid in %.2fs: Lambda in [%.6g, %.6g], bounds [%.6g, %.6g]',
        config.n_t + 1, config.n_x + 1, meta['elapsed'], meta['min'], meta['max'], c_l, c_u,
    )
    if slice_breaches:
        logger.warning('%d nodes outside the time-resolved bounds', slice_breaches)
    return surface


def nu_hat(surface: ValueSurface, t: ArrayLike, x: ArrayLike, z: ArrayLike, m_clamp: float | None = None):
    """Dual control ln(L(t, xi(x, z)) / L(t, x)) / (1 - beta), optionally clamped."""
    nu, _ = select_nu(surface, t, x, z, m_clamp)
    return nu


def select_nu(surface: ValueSurface, t: ArrayLike, x: ArrayLike, z: ArrayLike, m_clamp: float | None = None):
    """Return the dual control and the mask of clamp activations."""
    model = surface.model
    x = np.asarray(x, dtype=np.float64)
    post = xi(x, z, model.signal)
    raw = (np.log(surface.at(t, post)) - np.log(surface.at(t, x))) / (1.0 - model.utility.beta)
    if m_clamp is None:
        return raw, np.zeros(np.shape(raw), dtype=bool)
    return np.clip(raw, -m_clamp, m_clamp), np.abs(raw) > m_clamp


def merton_oracle(t: ArrayLike, model: ModelConfig) -> NDArray[np.float64]:
    """Closed-form Lambda on a degenerate instance (equal drifts, identical densities)."""
    if not model.degenerate:
        raise InvalidArgument('merton_oracle needs theta1 == theta2 and f1 == f2')
    t = np.asarray(t, dtype=np.float64)
    tau = model.horizon - t
    d0 = float(coefficients(0.5, model)[2])
    if d0 == 0.0:
        return 1.0 + tau
    return -np.expm1(-d0 * tau) / d0 + np.exp(-d0 * tau)
