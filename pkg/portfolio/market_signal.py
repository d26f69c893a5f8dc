"""
Problem instance and full-information market simulation.

The hidden regime is a two-state continuous-time chain (1 = bull, 2 = bear), the
risky asset is a geometric Brownian motion whose drift follows the regime, and
expert-opinion signals arrive as a Poisson stream whose marks are drawn from the
density of the regime in force at arrival.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .constants import BEAR, BULL
from .densities import SignalDensityPair
from .exceptions import InvalidArgument

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegimeParams:
    """Transition rates of the hidden chain.

    Attributes:
        a1 (float): Rate bull -> bear.
        a2 (float): Rate bear -> bull.
    """

    a1: float
    a2: float

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise InvalidArgument(f'regime rates must be positive, got a1={self.a1}, a2={self.a2}')

    @property
    def total(self) -> float:
        return self.a1 + self.a2

    @property
    def stationary_bull(self) -> float:
        return self.a2 / self.total

    def generator(self) -> NDArray[np.float64]:
        return np.array([[-self.a1, self.a1], [self.a2, -self.a2]])


@dataclass(frozen=True)
class MarketParams:
    """Drifts per regime, volatility and risk-free rate."""

    mu1: float
    mu2: float
    sigma: float
    r: float

    def __post_init__(self):
        # mu1 == mu2 is kept legal: it is the degenerate (Merton) instance.
        if self.mu1 < self.mu2:
            raise InvalidArgument('bull drift mu1 must not be below bear drift mu2')
        if self.sigma <= 0:
            raise InvalidArgument('volatility sigma must be positive')
        if self.r <= 0:
            raise InvalidArgument('risk-free rate r must be positive')

    @property
    def theta1(self) -> float:
        return (self.mu1 - self.r) / self.sigma

    @property
    def theta2(self) -> float:
        return (self.mu2 - self.r) / self.sigma

    @property
    def theta_max_sq(self) -> float:
        return max(self.theta1 ** 2, self.theta2 ** 2)

    def drift(self, regime: ArrayLike) -> NDArray[np.float64]:
        return np.where(np.asarray(regime) == BULL, self.mu1, self.mu2)


@dataclass(frozen=True)
class UtilityParams:
    """CRRA utility c**kappa / kappa."""

    kappa: float

    def __post_init__(self):
        if self.kappa == 0 or self.kappa >= 1:
            raise InvalidArgument(f'kappa must satisfy kappa < 1 and kappa != 0, got {self.kappa}')

    @property
    def beta(self) -> float:
        return -self.kappa / (1.0 - self.kappa)

    def utility(self, c: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(c, dtype=np.float64) ** self.kappa / self.kappa


@dataclass(frozen=True)
class ModelConfig:
    """A complete problem instance.

    Attributes:
        regime, market, signal, utility: The model blocks.
        horizon (float): Investment horizon T.
        x0 (float): Initial filter value.
        v0 (float): Initial wealth.
        s0 (float): Initial asset price.
        regime_prior (float | None): Probability that the true chain starts in the
            bull state; None means x0 (a correctly initialised filter).
        d0_form (str): 'squared' uses theta_hat(x)**2 in the discount coefficient,
            'literal' uses theta_hat(x).
        hedge_form (str): 'filtered' or 'literal' investment feedback.
    """

    regime: RegimeParams
    market: MarketParams
    signal: SignalDensityPair
    utility: UtilityParams
    horizon: float
    x0: float
    v0: float = 1.0
    s0: float = 1.0
    regime_prior: float | None = None
    d0_form: str = 'squared'
    hedge_form: str = 'filtered'

    def __post_init__(self):
        if self.horizon <= 0:
            raise InvalidArgument('horizon must be positive')
        if not 0.0 <= self.x0 <= 1.0:
            raise InvalidArgument('x0 must lie in [0, 1]')
        if self.v0 <= 0 or self.s0 <= 0:
            raise InvalidArgument('initial wealth and asset price must be positive')
        if self.regime_prior is not None and not 0.0 <= self.regime_prior <= 1.0:
            raise InvalidArgument('regime_prior must lie in [0, 1]')
        if self.d0_form not in ('squared', 'literal'):
            raise InvalidArgument(f'unknown d0_form {self.d0_form!r}')
        if self.hedge_form not in ('filtered', 'literal'):
            raise InvalidArgument(f'unknown hedge_form {self.hedge_form!r}')

    @property
    def initial_bull_prob(self) -> float:
        return self.x0 if self.regime_prior is None else self.regime_prior

    @property
    def degenerate(self) -> bool:
        """True for the Merton instance: equal drifts and identical densities."""
        return self.market.theta1 == self.market.theta2 and self.signal.uninformative

    def to_dict(self) -> dict:
        return {
            'regime': {'a1': self.regime.a1, 'a2': self.regime.a2},
            'market': {
                'mu1': self.market.mu1,
                'mu2': self.market.mu2,
                'sigma': self.market.sigma,
                'r': self.market.r,
            },
            'signal': self.signal.to_dict(),
            'utility': {'kappa': self.utility.kappa},
            'horizon': self.horizon,
            'x0': self.x0,
            'v0': self.v0,
            's0': self.s0,
            'regime_prior': self.regime_prior,
            'd0_form': self.d0_form,
            'hedge_form': self.hedge_form,
        }


@dataclass(frozen=True)
class RegimePath:
    """Piecewise-constant regime path: `states[k]` holds on [times[k], times[k+1])."""

    times: NDArray[np.float64]
    states: NDArray[np.int8]
    horizon: float

    @property
    def switches(self) -> int:
        return self.times.size - 1

    def state_at(self, t: ArrayLike) -> NDArray[np.int8]:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side='right') - 1
        return self.states[np.clip(idx, 0, self.states.size - 1)]

    def occupation(self, t: ArrayLike) -> NDArray[np.float64]:
        """Time spent in the bull state on [0, t]."""
        t = np.asarray(t, dtype=np.float64)
        ends = np.append(self.times[1:], np.inf)
        spent = np.clip(t[..., None] - self.times, 0.0, ends - self.times)
        return spent @ (self.states == BULL).astype(np.float64)


@dataclass
class WorldPath:
    """One simulated trajectory bundle on a uniform grid.

    `pi` and `innovations` stay None until the filter has been run.
    """

    t: NDArray[np.float64]
    alpha: NDArray[np.int8]
    S: NDArray[np.float64]
    dW: NDArray[np.float64]
    event_time: NDArray[np.float64]
    event_mark: NDArray[np.float64]
    pi: NDArray[np.float64] | None = None
    innovations: NDArray[np.float64] | None = None

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def events(self) -> list[tuple[float, float]]:
        return list(zip(self.event_time.tolist(), self.event_mark.tolist()))


@dataclass
class WorldBatch:
    """Many independent world paths sharing one grid.

    Signal events are stored flat, sorted by (step, path, time). An event at
    time tau is applied at grid node ceil(tau / dt); `event_rank` orders events
    of one path that fall into the same step.
    """

    t: NDArray[np.float64]
    alpha: NDArray[np.int8]
    S: NDArray[np.float64]
    dW: NDArray[np.float64]
    bull_time: NDArray[np.float64]
    event_path: NDArray[np.int64]
    event_step: NDArray[np.int64]
    event_time: NDArray[np.float64]
    event_mark: NDArray[np.float64]
    event_rank: NDArray[np.int64]
    pi: NDArray[np.float64] | None = None
    innovations: NDArray[np.float64] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return int(self.S.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.t.size - 1)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def path(self, i: int) -> WorldPath:
        mine = self.event_path == i
        order = np.argsort(self.event_time[mine], kind='stable')
        return WorldPath(
            t=self.t,
            alpha=self.alpha[i],
            S=self.S[i],
            dW=self.dW[i],
            event_time=self.event_time[mine][order],
            event_mark=self.event_mark[mine][order],
            pi=None if self.pi is None else self.pi[i],
            innovations=None if self.innovations is None else self.innovations[i],
        )


def theta_hat(x: ArrayLike, market: MarketParams) -> NDArray[np.float64]:
    """Filtered market price of risk x theta1 + (1 - x) theta2."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0.0) | (x > 1.0)):
        raise InvalidArgument('filter value must lie in [0, 1]')
    return x * market.theta1 + (1.0 - x) * market.theta2


def f_hat(x: ArrayLike, z: ArrayLike, densities: SignalDensityPair) -> NDArray[np.float64]:
    """Mixture density f1(z) x + f2(z) (1 - x); zero outside the support."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0.0) | (x > 1.0)):
        raise InvalidArgument('filter value must lie in [0, 1]')
    return densities.f1(z) * x + densities.f2(z) * (1.0 - x)


def time_grid(horizon: float, dt: float) -> NDArray[np.float64]:
    if horizon <= 0:
        raise InvalidArgument('horizon must be positive')
    if dt <= 0 or dt > horizon:
        raise InvalidArgument(f'dt must lie in (0, horizon], got {dt}')
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * horizon:
        raise InvalidArgument(f'horizon {horizon} is not an integral multiple of dt {dt}')
    return np.linspace(0.0, horizon, n_steps + 1)


def _switch_times(
    regime: RegimeParams,
    horizon: float,
    initial: NDArray[np.int8],
    rng: np.random.Generator,
) -> NDArray[np.float64]:
    """Switch times per path, padded with +inf, drawn from exponential holding times."""
    n = initial.size
    columns = []
    clock = np.zeros(n)
    state = initial.copy()
    while np.any(clock < horizon):
        rate = np.where(state == BULL, regime.a1, regime.a2)
        clock = clock + rng.exponential(1.0, n) / rate
        columns.append(np.where(clock <= horizon, clock, np.inf))
        state = np.where(state == BULL, BEAR, BULL).astype(np.int8)
    if not columns:
        return np.full((n, 0), np.inf)
    return np.stack(columns, axis=1)


def _initial_states(model: ModelConfig, n: int, rng: np.random.Generator) -> NDArray[np.int8]:
    return np.where(rng.random(n) < model.initial_bull_prob, BULL, BEAR).astype(np.int8)


def simulate_regime(
    regime: RegimeParams,
    horizon: float,
    rng: np.random.Generator,
    initial_state: int = BULL,
) -> RegimePath:
    """Simulate one regime path event-exactly on [0, horizon]."""
    if horizon <= 0:
        raise InvalidArgument('horizon must be positive')
    if initial_state not in (BULL, BEAR):
        raise InvalidArgument('initial_state must be 1 or 2')
    switches = _switch_times(regime, horizon, np.array([initial_state], dtype=np.int8), rng)[0]
    switches = switches[np.isfinite(switches)]
    times = np.concatenate([[0.0], switches])
    states = np.where(np.arange(times.size) % 2 == 0, initial_state, 3 - initial_state).astype(np.int8)
    return RegimePath(times, states, horizon)


def _segment_scan(switches, initial, grid):
    """Regime at each grid node and cumulative bull occupation, per path."""
    n = initial.size
    starts = np.concatenate([np.zeros((n, 1)), switches], axis=1)
    ends = np.concatenate([switches, np.full((n, 1), np.inf)], axis=1)
    alpha = np.empty((n, grid.size), dtype=np.int8)
    occupation = np.zeros((n, grid.size))
    for j in range(starts.shape[1]):
        state = initial if j % 2 == 0 else (3 - initial)
        a, b = starts[:, j:j + 1], ends[:, j:j + 1]
        inside = (grid >= a) & (grid < b)
        alpha = np.where(inside, state[:, None], alpha)
        bull = (state == BULL)[:, None]
        length = np.where(np.isfinite(a), b - a, 0.0)
        occupation += np.where(bull, np.clip(grid - a, 0.0, length), 0.0)
    return alpha, occupation


def simulate_world_batch(
    model: ModelConfig,
    horizon: float,
    dt: float,
    rng: np.random.Generator,
    n_paths: int,
) -> WorldBatch:
    """Simulate `n_paths` independent worlds under the physical measure.

    Randomness comes from four substreams spawned from `rng` (regime, Brownian,
    arrivals, marks), so changing the signal intensity leaves the Brownian and
    regime paths untouched.
    """
    if n_paths < 1:
        raise InvalidArgument('n_paths must be positive')
    grid = time_grid(horizon, dt)
    n_steps = grid.size - 1
    step = horizon / n_steps
    regime_rng, brownian_rng, arrival_rng, mark_rng = rng.spawn(4)

    initial = _initial_states(model, n_paths, regime_rng)
    switches = _switch_times(model.regime, horizon, initial, regime_rng)
    alpha, occupation = _segment_scan(switches, initial, grid)
    bull_time = np.diff(occupation, axis=1)

    market = model.market
    dW = brownian_rng.normal(0.0, np.sqrt(step), (n_paths, n_steps))
    drift = market.mu1 * bull_time + market.mu2 * (step - bull_time) - 0.5 * market.sigma ** 2 * step
    log_s = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(drift + market.sigma * dW, axis=1)], axis=1)
    S = model.s0 * np.exp(log_s)

    counts = arrival_rng.poisson(model.signal.lam * horizon, n_paths)
    event_path = np.repeat(np.arange(n_paths), counts)
    event_time = arrival_rng.uniform(0.0, horizon, event_path.size)
    order = np.lexsort((event_time, event_path))
    event_path, event_time = event_path[order], event_time[order]

    regime_at_event = initial[event_path].copy()
    if switches.shape[1]:
        passed = (switches[event_path] <= event_time[:, None]).sum(axis=1)
        regime_at_event = np.where(passed % 2 == 0, regime_at_event, 3 - regime_at_event).astype(np.int8)
    event_mark = np.empty(event_path.size)
    for regime in (BULL, BEAR):
        sel = regime_at_event == regime
        event_mark[sel] = model.signal.sample(regime, int(sel.sum()), mark_rng)

    event_step = np.clip(np.ceil(event_time / step - 1e-12).astype(np.int64), 1, n_steps)
    order = np.lexsort((event_time, event_path, event_step))
    event_path, event_step = event_path[order], event_step[order]
    event_time, event_mark = event_time[order], event_mark[order]
    event_rank = _ranks(event_path, event_step)

    logger.debug(
        'Simulated %d worlds, %d steps, %d signal events', n_paths, n_steps, event_path.size
    )
    return WorldBatch(
        t=grid,
        alpha=alpha,
        S=S,
        dW=dW,
        bull_time=bull_time,
        event_path=event_path,
        event_step=event_step,
        event_time=event_time,
        event_mark=event_mark,
        event_rank=event_rank,
        meta={'switches': int(np.isfinite(switches).sum())},
    )


def _ranks(paths: NDArray[np.int64], steps: NDArray[np.int64]) -> NDArray[np.int64]:
    """Position of each event among events sharing its (step, path); input sorted."""
    if paths.size == 0:
        return np.zeros(0, dtype=np.int64)
    new_group = np.ones(paths.size, dtype=bool)
    new_group[1:] = (paths[1:] != paths[:-1]) | (steps[1:] != steps[:-1])
    starts = np.flatnonzero(new_group)
    group_start = starts[np.cumsum(new_group) - 1]
    return np.arange(paths.size) - group_start


def simulate_world(
    model: ModelConfig,
    horizon: float,
    dt: float,
    rng: np.random.Generator,
) -> WorldPath:
    """Simulate a single world path; bit-reproducible for a fixed generator seed."""
    return simulate_world_batch(model, horizon, dt, rng, 1).path(0)
