"""
Kushner-Stratonovich filter for pi_t = P[alpha_t = 1 | prices, signals].

Between signals the filter follows an Euler-Maruyama step driven by the
innovations extracted from observed returns; at each signal it jumps to the
Bayes update xi(pi-, z).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .constants import EPS_CLAMP, MAX_EVENTS_PER_STEP
from .densities import SignalDensityPair
from .exceptions import DegenerateMark, InvalidArgument
from .market_signal import ModelConfig, RegimeParams, WorldBatch, WorldPath

logger = logging.getLogger(__name__)


@dataclass
class FilterPath:
    """Filter values and innovations aligned with a world grid.

    Attributes:
        t (ndarray): Time grid.
        pi (ndarray): Filter value per node, inside [EPS_CLAMP, 1 - EPS_CLAMP].
        innovations (ndarray): Innovation increment per step.
        clamp_count (int): Number of clamp activations, post-jump clamps included.
        event_time, event_mark, event_pre, event_post (ndarray): Jump log.
            `event_post` is xi(event_pre, event_mark) clamped like every other
            filter value, so the two differ exactly where that clamp fired.
    """

    t: NDArray[np.float64]
    pi: NDArray[np.float64]
    innovations: NDArray[np.float64]
    clamp_count: int
    event_time: NDArray[np.float64]
    event_mark: NDArray[np.float64]
    event_pre: NDArray[np.float64]
    event_post: NDArray[np.float64]


@dataclass
class FilterBatch:
    pi: NDArray[np.float64]
    innovations: NDArray[np.float64]
    clamp_count: int
    event_pre: NDArray[np.float64]
    event_post: NDArray[np.float64]

    @property
    def clamp_fraction(self) -> float:
        return self.clamp_count / max(1, self.innovations.size)


def xi(x: ArrayLike, z: ArrayLike, densities: SignalDensityPair) -> NDArray[np.float64]:
    """Bayes update of the filter after a signal with mark z."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0.0) | (x > 1.0)):
        raise InvalidArgument('filter value must lie in [0, 1]')
    num = densities.f1(z) * x
    den = num + densities.f2(z) * (1.0 - x)
    if np.any(den <= 0.0):
        bad = np.broadcast_to(np.asarray(z, dtype=np.float64), den.shape)[den <= 0.0]
        raise DegenerateMark(float(bad.flat[0]))
    return num / den


def _euler(x, dW, dt, model):
    regime, market = model.regime, model.market
    raw = x + (regime.a2 - regime.total * x) * dt + x * (1.0 - x) * (market.theta1 - market.theta2) * dW
    clamped = np.clip(raw, EPS_CLAMP, 1.0 - EPS_CLAMP)
    return clamped, raw != clamped


def filter_step(x: ArrayLike, dW: ArrayLike, dt: float, model: ModelConfig) -> NDArray[np.float64]:
    """One Euler-Maruyama step of the continuous part, clamped to [EPS_CLAMP, 1 - EPS_CLAMP]."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x <= 0.0) | (x >= 1.0)):
        raise InvalidArgument('filter_step needs x in (0, 1)')
    return _euler(x, np.asarray(dW, dtype=np.float64), dt, model)[0]


def mean_filter_ode(t: ArrayLike, x0: float, regime: RegimeParams) -> NDArray[np.float64]:
    """Expected filter value: the signal compensator vanishes, leaving the linear drift ODE."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InvalidArgument('t must be nonnegative')
    decay = np.exp(-regime.total * t)
    return x0 * decay + regime.stationary_bull * (1.0 - decay)


def _check_x0(x0: float) -> None:
    if not 0.0 < x0 < 1.0:
        raise InvalidArgument(f'initial filter value must lie in (0, 1), got {x0}')


def run_filter_batch(world: WorldBatch, model: ModelConfig, x0: float) -> FilterBatch:
    """Run the filter over every path of `world` and store the result on it."""
    _check_x0(x0)
    dt = world.dt
    lam_dt = model.signal.lam * dt
    if lam_dt > MAX_EVENTS_PER_STEP:
        logger.warning('lambda*dt = %.3g exceeds %.2g; multi-event steps will be frequent', lam_dt, MAX_EVENTS_PER_STEP)

    market = model.market
    n, steps = world.n_paths, world.n_steps
    pi = np.empty((n, steps + 1))
    innovations = np.empty((n, steps))
    pi[:, 0] = x0
    pre = np.empty(world.event_path.size)
    post = np.empty(world.event_path.size)
    clamps = 0
    bounds = np.searchsorted(world.event_step, np.arange(steps + 2))

    for k in range(steps):
        x = pi[:, k]
        ret = world.S[:, k + 1] / world.S[:, k] - 1.0
        th = x * market.theta1 + (1.0 - x) * market.theta2
        dw = (ret - market.r * dt) / market.sigma - th * dt
        innovations[:, k] = dw
        nxt, hit = _euler(x, dw, dt, model)
        clamps += int(hit.sum())

        lo, hi = bounds[k + 1], bounds[k + 2]
        if hi > lo:
            ranks = world.event_rank[lo:hi]
            for rank in range(int(ranks.max()) + 1):
                idx = lo + np.flatnonzero(ranks == rank)
                who = world.event_path[idx]
                before = nxt[who]
                jumped = xi(before, world.event_mark[idx], model.signal)
                # Counted with the diffusion clamps.
                after = np.clip(jumped, EPS_CLAMP, 1.0 - EPS_CLAMP)
                clamps += int(np.count_nonzero(after != jumped))
                pre[idx], post[idx] = before, after
                nxt[who] = after
        pi[:, k + 1] = nxt

    world.pi, world.innovations = pi, innovations
    result = FilterBatch(pi, innovations, clamps, pre, post)
    logger.debug('Filtered %d paths; clamp fraction %.2e', n, result.clamp_fraction)
    return result


def run_filter(world: WorldPath, model: ModelConfig, x0: float) -> FilterPath:
    """Filter one world path; the result is also stored on `world`."""
    _check_x0(x0)
    if world.S.size != world.t.size or world.event_time.size != world.event_mark.size:
        raise InvalidArgument('world path is not populated')
    dt = world.dt
    steps = world.t.size - 1
    event_step = np.clip(np.ceil(world.event_time / dt - 1e-12).astype(np.int64), 1, steps)
    order = np.lexsort((world.event_time, event_step))
    event_step = event_step[order]
    rank = np.zeros(event_step.size, dtype=np.int64)
    for i in range(1, event_step.size):
        rank[i] = rank[i - 1] + 1 if event_step[i] == event_step[i - 1] else 0

    batch = WorldBatch(
        t=world.t,
        alpha=world.alpha[None, :],
        S=world.S[None, :],
        dW=world.dW[None, :],
        bull_time=np.zeros((1, steps)),
        event_path=np.zeros(event_step.size, dtype=np.int64),
        event_step=event_step,
        event_time=world.event_time[order],
        event_mark=world.event_mark[order],
        event_rank=rank,
    )
    result = run_filter_batch(batch, model, x0)
    world.pi, world.innovations = result.pi[0], result.innovations[0]
    return FilterPath(
        t=world.t,
        pi=result.pi[0],
        innovations=result.innovations[0],
        clamp_count=result.clamp_count,
        event_time=batch.event_time,
        event_mark=batch.event_mark,
        event_pre=result.event_pre,
        event_post=result.event_post,
    )
