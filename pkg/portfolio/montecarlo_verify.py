"""
Monte Carlo checks of a solved value surface.

Every estimator runs its paths in fixed-size blocks. Block b draws from the
b-th child of SeedSequence(seed), so a result depends on the seed, the path
count and the block size, never on how many worker threads ran the blocks.
"""

from __future__ import annotations

import logging
import time
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .constants import (
    BULL,
    DEFAULT_BLOCK_SIZE,
    DEFAULT_C_DISC,
    EPS_CLAMP,
    LOG_OVERFLOW,
    PERTURBED_INVEST_SCALE,
)
from .dual_pide import NonlocalOperator, ValueSurface, coefficients, select_nu
from .exceptions import InvalidArgument, WeightOverflow
from .filtering import run_filter_batch, xi
from .market_signal import ModelConfig, f_hat, simulate_world_batch
from .strategy_duality import StrategyField, feedback_controls, primal_value

logger = logging.getLogger(__name__)

CONTROLS = ('optimal', 'zero')
STRATEGIES = ('optimal', 'perturbed', 'zero')


@dataclass
class MCReport:
    """
    Result of one Monte Carlo check.

    Attributes:
        name (str): Estimator name.
        mean, stderr (float): Sample mean and std / sqrt(paths).
        paths (int), dt (float), seed (int): Run settings.
        target (float | None): Value the mean is compared against.
        tolerance (float | None): Allowed |mean - target|, when the check is two-sided.
        passed (bool): Verdict.
        criterion (str): The pass rule, written out.
        extra (dict): Estimator-specific diagnostics.
    """

    name: str
    mean: float
    stderr: float
    paths: int
    dt: float
    seed: int | None
    target: float | None
    tolerance: float | None
    passed: bool
    criterion: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'mean': self.mean,
            'stderr': self.stderr,
            'paths': self.paths,
            'dt': self.dt,
            'seed': self.seed,
            'target': self.target,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'criterion': self.criterion,
            'extra': self.extra,
        }


@dataclass
class DualPath:
    """One path of (pi, Z) under the observation measure, with its jump log."""

    t: NDArray[np.float64]
    pi: NDArray[np.float64]
    Z: NDArray[np.float64]
    gamma_integral: NDArray[np.float64]
    event_time: NDArray[np.float64]
    event_mark: NDArray[np.float64]
    event_pre: NDArray[np.float64]
    event_post: NDArray[np.float64]
    event_nu: NDArray[np.float64]


@dataclass
class AuxPath:
    """One reference-measure path of Upsilon with its likelihood weight Xi."""

    t: NDArray[np.float64]
    upsilon: NDArray[np.float64]
    xi: NDArray[np.float64]
    event_time: NDArray[np.float64]
    event_mark: NDArray[np.float64]
    event_pre: NDArray[np.float64]
    event_post: NDArray[np.float64]


def _summary(samples: NDArray[np.float64]) -> tuple[float, float]:
    n = samples.size
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def _root_seed(rng: np.random.Generator | int) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63 - 1))
    return int(rng)


@dataclass
class BlockRunner:
    """Runs a per-block task over `paths` paths and concatenates the results."""

    block_size: int = DEFAULT_BLOCK_SIZE
    workers: int = 1

    def __post_init__(self):
        if self.block_size < 1:
            raise InvalidArgument('block_size must be positive')

    def run(self, task: Callable[[np.random.Generator, int], dict], paths: int, seed: int) -> dict:
        if paths < 1:
            raise InvalidArgument(f'paths must be positive, got {paths}')
        n_blocks = -(-paths // self.block_size)
        sizes = [min(self.block_size, paths - b * self.block_size) for b in range(n_blocks)]
        children = np.random.SeedSequence(seed).spawn(n_blocks)

        def work(b):
            return task(np.random.default_rng(children[b]), sizes[b])

        if self.workers > 1 and n_blocks > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                parts = list(pool.map(work, range(n_blocks)))
        else:
            parts = [work(b) for b in range(n_blocks)]
        merged = {}
        for key, value in parts[0].items():
            if isinstance(value, np.ndarray):
                merged[key] = np.concatenate([p[key] for p in parts])
            else:
                merged[key] = sum(p[key] for p in parts)
        return merged


@dataclass(frozen=True, eq=False)
class CompensatorFields:
    """
    Signal integrals of a dual control, tabulated on the solver grid.

    Attributes:
        compensator: lambda int (1 - e^nu) f_hat dz, the drift correction of ln Z.
        tilt: lambda int (e^(beta nu) - 1) f_hat dz, the intensity excess of the tilted measure.
        gamma: -d0 + tilt + beta * compensator, the discount of the reweighted functional.
    """

    compensator: ValueSurface
    tilt: ValueSurface
    gamma: ValueSurface


_FIELDS: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def compensator_fields(surface: ValueSurface, control: str = 'optimal', chunk: int = 64) -> CompensatorFields:
    """Tabulate the signal integrals with the solver's own quadrature (cached per surface)."""
    if control not in CONTROLS:
        raise InvalidArgument(f'control must be one of {CONTROLS}, got {control!r}')
    cached = _FIELDS.setdefault(surface, {})
    if control in cached:
        return cached[control]

    model = surface.model
    beta = model.utility.beta
    operator = NonlocalOperator.on_grid(model, surface.config)
    d0 = coefficients(surface.x, model)[2]
    m_clamp = surface.config.m_clamp
    comp = np.empty_like(surface.values)
    tilt = np.empty_like(surface.values)
    for start in range(0, surface.values.shape[0], chunk):
        rows = surface.values[start:start + chunk]
        if control == 'optimal':
            nu = operator.log_ratio(rows) / (1.0 - beta)
            if m_clamp is not None:
                nu = np.clip(nu, -m_clamp, m_clamp)
        else:
            nu = np.zeros((rows.shape[0],) + operator.weights.shape)
        comp[start:start + chunk] = -operator.integrate(np.expm1(nu))
        tilt[start:start + chunk] = operator.integrate(np.expm1(beta * nu))
    gamma = -d0 + tilt + beta * comp

    fields = CompensatorFields(
        compensator=replace(surface, values=comp, meta={}),
        tilt=replace(surface, values=tilt, meta={}),
        gamma=replace(surface, values=gamma, meta={}),
    )
    cached[control] = fields
    return fields


def _n_steps(start: float, end: float, dt: float) -> int:
    if dt <= 0:
        raise InvalidArgument('dt must be positive')
    n = int(round((end - start) / dt))
    if n < 0 or abs(n * dt - (end - start)) > 1e-9 * max(1.0, abs(end)):
        raise InvalidArgument(f'time span [{start}, {end}] is not a multiple of dt = {dt}')
    return n


def _check_inputs(model: ModelConfig, surface: ValueSurface, t: float, x: ArrayLike) -> None:
    if surface.model.horizon != model.horizon:
        raise InvalidArgument('surface was solved for a different horizon')
    if not 0.0 <= t <= model.horizon:
        raise InvalidArgument(f't must lie in [0, {model.horizon}]')
    x = np.asarray(x, dtype=np.float64)
    if np.any((x <= 0.0) | (x >= 1.0)):
        raise InvalidArgument('x must lie in (0, 1)')


def _dual_paths(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: ArrayLike,
    until: float,
    dt: float,
    rng: np.random.Generator,
    control: str = 'optimal',
    profile: tuple[float, ...] = (),
    record: bool = False,
) -> dict:
    """
    Euler scheme for (pi, ln Z) under the observation measure on [t, until].

    Signals arrive at rate lambda with marks from the mixture at the current
    filter value; under the optimal control each one multiplies Z by e^nu_hat.
    """
    fields = compensator_fields(surface, control)
    x = np.array(x, dtype=np.float64, ndmin=1)
    n = x.size
    steps = _n_steps(t, until, dt)
    regime, market, signal = model.regime, model.market, model.signal
    beta, r, lam = model.utility.beta, market.r, signal.lam
    m_clamp = surface.config.m_clamp
    brownian, arrivals, marks = rng.spawn(3)

    pi = x.copy()
    log_z = np.zeros(n)
    disc = np.ones(n)
    running = np.zeros(n)
    gamma_int = np.zeros(n)
    profile_at = {_n_steps(t, p, dt): k for k, p in enumerate(profile)}
    profile_out = np.empty((n, len(profile)))
    hits = events = 0
    trace = {'pi': [pi.copy()], 'log_z': [log_z.copy()], 'gamma': [gamma_int.copy()], 'events': []}

    for k in range(steps):
        s = t + k * dt
        if k in profile_at:
            profile_out[:, profile_at[k]] = disc * surface.at(s, pi) + running
        th = pi * market.theta1 + (1.0 - pi) * market.theta2
        dw = brownian.normal(0.0, np.sqrt(dt), n)
        log_z += (-0.5 * th * th + fields.compensator.at(s, pi)) * dt - th * dw
        gamma_int += fields.gamma.at(s, pi) * dt
        pi = pi + (regime.a2 - regime.total * pi) * dt + pi * (1.0 - pi) * (market.theta1 - market.theta2) * dw
        pi = np.clip(pi, EPS_CLAMP, 1.0 - EPS_CLAMP)

        if lam > 0:
            # Jumps act after the diffusion step, at the end of the interval.
            arrival = t + (k + 1) * dt
            counts = arrivals.poisson(lam * dt, n)
            for j in range(int(counts.max())):
                sel = np.flatnonzero(counts > j)
                before = pi[sel]
                z = signal.sample_mixture(before, marks)
                if control == 'optimal':
                    nu, hit = select_nu(surface, arrival, before, z, m_clamp)
                    hits += int(hit.sum())
                    log_z[sel] += nu
                else:
                    nu = np.zeros(sel.size)
                after = np.clip(xi(before, z, signal), EPS_CLAMP, 1.0 - EPS_CLAMP)
                pi[sel] = after
                events += sel.size
                if record:
                    trace['events'].append((np.full(sel.size, arrival), z, before, after, nu))

        new_disc = np.exp(beta * (log_z - r * (k + 1) * dt))
        running += 0.5 * dt * (disc + new_disc)
        disc = new_disc
        if record:
            trace['pi'].append(pi.copy())
            trace['log_z'].append(log_z.copy())
            trace['gamma'].append(gamma_int.copy())

    if steps in profile_at:
        profile_out[:, profile_at[steps]] = disc * surface.at(until, pi) + running
    out = {
        'pi': pi,
        'log_z': log_z,
        'disc': disc,
        'running': running,
        'profile': profile_out,
        'clamp_hits': hits,
        'events': events,
    }
    if record:
        out['trace'] = trace
    return out


def _aux_paths(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    dt: float,
    rng: np.random.Generator,
    n: int,
    record: bool = False,
) -> dict:
    """
    Reference-measure paths of Upsilon and the weighted dual functional.

    Upsilon has the dual drift mu_bar and diffusion sigma_bar, jumps at rate
    lambda with marks from f1. The weight Xi turns this law into the one
    tilted by e^(beta nu_hat), under which the functional is
    exp(int Gamma) + int exp(int Gamma) ds.
    """
    fields = compensator_fields(surface, 'optimal')
    steps = _n_steps(t, model.horizon, dt)
    signal = model.signal
    beta, lam = model.utility.beta, signal.lam
    m_clamp = surface.config.m_clamp
    brownian, arrivals, marks = rng.spawn(3)

    ups = np.full(n, float(x))
    log_w = np.zeros(n)
    gamma_int = np.zeros(n)
    accrued = np.zeros(n)
    hits = 0
    trace = {'upsilon': [ups.copy()], 'log_w': [log_w.copy()], 'events': []}

    for k in range(steps):
        s = t + k * dt
        mu, sig, _ = coefficients(ups, model)
        before_int = np.exp(gamma_int)
        gamma_int += fields.gamma.at(s, ups) * dt
        accrued += 0.5 * dt * (before_int + np.exp(gamma_int))
        log_w -= fields.tilt.at(s, ups) * dt
        dw = brownian.normal(0.0, np.sqrt(dt), n)
        ups = np.clip(ups + mu * dt + sig * dw, EPS_CLAMP, 1.0 - EPS_CLAMP)

        if lam > 0:
            # Jumps act after the diffusion step, at the end of the interval.
            arrival = t + (k + 1) * dt
            counts = arrivals.poisson(lam * dt, n)
            for j in range(int(counts.max())):
                sel = np.flatnonzero(counts > j)
                before = ups[sel]
                z = signal.sample(BULL, sel.size, marks)
                nu, hit = select_nu(surface, arrival, before, z, m_clamp)
                hits += int(hit.sum())
                log_w[sel] += beta * nu + np.log(f_hat(before, z, signal)) - signal.logpdf(BULL, z)
                after = np.clip(xi(before, z, signal), EPS_CLAMP, 1.0 - EPS_CLAMP)
                ups[sel] = after
                if record:
                    trace['events'].append((np.full(sel.size, arrival), z, before, after))
        if record:
            trace['upsilon'].append(ups.copy())
            trace['log_w'].append(log_w.copy())

    overflow = int(np.count_nonzero(~(log_w < LOG_OVERFLOW)))
    if overflow:
        raise WeightOverflow(f'{overflow} of {n} likelihood weights overflow (ln Xi >= {LOG_OVERFLOW})')
    weight = np.exp(log_w)
    out = {
        'weight': weight,
        'estimate': weight * (np.exp(gamma_int) + accrued),
        'clamp_hits': hits,
    }
    if record:
        out['trace'] = trace
    return out


def _events(trace_events, columns: int):
    if not trace_events:
        return [np.zeros(0) for _ in range(columns)]
    return [np.concatenate([e[c] for e in trace_events]) for c in range(columns)]


def simulate_dual_path(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    dt: float,
    rng: np.random.Generator,
    control: str = 'optimal',
) -> DualPath:
    """Simulate one dual path from (t, x) to the horizon."""
    _check_inputs(model, surface, t, x)
    out = _dual_paths(model, surface, t, x, model.horizon, dt, rng, control=control, record=True)
    trace = out['trace']
    steps = len(trace['pi']) - 1
    time_, mark, pre, post, nu = _events(trace['events'], 5)
    return DualPath(
        t=t + dt * np.arange(steps + 1),
        pi=np.concatenate(trace['pi']),
        Z=np.exp(np.concatenate(trace['log_z'])),
        gamma_integral=np.concatenate(trace['gamma']),
        event_time=time_,
        event_mark=mark,
        event_pre=pre,
        event_post=post,
        event_nu=nu,
    )


def simulate_aux_path(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    dt: float,
    rng: np.random.Generator,
) -> AuxPath:
    """Simulate one reference-measure path of Upsilon with its weight."""
    _check_inputs(model, surface, t, x)
    out = _aux_paths(model, surface, t, x, dt, rng, 1, record=True)
    trace = out['trace']
    steps = len(trace['upsilon']) - 1
    time_, mark, pre, post = _events(trace['events'], 4)
    return AuxPath(
        t=t + dt * np.arange(steps + 1),
        upsilon=np.concatenate(trace['upsilon']),
        xi=np.exp(np.concatenate(trace['log_w'])),
        event_time=time_,
        event_mark=mark,
        event_pre=pre,
        event_post=post,
    )


def _two_sided(name, samples, target, paths, dt, seed, c_disc, extra=None) -> MCReport:
    mean, stderr = _summary(samples)
    tolerance = 3.0 * stderr + c_disc * dt
    report = MCReport(
        name=name,
        mean=mean,
        stderr=stderr,
        paths=paths,
        dt=dt,
        seed=seed,
        target=float(target),
        tolerance=tolerance,
        passed=abs(mean - target) <= tolerance,
        criterion=f'|mean - target| <= 3 stderr + {c_disc:g} dt',
        extra=extra or {},
    )
    _log_report(report)
    return report


def _log_report(report: MCReport) -> None:
    logger.info(
        '%s: mean=%.6g stderr=%.2g target=%s -> %s',
        report.name, report.mean, report.stderr,
        'n/a' if report.target is None else f'{report.target:.6g}',
        'pass' if report.passed else 'FAIL',
    )


def martingale_check(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    c_disc: float = DEFAULT_C_DISC,
    runner: BlockRunner | None = None,
) -> MCReport:
    """
    Check E[M_T] = Lambda(t, x) for
    M_s = (e^(-r(s-t)) Z_s)^beta Lambda(s, pi_s) + int_t^s (e^(-r(u-t)) Z_u)^beta du.

    E[M_s] is also reported at the quarter points of [t, T], and E[Z_T] next to it.
    """
    _check_inputs(model, surface, t, x)
    runner = runner or BlockRunner()
    seed = _root_seed(rng)
    T = model.horizon
    quarters = tuple(t + q * (T - t) for q in (0.25, 0.5, 0.75)) if T > t else ()
    profile = tuple(t + dt * round((p - t) / dt) for p in quarters)
    started = time.perf_counter()

    def task(block_rng, size):
        out = _dual_paths(model, surface, t, np.full(size, x), T, dt, block_rng, profile=profile)
        return {
            'M': out['disc'] + out['running'],
            'Z': np.exp(out['log_z']),
            'profile': out['profile'],
            'clamp_hits': out['clamp_hits'],
            'events': out['events'],
        }

    out = runner.run(task, paths, seed)
    z_mean, z_err = _summary(out['Z'])
    extra = {
        'mean_Z_T': z_mean,
        'stderr_Z_T': z_err,
        'profile': [
            dict(zip(('s', 'mean', 'stderr'), (s, *_summary(out['profile'][:, k]))))
            for k, s in enumerate(profile)
        ],
        'clamp_activations': out['clamp_hits'],
        'events': out['events'],
        'elapsed': time.perf_counter() - started,
    }
    return _two_sided('martingale', out['M'], float(surface.at(t, x)), paths, dt, seed, c_disc, extra)


def dual_estimate_direct(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    control: str = 'optimal',
    c_disc: float = DEFAULT_C_DISC,
    runner: BlockRunner | None = None,
) -> MCReport:
    """
    Average (e^(-r(T-t)) Z_T)^beta + int_t^T (e^(-r(s-t)) Z_s)^beta ds over dual paths.

    With ``control='zero'`` the signal term of Z is switched off. Lambda is the
    best value over all controls (a supremum for kappa < 0, an infimum for
    kappa > 0), so that estimate must not beat Lambda(t, x) by more than 3 stderr.
    """
    _check_inputs(model, surface, t, x)
    runner = runner or BlockRunner()
    seed = _root_seed(rng)
    started = time.perf_counter()

    def task(block_rng, size):
        out = _dual_paths(model, surface, t, np.full(size, x), model.horizon, dt, block_rng, control=control)
        return {
            'value': out['disc'] + out['running'],
            'Z': np.exp(out['log_z']),
            'clamp_hits': out['clamp_hits'],
        }

    out = runner.run(task, paths, seed)
    target = float(surface.at(t, x))
    z_mean, z_err = _summary(out['Z'])
    extra = {
        'control': control,
        'mean_Z_T': z_mean,
        'stderr_Z_T': z_err,
        'clamp_activations': out['clamp_hits'],
        'elapsed': time.perf_counter() - started,
    }
    if control == 'optimal':
        return _two_sided('direct', out['value'], target, paths, dt, seed, c_disc, extra)

    mean, stderr = _summary(out['value'])
    if model.utility.kappa < 0:
        passed = mean <= target + 3.0 * stderr
        criterion = 'mean <= target + 3 stderr'
        gap = target - mean
    else:
        passed = mean >= target - 3.0 * stderr
        criterion = 'mean >= target - 3 stderr'
        gap = mean - target
    extra['gap_in_stderr'] = gap / stderr if stderr > 0 else None
    report = MCReport('direct_zero', mean, stderr, paths, dt, seed, target, None, passed, criterion, extra)
    _log_report(report)
    return report


def _weighted_run(model, surface, t, x, paths, dt, seed, runner):
    def task(block_rng, size):
        return _aux_paths(model, surface, t, x, dt, block_rng, size)

    return runner.run(task, paths, seed)


def dual_estimate_weighted(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    c_disc: float = DEFAULT_C_DISC,
    runner: BlockRunner | None = None,
) -> MCReport:
    """Importance-weighted estimate of Lambda(t, x) from reference-measure paths.

    Raises:
        WeightOverflow: A likelihood weight left the floating-point range.
    """
    _check_inputs(model, surface, t, x)
    runner = runner or BlockRunner()
    seed = _root_seed(rng)
    started = time.perf_counter()
    out = _weighted_run(model, surface, t, x, paths, dt, seed, runner)
    w_mean, w_err = _summary(out['weight'])
    extra = {
        'mean_weight': w_mean,
        'stderr_weight': w_err,
        'max_weight': float(out['weight'].max()),
        'clamp_activations': out['clamp_hits'],
        'elapsed': time.perf_counter() - started,
    }
    return _two_sided('weighted', out['estimate'], float(surface.at(t, x)), paths, dt, seed, c_disc, extra)


def weight_normalisation(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    runner: BlockRunner | None = None,
) -> MCReport:
    """Check E[Xi_T] = 1 for the likelihood weights of the weighted estimator."""
    _check_inputs(model, surface, t, x)
    runner = runner or BlockRunner()
    seed = _root_seed(rng)
    out = _weighted_run(model, surface, t, x, paths, dt, seed, runner)
    mean, stderr = _summary(out['weight'])
    report = MCReport(
        name='normalisation',
        mean=mean,
        stderr=stderr,
        paths=paths,
        dt=dt,
        seed=seed,
        target=1.0,
        tolerance=3.0 * stderr,
        passed=abs(mean - 1.0) <= 3.0 * stderr,
        criterion='|mean - 1| <= 3 stderr',
        extra={'max_weight': float(out['weight'].max())},
    )
    _log_report(report)
    return report


def dpp_check(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    c_disc: float = DEFAULT_C_DISC,
    runner: BlockRunner | None = None,
) -> MCReport:
    """
    Dynamic-programming consistency.

    Each outer path runs to the midpoint t + h and one fresh inner path is
    launched from (t + h, pi_{t+h}); the spliced functional must reproduce
    Lambda(t, x) in expectation.
    """
    _check_inputs(model, surface, t, x)
    runner = runner or BlockRunner()
    seed = _root_seed(rng)
    T = model.horizon
    mid = t + dt * round(0.5 * (T - t) / dt)

    def task(block_rng, size):
        outer_rng, inner_rng = block_rng.spawn(2)
        outer = _dual_paths(model, surface, t, np.full(size, x), mid, dt, outer_rng)
        inner = _dual_paths(model, surface, mid, outer['pi'], T, dt, inner_rng)
        return {'value': outer['running'] + outer['disc'] * (inner['disc'] + inner['running'])}

    out = runner.run(task, paths, seed)
    return _two_sided('dpp', out['value'], float(surface.at(t, x)), paths, dt, seed, c_disc, {'midpoint': mid})


def zero_strategy_objective(model: ModelConfig, t: float, v: float) -> float:
    """
    Objective of holding no risky asset and consuming V_s / (T - s + 1).

    Wealth is then deterministic, V_s = v e^(r(s-t)) (T - s + 1) / (T - t + 1),
    and the consumption rate is v e^(r(s-t)) / (T - t + 1).
    """
    if v <= 0:
        raise InvalidArgument('wealth v must be positive')
    kappa, r = model.utility.kappa, model.market.r
    tau = model.horizon - t
    if tau < 0:
        raise InvalidArgument('t must not exceed the horizon')
    rate = v / (tau + 1.0)
    consumption = rate ** kappa / kappa * np.expm1(kappa * r * tau) / (kappa * r)
    terminal = (v * np.exp(r * tau) / (tau + 1.0)) ** kappa / kappa
    return float(consumption + terminal)


def _primal_paths(model, field, t, x, v, dt, rng, n, strategy, invest_scale, wealth_scheme):
    T = model.horizon
    steps = _n_steps(t, T, dt)
    tau = T - t
    market, utility = model.market, model.utility
    if steps == 0:
        return {'objective': utility.utility(np.full(n, float(v))), 'truncated': 0}
    world_model = replace(model, horizon=tau, x0=x)
    world = simulate_world_batch(world_model, tau, dt, rng, n)
    pi = run_filter_batch(world, world_model, x).pi

    wealth = np.full(n, float(v))
    alive = np.ones(n, dtype=bool)
    total = np.zeros(n)
    for k in range(steps):
        s = t + k * dt
        if strategy == 'zero':
            varpi = np.zeros(n)
            consume = wealth / (T - s + 1.0)
        else:
            varpi, consume = feedback_controls(field, s, pi[:, k], wealth)
            if strategy == 'perturbed':
                varpi = invest_scale * varpi
        total += np.where(alive, utility.utility(np.where(alive, consume, 1.0)), 0.0) * dt

        bull = world.bull_time[:, k]
        excess = market.mu1 * bull + market.mu2 * (dt - bull) - market.r * dt
        dw = world.dW[:, k]
        if wealth_scheme == 'log':
            frac = varpi / wealth
            wealth = wealth * np.exp(
                (market.r - consume / wealth - 0.5 * (market.sigma * frac) ** 2) * dt
                + frac * excess
                + market.sigma * frac * dw
            )
        else:
            wealth = wealth + varpi * excess + (market.r * wealth - consume) * dt + varpi * market.sigma * dw
            broke = alive & (wealth <= 0.0)
            alive &= ~broke
            wealth = np.where(alive, wealth, 0.0)

    total += np.where(alive, utility.utility(np.where(alive, wealth, 1.0)), 0.0)
    return {'objective': total, 'truncated': int(np.count_nonzero(~alive))}


def primal_objective(
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    v: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    strategy: str = 'optimal',
    invest_scale: float = PERTURBED_INVEST_SCALE,
    wealth_scheme: str = 'log',
    runner: BlockRunner | None = None,
) -> MCReport:
    """
    Realised utility of a feedback strategy in the full-information world.

    The true regime, asset and signals are simulated; the filter runs on the
    observed returns and signals, and the controls are applied to wealth
    driven by the same Brownian increments as the asset. With
    ``wealth_scheme='euler'`` a path that reaches zero wealth stops consuming
    and investing and contributes no further utility.

    Targets: 'optimal' must match J(t, x, v) within max(3 stderr, 2%);
    'perturbed' scales the investment by `invest_scale` and must fall short of J
    by more than 2 stderr; 'zero' must match its closed form.
    """
    _check_inputs(model, surface, t, x)
    if strategy not in STRATEGIES:
        raise InvalidArgument(f'strategy must be one of {STRATEGIES}, got {strategy!r}')
    if wealth_scheme not in ('log', 'euler'):
        raise InvalidArgument(f"wealth_scheme must be 'log' or 'euler', got {wealth_scheme!r}")
    if v <= 0:
        raise InvalidArgument('wealth v must be positive')
    runner = runner or BlockRunner()
    seed = _root_seed(rng)
    field_ = StrategyField(surface)
    started = time.perf_counter()

    def task(block_rng, size):
        return _primal_paths(model, field_, t, x, v, dt, block_rng, size, strategy, invest_scale, wealth_scheme)

    out = runner.run(task, paths, seed)
    mean, stderr = _summary(out['objective'])
    optimum = float(primal_value(v, surface, t, x, model.utility))
    extra = {
        'strategy': strategy,
        'wealth_scheme': wealth_scheme,
        'truncated_paths': out['truncated'],
        'primal_value': optimum,
        'elapsed': time.perf_counter() - started,
    }
    if strategy == 'optimal':
        target = optimum
        tolerance = max(3.0 * stderr, 0.02 * abs(target))
        passed = abs(mean - target) <= tolerance
        criterion = '|mean - J| <= max(3 stderr, 2% |J|)'
    elif strategy == 'perturbed':
        extra['invest_scale'] = invest_scale
        target, tolerance = optimum, None
        passed = mean < target - 2.0 * stderr
        criterion = 'mean < J - 2 stderr'
    else:
        target = zero_strategy_objective(model, t, v)
        tolerance = 3.0 * stderr + DEFAULT_C_DISC * dt * max(1.0, abs(target))
        passed = abs(mean - target) <= tolerance
        criterion = '|mean - closed form| <= 3 stderr + dt max(1, |closed form|)'
    extra['weak_duality'] = bool(mean <= optimum + 3.0 * stderr + 0.02 * abs(optimum))
    name = 'primal' if strategy == 'optimal' else f'primal_{strategy}'
    report = MCReport(name, mean, stderr, paths, dt, seed, target, tolerance, passed, criterion, extra)
    if out['truncated']:
        logger.warning('%s: %d of %d wealth paths truncated at zero', name, out['truncated'], paths)
    _log_report(report)
    return report


def estimators_agree(first: MCReport, second: MCReport) -> dict:
    """Two estimates of the same quantity agree within 3 combined standard errors."""
    combined = float(np.hypot(first.stderr, second.stderr))
    diff = abs(first.mean - second.mean)
    return {
        'estimators': [first.name, second.name],
        'difference': diff,
        'combined_stderr': combined,
        'passed': diff <= 3.0 * combined,
    }


def calibrate_c_disc(
    estimator: Callable[..., MCReport],
    model: ModelConfig,
    surface: ValueSurface,
    t: float,
    x: float,
    paths: int,
    dt: float,
    rng: np.random.Generator | int,
    max_halvings: int = 4,
    runner: BlockRunner | None = None,
) -> dict:
    """
    Halve dt until the estimate moves by less than one stderr.

    Returns the discretisation constant C_disc = 2 |shift| / dt, taken at the
    coarser step of the last halving, together with the run history.
    """
    seed = _root_seed(rng)
    previous = estimator(model, surface, t, x, paths, dt, seed, runner=runner)
    history = [{'dt': dt, 'mean': previous.mean, 'stderr': previous.stderr}]
    c_disc = 0.0
    step = dt
    for _ in range(max_halvings):
        step = step / 2.0
        current = estimator(model, surface, t, x, paths, step, seed, runner=runner)
        history.append({'dt': step, 'mean': current.mean, 'stderr': current.stderr})
        shift = abs(current.mean - previous.mean)
        c_disc = 2.0 * shift / (2.0 * step)
        if shift < current.stderr:
            break
        previous = current
    logger.info('Calibrated C_disc = %.4g after %d runs', c_disc, len(history))
    return {'c_disc': c_disc, 'history': history}
