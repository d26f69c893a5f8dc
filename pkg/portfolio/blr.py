"""
Bounded likelihood ratio (BLR) checks for a signal density pair.

A pair qualifies when b_min < f2/f1 < b_max on the common support with
0 <= b_min < 1 < b_max < inf, and the 3-divergence
D3 = (1/6) (int f1^3 / f2^2 dz - 1) is finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .constants import (
    BEAR,
    BULL,
    D3_LOG_RANGE,
    D3_SCAN_POINTS,
    D3_WIDEN,
    DEFAULT_QUAD_NODES,
    LOG_OVERFLOW,
    SCAN_CLUSTER,
    SCAN_POINTS,
    SCAN_REFINEMENTS,
    SCAN_STABILITY,
    SCAN_WIDEN,
    TAIL_MASS,
    TAIL_PROBES,
)
from .densities import SignalDensityPair
from .exceptions import InvalidArgument
from .quadrature import QuadratureRule, composite_rule

logger = logging.getLogger(__name__)


@dataclass
class BlrReport:
    """
    Outcome of `check_blr`.

    Attributes:
        b_min_est (float): Infimum estimate of f2/f1 over the support.
        b_max_est (float): Supremum estimate; inf when the ratio is unbounded.
        d3 (float): 3-divergence; inf when f1^3/f2^2 is not integrable.
        passes (bool): Whether the pair satisfies the BLR condition.
        uninformative (bool): f1 == f2.
        quadrature (dict): Node count, truncation bounds and tail mass of the rule.
        method (str): 'analytic' or 'scan' for the ratio bounds.
        reasons (list[str]): Why the check failed; empty on success.
        diagnostic (dict | None): Location of a divergence or overflow.
    """

    b_min_est: float
    b_max_est: float
    d3: float
    passes: bool
    uninformative: bool
    quadrature: dict
    method: str
    l_f_budget: float | None = None
    reasons: list[str] = field(default_factory=list)
    diagnostic: dict | None = None

    def to_dict(self) -> dict:
        def num(value):
            if value is None:
                return None
            return 'inf' if np.isinf(value) else float(value)

        return {
            'b_min_est': num(self.b_min_est),
            'b_max_est': num(self.b_max_est),
            'd3': num(self.d3),
            'passes': self.passes,
            'uninformative': self.uninformative,
            'method': self.method,
            'l_f_budget': num(self.l_f_budget),
            'reasons': list(self.reasons),
            'diagnostic': self.diagnostic,
            'quadrature': self.quadrature,
        }


def _quadratic_bounds(a: float, b: float, c: float) -> tuple[float, float]:
    """Range of exp(a z^2 + b z + c) over the real line."""
    if a == 0.0:
        if b == 0.0:
            return float(np.exp(c)), float(np.exp(c))
        return 0.0, np.inf
    extremum = float(np.exp(c - b * b / (4.0 * a)))
    if a < 0.0:
        return 0.0, extremum
    return extremum, np.inf


def _scan_window(densities: SignalDensityPair, tail_mass: float) -> tuple[float, float]:
    lo, hi = densities.family.truncation(tail_mass)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    s_lo, s_hi = densities.support
    return max(mid - SCAN_WIDEN * half, s_lo), min(mid + SCAN_WIDEN * half, s_hi)


def _scan_grid(lo: float, hi: float, n: int, anchors: tuple[float, ...]) -> np.ndarray:
    """Uniform grid on (lo, hi) plus geometric clusters on both sides of each anchor."""
    offsets = (hi - lo) * 10.0 ** -np.arange(1, SCAN_CLUSTER + 1)
    pieces = [np.linspace(lo, hi, n)]
    for a in anchors:
        pieces += [a - offsets, a + offsets]
    z = np.unique(np.concatenate(pieces))
    return z[(z > lo) & (z < hi) & ~np.isin(z, anchors)]


def _tail_trend(values: np.ndarray) -> str | None:
    values = values[np.isfinite(values)]
    if values.size < 3:
        return None
    steps = np.diff(values)
    if np.all(steps > 0):
        return 'up'
    if np.all(steps < 0):
        return 'down'
    return None


def _probes(edge: float, direction: float, span: float) -> np.ndarray:
    return edge + direction * span * 2.0 ** np.arange(TAIL_PROBES)


def _scan_bounds(
    densities: SignalDensityPair,
    points: int,
    refinements: int,
    tail_mass: float,
) -> tuple[float, float]:
    lo, hi = _scan_window(densities, tail_mass)
    anchors = (lo, hi, *(b for b in densities.family.breakpoints if lo < b < hi))

    top = bottom = None
    stable = False
    for level in range(refinements + 1):
        n = (points - 1) * 2 ** level + 1
        lr = densities.log_ratio(_scan_grid(lo, hi, n, anchors))
        lr = lr[~np.isnan(lr)]
        if lr.size == 0:
            raise InvalidArgument('both densities vanish on the whole scan window')
        new_top, new_bottom = float(lr.max()), float(lr.min())
        if np.isinf(new_top):
            top, bottom, stable = new_top, new_bottom, True
            break
        if top is not None and abs(new_top - top) < np.log(SCAN_STABILITY):
            top, bottom, stable = new_top, min(bottom, new_bottom), True
            break
        top = new_top
        bottom = new_bottom if bottom is None else min(bottom, new_bottom)
    if not stable:
        logger.warning('ratio scan maximum did not settle after %d refinements', refinements)
        top = np.inf

    span = hi - lo
    s_lo, s_hi = densities.support
    for edge, direction, unbounded in ((hi, 1.0, np.isinf(s_hi)), (lo, -1.0, np.isinf(s_lo))):
        if not unbounded:
            continue
        probe = densities.log_ratio(_probes(edge, direction, span))
        trend = _tail_trend(probe)
        if trend == 'up':
            top = np.inf
        elif trend == 'down':
            bottom = -np.inf

    return float(np.exp(bottom)), float(np.exp(top))


def likelihood_ratio_bounds(
    densities: SignalDensityPair,
    points: int = SCAN_POINTS,
    refinements: int = SCAN_REFINEMENTS,
    method: str = 'auto',
    tail_mass: float = TAIL_MASS,
) -> tuple[float, float]:
    """
    Estimate (inf, sup) of f2/f1 over the common support.

    Gaussian pairs have a quadratic log-ratio whose extremum is located in closed
    form; other families (or ``method='scan'``) use a dense scan refined until
    its maximum settles, plus tail probes on unbounded sides.

    Raises:
        SupportMismatch: The densities do not share a support.
    """
    if method not in ('auto', 'scan'):
        raise InvalidArgument(f"method must be 'auto' or 'scan', got {method!r}")
    densities.check_support()
    if densities.uninformative:
        return 1.0, 1.0
    quadratic = densities.family.ratio_quadratic()
    if method == 'auto' and quadratic is not None and densities.support_override is None:
        return _quadratic_bounds(*quadratic)
    return _scan_bounds(densities, points, refinements, tail_mass)


def _log_integrand(densities: SignalDensityPair, z: np.ndarray) -> np.ndarray:
    """ln(f1^3 / f2^2)."""
    with np.errstate(invalid='ignore'):
        return 3.0 * densities.logpdf(BULL, z) - 2.0 * densities.logpdf(BEAR, z)


def _d3_tail_test(densities: SignalDensityPair, tail_mass: float) -> dict | None:
    """Return a diagnostic when f1^3/f2^2 fails to decay towards a support end."""
    lo, hi = _scan_window(densities, tail_mass)
    span = hi - lo
    s_lo, s_hi = densities.support

    for edge, direction, unbounded in ((hi, 1.0, np.isinf(s_hi)), (lo, -1.0, np.isinf(s_lo))):
        if not unbounded:
            continue
        z = _probes(edge, direction, span)
        # z * h(z) must vanish for the tail to be integrable.
        trend = _tail_trend(_log_integrand(densities, z) + np.log1p(np.abs(z)))
        if trend != 'down':
            return {'reason': 'integrand does not decay in the tail', 'location': float(z[-1])}

    for point in densities.family.singular:
        if not lo <= point <= hi:
            continue
        direction = 1.0 if point == lo else -1.0
        dist = span * 10.0 ** -np.arange(1, SCAN_CLUSTER + 1)
        trend = _tail_trend(_log_integrand(densities, point + direction * dist) + np.log(dist))
        if trend != 'down':
            return {'reason': 'integrand is not integrable at the endpoint', 'location': float(point)}
    return None


def _d3_rule(densities: SignalDensityPair, n_nodes: int, tail_mass: float) -> QuadratureRule:
    """Rule on the truncation interval, stretched to where f1^3/f2^2 carries its mass.

    The integrand can peak far from both densities, so the interval is grown to
    cover every point of a wide uniform scan where it exceeds e^-40 of its peak.
    """
    family = densities.family
    lo, hi = family.truncation(tail_mass)
    s_lo, s_hi = densities.support
    lo, hi = max(lo, s_lo), min(hi, s_hi)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    wide = np.linspace(max(mid - D3_WIDEN * half, s_lo), min(mid + D3_WIDEN * half, s_hi), D3_SCAN_POINTS)
    g = _log_integrand(densities, wide[1:-1])
    finite = np.isfinite(g)
    if np.any(finite):
        heavy = wide[1:-1][finite][g[finite] > g[finite].max() - D3_LOG_RANGE]
        step = wide[1] - wide[0]
        lo = max(min(lo, heavy.min() - step), s_lo)
        hi = min(max(hi, heavy.max() + step), s_hi)
    return composite_rule(
        lo, hi, n_nodes,
        breakpoints=family.breakpoints,
        singular=family.singular,
        tail_mass=tail_mass,
    )


def _d3(densities: SignalDensityPair, n_nodes: int, tail_mass: float) -> tuple[float, dict | None]:
    if densities.uninformative:
        return 0.0, None
    family = densities.family
    # The analytic verdict describes the untruncated tails.
    verdict = family.d3_finite() if densities.support_override is None else None
    if verdict is False:
        return np.inf, {'reason': 'f1^3/f2^2 has a non-negative quadratic exponent', 'location': None}
    if densities.support_override is None:
        closed = family.d3_closed_form()
        if closed is not None:
            if np.isinf(closed):
                return closed, {'reason': 'f1^3/f2^2 overflows', 'location': None}
            return closed, None
    if verdict is None:
        diagnostic = _d3_tail_test(densities, tail_mass)
        if diagnostic is not None:
            return np.inf, diagnostic

    rule = _d3_rule(densities, n_nodes, tail_mass)
    l1 = densities.logpdf(BULL, rule.nodes)
    l2 = densities.logpdf(BEAR, rule.nodes)
    live = np.isfinite(l1)
    starved = live & ~np.isfinite(l2)
    if np.any(starved):
        return np.inf, {'reason': 'f2 vanishes where f1 does not', 'location': float(rule.nodes[starved][0])}
    doubled = np.where(live, 2.0 * (l1 - l2), 0.0)
    if doubled.max() > LOG_OVERFLOW:
        where = float(rule.nodes[np.argmax(doubled)])
        return np.inf, {'reason': 'f1^3/f2^2 overflows', 'location': where}
    # f1 (r^2 - 1) with r = f1 / f2 integrates to the same value and vanishes for f1 == f2.
    integrand = np.where(live, np.exp(np.where(live, l1, 0.0)) * np.expm1(doubled), 0.0)
    return max(0.0, float(rule.integrate(integrand)) / 6.0), None


def d3_divergence(
    densities: SignalDensityPair,
    n_nodes: int = DEFAULT_QUAD_NODES,
    tail_mass: float = TAIL_MASS,
) -> float:
    """D3(f1 || f2) on the truncated mark domain; inf when not integrable."""
    value, diagnostic = _d3(densities, n_nodes, tail_mass)
    if diagnostic is not None:
        logger.info('D3 is infinite: %s (location %s)', diagnostic['reason'], diagnostic['location'])
    return value


def check_blr(
    densities: SignalDensityPair,
    l_f_budget: float | None = None,
    n_nodes: int = DEFAULT_QUAD_NODES,
    tail_mass: float = TAIL_MASS,
) -> BlrReport:
    """Run both BLR checks and aggregate them into a report."""
    if l_f_budget is not None and not l_f_budget > 0:
        raise InvalidArgument('l_f_budget must be positive')

    b_min, b_max = likelihood_ratio_bounds(densities, tail_mass=tail_mass)
    quadratic = densities.family.ratio_quadratic() is not None and densities.support_override is None
    d3, diagnostic = _d3(densities, n_nodes, tail_mass)
    rule = densities.quadrature(n_nodes, tail_mass)

    reasons = []
    uninformative = densities.uninformative
    if uninformative:
        reasons.append('f1 and f2 are identical; signals carry no information')
    if np.isinf(b_max):
        reasons.append('likelihood ratio f2/f1 is unbounded')
    elif not b_min < 1.0 < b_max:
        reasons.append('ratio bounds do not straddle 1')
    if np.isinf(d3):
        reasons.append('D3 is infinite')
    elif l_f_budget is not None and not d3 < l_f_budget:
        reasons.append(f'D3 = {d3:.6g} is not below the budget {l_f_budget:.6g}')

    report = BlrReport(
        b_min_est=b_min,
        b_max_est=b_max,
        d3=d3,
        passes=not reasons,
        uninformative=uninformative,
        quadrature=rule.metadata(),
        method='analytic' if quadratic and not uninformative else 'scan',
        l_f_budget=l_f_budget,
        reasons=reasons,
        diagnostic=diagnostic,
    )
    logger.info(
        'BLR %s: b_min=%.4g b_max=%.4g D3=%.4g',
        'passed' if report.passes else 'failed', b_min, b_max, d3,
    )
    return report
