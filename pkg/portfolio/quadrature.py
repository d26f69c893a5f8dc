"""
Composite Gauss-Legendre rules over the (truncated) mark domain.

The same rule is used by the BLR divergence, the nonlocal term of the dual PIDE
and the compensator fields of the Monte Carlo verifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.special import roots_legendre

from .constants import DEFAULT_QUAD_NODES
from .exceptions import InvalidArgument

NODES_PER_PANEL = 16
GRADED_NODES = 4
GRADING_LEVELS = 12


@lru_cache(maxsize=32)
def _legendre(n: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    x, w = roots_legendre(n)
    return x, w


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a composite rule on [lower, upper].

    Parameters
    ----------
    nodes, weights : (n,) arrays
    lower, upper : float
        Truncation interval.
    panels : int
    tail_mass : float
        Probability mass of either density left outside [lower, upper].
    """

    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]
    lower: float
    upper: float
    panels: int
    tail_mass: float = 0.0

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def integrate(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Integrate samples taken at `nodes` along the last axis."""
        return np.asarray(values) @ self.weights

    def metadata(self) -> dict:
        return {
            'nodes': self.size,
            'panels': self.panels,
            'lower': self.lower,
            'upper': self.upper,
            'tail_mass': self.tail_mass,
        }


def _panel_rule(breaks: list[float], counts: list[int]):
    nodes, weights = [], []
    for a, b, n in zip(breaks[:-1], breaks[1:], counts):
        x, w = _legendre(n)
        half = 0.5 * (b - a)
        nodes.append(a + half * (x + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def composite_rule(
    lower: float,
    upper: float,
    n_nodes: int = DEFAULT_QUAD_NODES,
    breakpoints: tuple[float, ...] = (),
    singular: tuple[float, ...] = (),
    tail_mass: float = 0.0,
) -> QuadratureRule:
    """Build a composite Gauss-Legendre rule.

    Regular segments between breakpoints are split into panels of
    ``NODES_PER_PANEL`` nodes in proportion to their length. Each point in
    `singular` gets geometrically graded panels towards it, for integrable
    endpoint singularities such as ``z**(a-1)`` near 0.
    """
    if not np.isfinite(lower) or not np.isfinite(upper) or upper <= lower:
        raise InvalidArgument(f'quadrature interval [{lower}, {upper}] is not a finite interval')
    if n_nodes < NODES_PER_PANEL:
        raise InvalidArgument(f'n_nodes must be at least {NODES_PER_PANEL}')

    cuts = sorted({lower, upper, *(b for b in breakpoints if lower < b < upper)})
    segments = list(zip(cuts[:-1], cuts[1:]))
    span = upper - lower
    n_panels = max(len(segments), n_nodes // NODES_PER_PANEL)

    breaks: list[float] = [lower]
    counts: list[int] = []
    for a, b in segments:
        graded_left = any(np.isclose(a, s) for s in singular)
        graded_right = any(np.isclose(b, s) for s in singular)
        inner_a, inner_b = a, b
        left_cuts, right_cuts = [], []
        if graded_left:
            left_cuts = [a + (b - a) * 10.0 ** (-k) for k in range(GRADING_LEVELS, 0, -1)]
            inner_a = left_cuts[-1]
        if graded_right:
            right_cuts = [b - (b - a) * 10.0 ** (-k) for k in range(1, GRADING_LEVELS + 1)]
            inner_b = right_cuts[0]
        for c in left_cuts:
            breaks.append(c)
            counts.append(GRADED_NODES)
        pieces = max(1, int(round(n_panels * (b - a) / span)))
        for c in np.linspace(inner_a, inner_b, pieces + 1)[1:]:
            breaks.append(float(c))
            counts.append(NODES_PER_PANEL)
        for c in right_cuts[1:] + [b]:
            breaks.append(c)
            counts.append(GRADED_NODES)
        breaks[-1] = b

    nodes, weights = _panel_rule(breaks, counts)
    return QuadratureRule(nodes, weights, lower, upper, len(counts), tail_mass)
