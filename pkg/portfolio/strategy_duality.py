"""
Primal quantities recovered from the dual value surface under CRRA utility.

    L(t, x, y) = -(y^beta / beta) Lambda(t, x)
    J(t, x, v) = v^kappa Lambda(t, x)^(1 - kappa) / kappa
    y*(v)      = (v / Lambda(t, x))^(1 / (beta - 1))
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dual_pide import ValueSurface, coefficients
from .exceptions import InvalidArgument
from .market_signal import UtilityParams, theta_hat

logger = logging.getLogger(__name__)


def _positive(name: str, value: ArrayLike) -> NDArray[np.float64]:
    value = np.asarray(value, dtype=np.float64)
    if np.any(value <= 0):
        raise InvalidArgument(f'{name} must be positive')
    return value


class StrategyField:
    """
    Feedback strategy of a solved surface.

    The log-derivative d_x Lambda / Lambda is precomputed on the solver grid
    (central differences inside, one-sided at x = 0 and x = 1) and interpolated
    the same way as the surface itself.
    """

    def __init__(self, surface: ValueSurface):
        self.surface = surface
        self.model = surface.model
        slope = np.gradient(surface.values, surface.x, axis=1, edge_order=1)
        self.log_slope = replace(surface, values=slope / surface.values, meta={})

    def log_derivative(self, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        return self.log_slope.at(t, x)

    def table(self, times: ArrayLike | None = None):
        """Investment and consumption per unit wealth on the (t, x) grid."""
        times = self.surface.t if times is None else np.asarray(times, dtype=np.float64)
        tt, xx = np.meshgrid(times, self.surface.x, indexing='ij')
        invest, consume = feedback_controls(self, tt, xx, 1.0)
        return tt, xx, invest, consume


def dual_value(
    surface: ValueSurface,
    t: ArrayLike,
    x: ArrayLike,
    y: ArrayLike,
    utility: UtilityParams,
) -> NDArray[np.float64]:
    """-(y^beta / beta) Lambda(t, x)."""
    y = _positive('multiplier y', y)
    beta = utility.beta
    return -(y ** beta / beta) * surface.at(t, x)


def y_star(
    v: ArrayLike,
    surface: ValueSurface,
    t: ArrayLike,
    x: ArrayLike,
    utility: UtilityParams,
) -> NDArray[np.float64]:
    """Multiplier solving -d_y L(y) = v: y^(beta - 1) Lambda = v."""
    v = _positive('wealth v', v)
    return (v / surface.at(t, x)) ** (1.0 / (utility.beta - 1.0))


def primal_value(
    v: ArrayLike,
    surface: ValueSurface,
    t: ArrayLike,
    x: ArrayLike,
    utility: UtilityParams,
) -> NDArray[np.float64]:
    """v^kappa Lambda^(1 - kappa) / kappa."""
    v = _positive('wealth v', v)
    kappa = utility.kappa
    return v ** kappa * surface.at(t, x) ** (1.0 - kappa) / kappa


def feedback_controls(field: StrategyField, t: ArrayLike, x: ArrayLike, v: ArrayLike):
    """
    Investment amount and consumption rate at wealth `v`.

    Returns:
        tuple: (varpi, c) with
            varpi = (v / sigma) [(1 - beta) theta_hat(x) + h(x) d_x Lambda / Lambda]
            c = v / Lambda(t, x)
        where h = sigma_bar for the filtered hedge and h = 1 for the literal form.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0):
        raise InvalidArgument('wealth must be nonnegative')
    model = field.model
    x = np.asarray(x, dtype=np.float64)
    beta = model.utility.beta
    slope = field.log_derivative(t, x)
    if model.hedge_form == 'filtered':
        slope = coefficients(x, model)[1] * slope
    varpi = v / model.market.sigma * ((1.0 - beta) * theta_hat(x, model.market) + slope)
    consume = v / field.surface.at(t, x)
    return varpi, consume


def optimal_wealth_factor(
    surface: ValueSurface,
    t: float,
    x: float,
    s: ArrayLike,
    pi_s: ArrayLike,
    z_factor: ArrayLike,
) -> NDArray[np.float64]:
    """Optimal wealth at time s as a multiple of the initial wealth."""
    z_factor = _positive('z_factor', z_factor)
    beta = surface.model.utility.beta
    return z_factor ** (beta - 1.0) * surface.at(s, pi_s) / surface.at(t, x)
