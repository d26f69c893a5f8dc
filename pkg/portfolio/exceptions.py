"""
Error hierarchy of the portfolio app.

Every error carries the exit code the management commands report for it:
1 for usage and configuration problems, 2 for numerical diagnostics.
"""

from .constants import EXIT_NUMERICAL, EXIT_USAGE


class PortfolioError(Exception):
    exit_code = EXIT_NUMERICAL


class InvalidArgument(PortfolioError, ValueError):
    exit_code = EXIT_USAGE


class ConfigError(PortfolioError):
    """
    Raised when a configuration document fails validation.

    Attributes:
        errors (dict): Dotted field path -> list of messages.
    """
    exit_code = EXIT_USAGE

    def __init__(self, errors):
        self.errors = errors
        lines = [f"{key}: {' '.join(messages)}" for key, messages in errors.items()]
        super().__init__('; '.join(lines) or 'invalid configuration')


class DegenerateMark(PortfolioError):
    def __init__(self, mark):
        self.mark = mark
        super().__init__(f'mixture density vanishes at mark {mark!r}')


class SupportMismatch(PortfolioError):
    pass


class PositivityViolation(PortfolioError):
    def __init__(self, t, x, value):
        self.t, self.x, self.value = t, x, value
        super().__init__(f'value surface not positive at t={t:.6g}, x={x:.6g}: {value:.3e}')


class BoundViolation(PortfolioError):
    def __init__(self, t, x, value, lower, upper):
        self.t, self.x, self.value = t, x, value
        self.lower, self.upper = lower, upper
        super().__init__(
            f'value {value:.8g} at t={t:.6g}, x={x:.6g} outside [{lower:.8g}, {upper:.8g}]'
        )


class SolverSingular(PortfolioError):
    pass


class WeightOverflow(PortfolioError):
    pass
