# Numerical constants shared by the solver, the filter and the verifiers.

# Filter values are kept inside [EPS_CLAMP, 1 - EPS_CLAMP].
EPS_CLAMP = 1e-9

# Floor below which a value surface is considered non-positive.
EPS_POS = 1e-12

# Combined tail mass left outside the truncated mark domain.
TAIL_MASS = 1e-12

DEFAULT_QUAD_NODES = 128

# Slack allowed on the analytic bounds of the value surface.
BOUND_TOL = 1e-6

MIN_GRID_NX = 50

# Largest admissible dt * lambda * (1 - beta) * gain for the explicit nonlocal term.
NONLOCAL_STABILITY = 0.5

# Events per step budget for the filter grid (lambda * dt).
MAX_EVENTS_PER_STEP = 0.05

# Scan used by the likelihood-ratio bounds.
SCAN_POINTS = 20001
SCAN_REFINEMENTS = 4
SCAN_STABILITY = 1.01
# The ratio scan covers the truncation interval widened by this factor about its midpoint.
SCAN_WIDEN = 4.0
# Geometric clustering depth (powers of ten) towards endpoints and breakpoints.
SCAN_CLUSTER = 12
TAIL_PROBES = 11

# Smallest mass each density may keep on an explicit support override.
MIN_SUPPORT_MASS = 1e-6

# exp() overflows above this.
LOG_OVERFLOW = 700.0

# Window used to locate the mass of f1^3/f2^2.
D3_WIDEN = 16.0
D3_SCAN_POINTS = 4001
D3_LOG_RANGE = 40.0

BULL = 1
BEAR = 2

FAMILY_CHOICES = [
    ('gaussian', 'Gaussian'),
    ('gaussian_mixture', 'Gaussian mixture vs Gaussian'),
    ('mixture_gamma', 'Mixture vs Gamma'),
    ('tabulated', 'Tabulated'),
]

D0_FORMS = [
    ('squared', 'theta_hat(x)^2'),
    ('literal', 'theta_hat(x)'),
]

BOUNDS_THETA = [
    ('max', 'max(theta_1^2, theta_2^2)'),
    ('first', 'theta_1^2'),
]

HEDGE_FORMS = [
    ('filtered', 'sigma_bar(x) * d_x Lambda / Lambda'),
    ('literal', 'd_x Lambda / Lambda'),
]

CHECK_NAMES = [
    'martingale',
    'direct',
    'direct_zero',
    'weighted',
    'normalisation',
    'primal',
    'primal_perturbed',
    'primal_zero',
    'dpp',
]

CHECK_SETS = {
    'all': CHECK_NAMES,
    'acceptance': ['martingale', 'direct', 'weighted', 'normalisation', 'primal', 'primal_perturbed'],
}

# Monte Carlo defaults.
DEFAULT_BLOCK_SIZE = 5000
DEFAULT_C_DISC = 1.0
PERTURBED_INVEST_SCALE = 1.5
WEALTH_SCHEMES = [
    ('log', 'log-Euler, wealth stays positive'),
    ('euler', 'Euler, paths truncated at zero wealth'),
]

# Exit codes of the management commands.
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
