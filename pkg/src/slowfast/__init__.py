"""Simulation and averaging diagnostics for slow/fast jump-diffusions."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BlowUpError,
    ConfigValidationError,
    InsufficientDataError,
    InvalidInputError,
    InvalidModelError,
    SlowFastError,
)
from .model import (  # noqa: E402
    AssumptionReport,
    CoefficientModel,
    Dims,
    check_assumptions,
    check_dissipativity,
    check_nondegeneracy,
    make_jump_ou_benchmark,
    make_model,
)
from .randomness import JumpSchedule, RandomPlan, brownian_increments, sample_jump_times  # noqa: E402
from .integrate import (  # noqa: E402
    ScaleParams,
    TimeGrid,
    build_time_grid,
    simulate_averaged,
    simulate_coupled,
    simulate_first_variation,
    simulate_frozen,
)
from .ergodic import AveragedDrift, estimate_abar, estimate_invariant_moment, estimate_mixing_rate  # noqa: E402
from .weakerror import (  # noqa: E402
    MCEstimate,
    Observable,
    RateFit,
    estimate_u_bar,
    estimate_u_eps,
    fit_rate,
    strong_error,
    weak_error,
)
from .expansion import (  # noqa: E402
    ExpansionReport,
    estimate_Dx_ubar,
    estimate_rho,
    estimate_u1,
    residual_check,
)
