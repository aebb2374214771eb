"""Heavy Ball dynamics with time-dependent coefficients and their time-rescaled vanishing-damping twins."""
from .diagnostics import (
    EnergyParams,
    RateCertificate,
    Series,
    certify_rate,
    energy_function_case,
    energy_operator_case,
    lyapunov_W,
    parabola_discriminant,
    quadratic_form_sign,
    residual_series,
    tail_stabilization,
)
from .dynamics import (
    AssumptionReport,
    Scaling,
    SpecError,
    State,
    SystemSpec,
    Variant,
    make_field,
    recover_velocity,
    validate_assumption_function,
    validate_assumption_operator,
)
from .integrator import IntegrationError, IntegratorControls, TimeRangeError, Trajectory, dense_eval, integrate, simulate
from .problems import (
    OperatorProblem,
    ProblemError,
    ScalarProblem,
    build_operator_problem,
    build_scalar_problem,
    check_convexity,
    check_monotone,
)
from .rescaling import (
    EquivalenceReport,
    TimeMap,
    equivalence_check,
    heavy_twin,
    map_initial_conditions,
    special_b,
    special_mu_gamma,
)

__version__ = "0.1.0"
