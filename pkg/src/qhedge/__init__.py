"""Quantile hedging prices in (non-linear) Black-Scholes markets.

Solver library plus CLI: piecewise constant policy timestepping with a
monotone implicit finite-difference step per control, an analytical /
Monte-Carlo reference for the linear complete market, and an experiment
harness for the convergence and step-size studies.
"""

from .grids import (
    AdjustedControl,
    ControlSet,
    TimeGrid,
    XGrid,
    adjust_control,
    build_explicit_control_set,
    build_linear_case_controls,
    build_paper_control_set,
    build_time_grid,
    build_xgrid,
)
from .model import (
    AssumptionReport,
    CflReport,
    DriverKind,
    DriverSpec,
    MarketModel,
    Payoff,
    SchemeParams,
    check_assumptions,
    check_cfl,
    driver_lipschitz,
    driver_lipschitz_components,
    eval_driver,
)
from .reference import (
    LinearQuantileProblem,
    OracleResult,
    driftless_put_price,
    flat_zero_threshold,
    linear_quantile_price,
    mc_oracle,
    normal_cdf,
    normal_inv,
    optimal_alpha,
    validate_reference,
    x_boundary_values,
)
from .solver import (
    SuperRepCurve,
    ValueSurface,
    interpolate_p,
    min_reduce,
    pcpt_backward_solve,
    solve_superreplication,
)
from .stepping import (
    CflViolation,
    ControlField,
    PicardNonConvergence,
    StencilSample,
    contraction_factor,
    hamiltonian_F,
    lax_friedrichs_hat_F,
    picard_step_boundary,
    picard_step_interior,
    stencil_2d,
)

__version__ = "0.1.0"
