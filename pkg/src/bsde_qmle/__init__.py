"""Drift estimation for ergodic (backward) SDEs with unobserved volatility.

Simulation of synthetic records, the block realized-covariance
quasi-likelihood estimator and a Monte Carlo harness around both.
"""

__version__ = "0.1.0"

from .drivers import DriverSpec, ThetaBox, builtin_driver, eval_driver_jacobian
from .errors import (
    AllDegenerate,
    ConfigError,
    DegenerateGamma,
    DegenerateZ,
    DimError,
    InsufficientData,
    MetricUndefined,
    OptFailure,
    SimulationBlowup,
    SingularSystem,
    UnknownDriver,
)
from .estimator import (
    BlockScheme,
    EstimationResult,
    QuasiLikEval,
    RealizedBlockCov,
    build_blocks,
    closed_form_linear,
    gamma_plugin,
    maximize_quasi_lik,
    prepare_blocks,
    quasi_loglik,
    realized_block_cov,
)
from .rates import RateSchedule, check_rate_conditions, schedule
from .sde_sim import (
    ObservationRecord,
    ScenarioSpec,
    constant_vol_scenario,
    heston_2d_scenario,
    simulate_cir_full_truncation,
    simulate_scenario,
    simulate_vasicek_exact,
    vasicek_1d_scenario,
)
