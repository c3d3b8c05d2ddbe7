"""Minimum-energy bounds and energy-delay scheduling for body-area piconets."""

from .channel import ChannelModel, DiscreteChannel, mean_inverse_gain
from .minenergy import (
    EnergyFunctionResult,
    InfeasibleRateError,
    ThresholdRateTable,
    build_mu_tilde,
    decision_rule,
    monte_carlo_gamma_c,
    phi_lower,
    phi_upper,
    phi_upper_unoptimized,
    prune_to_concave,
    single_sensor_breakpoints,
    single_sensor_gamma_c,
    solve_lambda,
    subgradient_solve,
)
from .phy import GoodputTable, PhyMode, PhyModeSet, ThresholdMode, effective_rate_mu, p_null
from .policy import ArrivalLaw, SchedulerConfig, derive_constants
from .sim import Scenario, SimMetrics, Simulator, run_episode, sweep_v

__version__ = "0.1.0"
