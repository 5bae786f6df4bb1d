"""Security analysis toolkit for coherent-state CV-QKD with heterodyne detection."""

from .gaussian import (
    ChannelParams,
    DomainError,
    MultiModeCovariance,
    SingularMatrixError,
    SymplecticPair,
    TwoModeCovariance,
    channel_from_loss_db,
    conditional_variance,
    make_channel,
)
from .keyrates import KeyRateReport, RhoSolution, all_rates, solve_rho
from .montecarlo import EstimatorResult, SimConfig, run_sim
from .optical import solve_feed_forward, solve_teleportation
from .search import AttackSolution, SearchConfig, construct_optimal, optimize_attack

__all__ = [
    "AttackSolution",
    "ChannelParams",
    "DomainError",
    "EstimatorResult",
    "KeyRateReport",
    "MultiModeCovariance",
    "RhoSolution",
    "SearchConfig",
    "SimConfig",
    "SingularMatrixError",
    "SymplecticPair",
    "TwoModeCovariance",
    "all_rates",
    "channel_from_loss_db",
    "conditional_variance",
    "construct_optimal",
    "make_channel",
    "optimize_attack",
    "run_sim",
    "solve_feed_forward",
    "solve_rho",
    "solve_teleportation",
]
