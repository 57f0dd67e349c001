"""Deterministic, seedable simulator of miner strategy under mutable protocol rules."""

__version__ = "0.1.0"

from .config import SimConfig, StrategyRule, load_config
from .discounting import (
    DiscountParams,
    discounted_utility,
    effective_rate,
    expected_revenue_decay,
    update_confidence,
    update_discount,
    volatility_discount,
)
from .dp import DiscreteStateSpace, ValueSolution, abandonment_volatility, build_state_space, value_iterate
from .games import (
    EquilibriumReport,
    StageGame,
    best_response,
    critical_delta,
    equilibrium_churn,
    pure_nash,
    simulate_trigger,
)
from .harness import EpochRecord, SimResult, SweepResult, detect_threshold, run_simulation, run_sweep, simulate
from .model import (
    Action,
    ActionConstants,
    MinerAgent,
    ProtocolState,
    RewardSchedule,
    gross_reward,
    stage_payoff,
    stage_payoffs,
    subsidy_at,
)
from .mutation import MutationConfig, VolatilityEstimate, step_protocol, update_volatility

__all__ = [name for name in dir() if not name.startswith("_")]
