"""Core model objects: protocol states, miner agents, actions, and stage payoffs.

The stage game distributes one block interval's gross reward (subsidy plus a
noisy, relay-filtered fee pool) across miners in proportion to effective hash
share, then applies per-action adjustments:

* ``EMPTY_BLOCK`` forfeits fee income but skips the validation share of opex.
* ``FEE_SNIPE`` grabs a flat slice of the open fee pool at the expense of the
  cooperative pool, and every sniper adds orphan-race contention that burns a
  fraction of block value for all participants.
* ``SELFISH_WITHHOLD`` inflates the withholder's effective share and damages
  everyone else's block value in proportion to the withheld share. Withheld
  blocks keep their fee flow private (it cannot be sniped), and a withholder
  whose effective share exceeds one half wins every orphan race: it is immune
  to contention losses entirely.
* ``LOBBY`` earns like honest play but pays an extra influence cost (its real
  payoff is the transition-kernel tilt handled by the mutation module).
* ``EXIT`` removes the agent from the block lottery for the epoch; it earns
  nothing and pays only a residual fraction of opex.

Expected-value payoffs (deterministic pro-rata split) are the default; a
block-lottery mode that samples a single winner per epoch is available via
``realize_payoffs``. All payoff evaluation funnels through one batch kernel,
so scalar and vectorized callers cannot drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "Action",
    "ActionConstants",
    "MinerAgent",
    "ProtocolState",
    "RewardSchedule",
    "DEVIANT_ACTIONS",
    "MAJORITY_SHARE",
    "amortization_epochs",
    "gross_reward",
    "is_deviant",
    "realize_payoffs",
    "stage_payoff",
    "stage_payoffs",
    "stage_payoffs_batch",
    "subsidy_at",
]

# Effective share above which a withholder wins every orphan race.
MAJORITY_SHARE = 0.5


class Action(IntEnum):
    """One action per agent per epoch. Everything except HONEST is deviant."""

    HONEST = 0
    SELFISH_WITHHOLD = 1
    EMPTY_BLOCK = 2
    FEE_SNIPE = 3
    LOBBY = 4
    EXIT = 5

    @property
    def label(self) -> str:
        return self.name.lower()


DEVIANT_ACTIONS = (
    Action.SELFISH_WITHHOLD,
    Action.EMPTY_BLOCK,
    Action.FEE_SNIPE,
    Action.LOBBY,
    Action.EXIT,
)


def is_deviant(action: Action) -> bool:
    return action != Action.HONEST


@dataclass(frozen=True)
class ProtocolState:
    """The mutable rule vector: one point in the protocol parameter space."""

    block_size_limit: float = 1.0  # megabytes, > 0
    relay_strictness: float = 0.1  # fraction of fee flow filtered out, [0, 1]
    fee_threshold: float = 1.0  # min fee-rate for inclusion, >= 0
    validation_overhead: float = 0.05  # opex fraction skipped by empty blocks, [0, 1]
    epoch_of_last_shock: int = 0

    def __post_init__(self):
        if not self.block_size_limit > 0:
            raise ValueError(f"block_size_limit must be > 0, got {self.block_size_limit}")
        if not 0.0 <= self.relay_strictness <= 1.0:
            raise ValueError(f"relay_strictness must be in [0, 1], got {self.relay_strictness}")
        if self.fee_threshold < 0:
            raise ValueError(f"fee_threshold must be >= 0, got {self.fee_threshold}")
        if not 0.0 <= self.validation_overhead <= 1.0:
            raise ValueError(
                f"validation_overhead must be in [0, 1], got {self.validation_overhead}"
            )
        if self.epoch_of_last_shock < 0:
            raise ValueError("epoch_of_last_shock must be >= 0")

    def continuous_vector(self) -> np.ndarray:
        return np.array(
            [
                self.block_size_limit,
                self.relay_strictness,
                self.fee_threshold,
                self.validation_overhead,
            ]
        )


@dataclass(frozen=True)
class MinerAgent:
    """Immutable agent spec; per-epoch state (discount, confidence, strategy)
    is owned by the simulation loop."""

    id: int
    hash_share: float
    beta: float = 1.0 / 9.0  # intrinsic time preference
    kappa: float = 1.0  # sensitivity to institutional noise
    discount: float = 0.9  # initial per-epoch discount factor
    confidence: float = 1.0  # initial institutional confidence
    capital_stock: float = 0.0
    opex_rate: float = 0.0  # currency per epoch at full honest operation
    strategy: Action = Action.HONEST

    def __post_init__(self):
        if not 0.0 < self.hash_share <= 1.0:
            raise ValueError(f"hash_share must be in (0, 1], got {self.hash_share}")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError("confidence must be in (0, 1]")
        if self.capital_stock < 0 or self.opex_rate < 0:
            raise ValueError("capital_stock and opex_rate must be >= 0")


@dataclass(frozen=True)
class RewardSchedule:
    """Block subsidy with halving plus a noisy per-block fee pool."""

    initial_subsidy: float = 50.0
    halving_interval: int = 210_000
    base_fee_pool: float = 16.0
    fee_noise_sd: float = 2.0

    def __post_init__(self):
        if self.initial_subsidy <= 0:
            raise ValueError("initial_subsidy must be > 0")
        if self.halving_interval <= 0:
            raise ValueError("halving_interval must be > 0")
        if self.base_fee_pool < 0 or self.fee_noise_sd < 0:
            raise ValueError("base_fee_pool and fee_noise_sd must be >= 0")


@dataclass(frozen=True)
class ActionConstants:
    """Behaviour constants for the per-action payoff adjustments.

    ``snipe_bonus`` is the fee-pool fraction each sniper grabs, ``snipe_burn``
    the per-sniper orphan contention burn. ``withhold_edge`` is the effective
    share multiplier for a withholder; ``withhold_damage`` scales the block
    value lost by everyone else per withheld share, while
    ``withhold_self_risk`` scales the withholder's own orphan exposure, which
    shrinks linearly to zero as its effective share approaches a majority.
    """

    snipe_bonus: float = 0.5
    snipe_burn: float = 0.2
    withhold_edge: float = 0.15
    withhold_damage: float = 0.5
    withhold_self_risk: float = 0.5
    lobby_cost_frac: float = 0.2
    exit_residual: float = 0.1
    validation_saving: float = 1.0

    def __post_init__(self):
        for name in (
            "snipe_bonus",
            "snipe_burn",
            "withhold_edge",
            "withhold_damage",
            "withhold_self_risk",
            "lobby_cost_frac",
            "exit_residual",
            "validation_saving",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.snipe_burn >= 1 or self.withhold_damage >= 1 or self.withhold_self_risk > 1:
            raise ValueError("burn/damage/self-risk fractions must stay below 1")


def subsidy_at(schedule: RewardSchedule, epoch: int) -> float:
    """Block subsidy at ``epoch``: halves once per halving interval."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return schedule.initial_subsidy * 0.5 ** (epoch // schedule.halving_interval)


def gross_reward(schedule: RewardSchedule, epoch: int, fee_draw: float) -> float:
    """Gross block value: subsidy plus the realized fee pool."""
    if fee_draw < 0:
        raise ValueError("fee_draw must be clamped at 0 before use")
    return subsidy_at(schedule, epoch) + fee_draw


def _reward_components(agents, profiles, state, schedule, epoch, constants, fee_draw):
    """Batch payoff kernel over a (P, n) array of action profiles.

    Returns ``(share_part, flat_part, winner_block, costs, weights)`` arrays
    of shape (P, n): the pro-rata reward, the share-independent snipe bonus,
    the full block value collected on a lottery win, per-agent costs, and the
    effective lottery weights.
    """
    n = len(agents)
    act = np.asarray(profiles, dtype=np.int64)
    if act.ndim == 1:
        act = act[None, :]
    if n == 0 or act.shape[1] != n:
        raise ValueError("profile must supply exactly one action per agent")

    cons = constants
    shares = np.array([a.hash_share for a in agents])
    opex = np.array([a.opex_rate for a in agents])

    active = act != Action.EXIT
    withhold = act == Action.SELFISH_WITHHOLD
    snipe = act == Action.FEE_SNIPE
    empty = act == Action.EMPTY_BLOCK
    lobby = act == Action.LOBBY

    costs = np.where(active, opex, cons.exit_residual * opex)
    costs = np.where(
        empty, opex * (1.0 - cons.validation_saving * state.validation_overhead), costs
    )
    costs = np.where(lobby, opex * (1.0 + cons.lobby_cost_frac), costs)

    raw = np.where(active, shares, 0.0)
    raw = np.where(withhold, raw * (1.0 + cons.withhold_edge), raw)
    norm = raw.sum(axis=1, keepdims=True)
    live = norm[:, 0] > 0  # rows where at least one agent still mines
    weights = np.divide(raw, norm, out=np.zeros_like(raw), where=norm > 0)

    subsidy = subsidy_at(schedule, epoch)
    fee_pool = max(fee_draw, 0.0) * (1.0 - state.relay_strictness)

    # Withheld blocks keep their fee flow private; only the open remainder of
    # the pool can be sniped.
    majority = withhold & (weights > MAJORITY_SHARE)
    withheld_share = np.where(withhold, weights, 0.0).sum(axis=1)
    open_pool = fee_pool * (1.0 - withheld_share)
    n_snipe = snipe.sum(axis=1).astype(float)
    total_sniped = np.minimum(n_snipe * cons.snipe_bonus, 1.0) * open_pool
    per_sniper = np.divide(
        total_sniped, n_snipe, out=np.zeros_like(total_sniped), where=n_snipe > 0
    )
    coop_frac = np.divide(
        open_pool - total_sniped,
        open_pool,
        out=np.zeros_like(open_pool),
        where=open_pool > 0,
    )

    # Orphan-race survival factor: sniper contention burns value for everyone,
    # each withholder damages the others, and a non-majority withholder
    # carries its own exposure. Majority withholders are immune.
    q = np.repeat(((1.0 - cons.snipe_burn) ** n_snipe)[:, None], n, axis=1)
    dmg = np.where(withhold, 1.0 - cons.withhold_damage * weights, 1.0)
    q *= dmg.prod(axis=1, keepdims=True) / dmg  # damage from the *other* withholders
    self_risk = 1.0 - cons.withhold_self_risk * np.maximum(0.0, 1.0 - 2.0 * weights)
    q = np.where(withhold, q * self_risk, q)
    q[majority] = 1.0

    fee_gain = np.where(
        withhold, weights * fee_pool, weights * fee_pool * coop_frac[:, None]
    )
    fee_gain = np.where(empty, 0.0, fee_gain)
    share_part = np.where(active & live[:, None], q * (weights * subsidy + fee_gain), 0.0)
    flat_part = np.where(snipe, q * per_sniper[:, None], 0.0)
    winner_block = np.divide(
        share_part, weights, out=np.zeros_like(share_part), where=weights > 0
    )
    return share_part, flat_part, winner_block, costs, weights


def stage_payoffs_batch(
    agents,
    profiles,
    state: ProtocolState,
    schedule: RewardSchedule,
    epoch: int,
    constants: ActionConstants,
    fee_draw: float | None = None,
) -> np.ndarray:
    """Expected-value stage payoffs, shape (P, n), for a batch of profiles."""
    if fee_draw is None:
        fee_draw = schedule.base_fee_pool
    share, flat, _, costs, _ = _reward_components(
        agents, profiles, state, schedule, epoch, constants, fee_draw
    )
    return share + flat - costs


def stage_payoffs(
    agents,
    profile,
    state: ProtocolState,
    schedule: RewardSchedule,
    epoch: int,
    constants: ActionConstants,
    fee_draw: float | None = None,
) -> np.ndarray:
    """Expected-value stage payoffs for every agent under one profile.

    ``fee_draw`` is the realized fee pool before relay filtering; it defaults
    to the schedule's mean pool, which is what strategy analysis uses.
    """
    profile = [int(a) for a in profile]
    return stage_payoffs_batch(agents, [profile], state, schedule, epoch, constants, fee_draw)[0]


def stage_payoff(
    agents,
    agent_index: int,
    profile,
    state: ProtocolState,
    schedule: RewardSchedule,
    epoch: int,
    constants: ActionConstants,
    fee_draw: float | None = None,
) -> float:
    """Stage payoff of one agent (see :func:`stage_payoffs`)."""
    if not 0 <= agent_index < len(agents):
        raise IndexError(f"agent_index {agent_index} out of range")
    return float(
        stage_payoffs(agents, profile, state, schedule, epoch, constants, fee_draw)[agent_index]
    )


def realize_payoffs(
    agents,
    profile,
    state: ProtocolState,
    schedule: RewardSchedule,
    epoch: int,
    constants: ActionConstants,
    fee_draw: float,
    lottery: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Realized payoffs for one epoch.

    In expected-value mode this equals :func:`stage_payoffs`. In lottery mode
    a single winner is sampled proportional to effective share and takes the
    whole pro-rata block; flat snipe bonuses are paid out regardless.
    """
    share, flat, winner_block, costs, weights = _reward_components(
        agents, [[int(a) for a in profile]], state, schedule, epoch, constants, fee_draw
    )
    share, flat, winner_block = share[0], flat[0], winner_block[0]
    costs, weights = costs[0], weights[0]
    if not lottery:
        return share + flat - costs
    if rng is None:
        raise ValueError("lottery mode needs an rng")
    rewards = flat.copy()
    if weights.sum() > 0:
        winner = int(rng.choice(len(agents), p=weights))
        rewards[winner] += winner_block[winner]
    return rewards - costs


def amortization_epochs(agent: MinerAgent, per_epoch_margin: float) -> float:
    """Epochs needed to recover capital at the given margin (inf if none)."""
    if per_epoch_margin <= 0:
        return math.inf
    return agent.capital_stock / per_epoch_margin
