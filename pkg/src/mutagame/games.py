"""Stage-game and repeated-game analysis under a fixed rule state.

Provides exact pure-strategy Nash enumeration, best-response correspondences,
the grim-trigger cooperation threshold, scripted trigger-strategy rollouts,
and the Jaccard churn metric between the equilibrium sets of consecutive
(mutated) stage games.

Miner-specific helpers build two views of the stage game at a protocol state:
``analyze_incentives`` extracts the per-agent cooperate / temptation /
punishment payoffs that drive the simulation's strategy rules, and
``restricted_stage_game`` materializes the binary {honest, own-temptation}
game used for equilibrium-churn tracking (the full six-action product is far
beyond the enumeration bound at ten players).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (
    Action,
    ActionConstants,
    DEVIANT_ACTIONS,
    ProtocolState,
    RewardSchedule,
    stage_payoffs,
    stage_payoffs_batch,
)

__all__ = [
    "ENUMERATION_BOUND",
    "CapacityError",
    "EquilibriumReport",
    "GameIncentives",
    "StageGame",
    "TriggerKind",
    "analyze_incentives",
    "best_response",
    "critical_delta",
    "equilibrium_churn",
    "game_critical_delta",
    "pure_nash",
    "report_for",
    "restricted_stage_game",
    "simulate_trigger",
]

log = logging.getLogger("mutagame.games")

ENUMERATION_BOUND = 10**6

# Payoff comparisons treat differences below this as ties, so enumeration is
# robust to float noise while staying deterministic.
_TIE_EPS = 1e-12


class CapacityError(RuntimeError):
    """Profile space too large for exact enumeration."""


class TriggerKind:
    GRIM = "grim"
    TIT_FOR_TAT = "tit_for_tat"


@dataclass(frozen=True)
class StageGame:
    """Finite normal-form game with a total payoff tensor.

    ``payoff_tensor`` maps every joint action profile (tuple, one action per
    player) to the per-player payoff vector.
    """

    n_players: int
    actions_per_player: tuple
    payoff_tensor: dict

    def __post_init__(self):
        size = 1
        for acts in self.actions_per_player:
            if len(acts) == 0:
                raise ValueError("every player needs at least one action")
            size *= len(acts)
        if len(self.payoff_tensor) != size:
            raise ValueError("payoff tensor must be total over the profile product")
        for vec in self.payoff_tensor.values():
            if len(vec) != self.n_players or not all(np.isfinite(v) for v in vec):
                raise ValueError("payoff vectors must be finite, one entry per player")

    def profile_count(self) -> int:
        size = 1
        for acts in self.actions_per_player:
            size *= len(acts)
        return size

    def payoff(self, profile, player: int) -> float:
        return self.payoff_tensor[tuple(profile)][player]


@dataclass(frozen=True)
class EquilibriumReport:
    pure_nash: frozenset
    action_signature: tuple = ()  # actions_per_player of the source game
    churn: float | None = None
    best_responses: dict | None = field(default=None, compare=False)


def report_for(game: StageGame, with_best_responses: bool = False) -> EquilibriumReport:
    """Equilibrium report of a stage game (pure Nash set, optionally the
    full best-response correspondence)."""
    responses = None
    if with_best_responses:
        responses = {}
        for player in range(game.n_players):
            others = [acts for i, acts in enumerate(game.actions_per_player) if i != player]
            for combo in itertools.product(*others):
                profile = list(combo[:player]) + [game.actions_per_player[player][0]] + list(
                    combo[player:]
                )
                responses[(player, combo)] = best_response(game, player, profile)
    return EquilibriumReport(
        pure_nash=pure_nash(game),
        action_signature=tuple(tuple(a) for a in game.actions_per_player),
        best_responses=responses,
    )


def best_response(game: StageGame, player: int, opponents_profile) -> tuple:
    """All payoff-maximizing actions for ``player`` against a fixed profile.

    ``opponents_profile`` is a full-length profile; the entry at ``player`` is
    ignored. Ties are returned in action order.
    """
    if not 0 <= player < game.n_players:
        raise IndexError(f"player {player} out of range for {game.n_players}-player game")
    profile = list(opponents_profile)
    best_val = -np.inf
    best = []
    for action in game.actions_per_player[player]:
        profile[player] = action
        val = game.payoff(profile, player)
        if val > best_val + _TIE_EPS:
            best_val = val
            best = [action]
        elif val >= best_val - _TIE_EPS:
            best.append(action)
    return tuple(best)


def pure_nash(game: StageGame) -> frozenset:
    """Exact set of pure-strategy Nash profiles by full enumeration."""
    if game.profile_count() > ENUMERATION_BOUND:
        raise CapacityError(
            f"profile space {game.profile_count()} exceeds bound {ENUMERATION_BOUND}"
        )
    equilibria = []
    for profile in itertools.product(*game.actions_per_player):
        payoffs = game.payoff_tensor[profile]
        stable = True
        for player in range(game.n_players):
            own = payoffs[player]
            alt = list(profile)
            for action in game.actions_per_player[player]:
                if action == profile[player]:
                    continue
                alt[player] = action
                if game.payoff(alt, player) > own + _TIE_EPS:
                    stable = False
                    break
            alt[player] = profile[player]
            if not stable:
                break
        if stable:
            equilibria.append(profile)
    return frozenset(equilibria)


def critical_delta(coop_payoff: float, deviation_payoff: float, punishment_payoff: float) -> float:
    """Grim-trigger cooperation threshold delta* = (D - C) / (D - P).

    Cooperation is sustainable exactly when the per-epoch discount factor
    meets or exceeds the returned value. Degenerate orderings collapse to the
    boundary: no temptation gives 0, toothless punishment gives 1.
    """
    c, d, p = coop_payoff, deviation_payoff, punishment_payoff
    if d <= c:
        log.debug("critical_delta: no temptation (D=%.6g <= C=%.6g)", d, c)
        return 0.0
    if p >= c:
        log.debug("critical_delta: punishment does not deter (P=%.6g >= C=%.6g)", p, c)
        return 1.0
    return (d - c) / (d - p)


def simulate_trigger(
    game: StageGame,
    trigger: str,
    deviant_epoch: int | None,
    delta: float,
    horizon: int,
) -> np.ndarray:
    """Play the repeated game under a trigger convention; return discounted utilities.

    By convention action index 0 is the cooperative action and index 1 the
    punishment action for every player. When ``deviant_epoch`` is set, player
    0 plays its one-shot best response to the cooperative profile at that
    epoch and reverts to its strategy afterwards.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    if deviant_epoch is not None and deviant_epoch >= horizon:
        raise ValueError(f"deviant_epoch {deviant_epoch} beyond horizon {horizon}")
    if trigger not in (TriggerKind.GRIM, TriggerKind.TIT_FOR_TAT):
        raise ValueError(f"unknown trigger kind: {trigger}")
    for acts in game.actions_per_player:
        if len(acts) < 2:
            raise ValueError("trigger play needs a cooperate and a punish action per player")

    coop = tuple(acts[0] for acts in game.actions_per_player)
    punish = tuple(acts[1] for acts in game.actions_per_player)
    utilities = np.zeros(game.n_players)
    weight = 1.0
    grim_tripped = False
    last_profile = coop
    for t in range(horizon):
        if trigger == TriggerKind.GRIM:
            base = punish if grim_tripped else coop
        else:  # tit for tat: punish whoever saw any defection last epoch
            base = tuple(
                punish[i]
                if any(last_profile[j] != coop[j] for j in range(game.n_players) if j != i)
                else coop[i]
                for i in range(game.n_players)
            )
        profile = list(base)
        if deviant_epoch is not None and t == deviant_epoch:
            profile[0] = best_response(game, 0, profile)[0]
        profile = tuple(profile)
        payoffs = game.payoff_tensor[profile]
        for i in range(game.n_players):
            utilities[i] += weight * payoffs[i]
        weight *= delta
        if any(profile[i] != coop[i] for i in range(game.n_players)):
            grim_tripped = True
        last_profile = profile
    return utilities


def equilibrium_churn(prev: EquilibriumReport, next_: EquilibriumReport) -> float:
    """Jaccard distance between consecutive pure-Nash sets (0 if both empty)."""
    if (
        prev.action_signature
        and next_.action_signature
        and prev.action_signature != next_.action_signature
    ):
        raise ValueError("equilibrium reports come from games with different action sets")
    union = prev.pure_nash | next_.pure_nash
    if not union:
        return 0.0
    inter = prev.pure_nash & next_.pure_nash
    return 1.0 - len(inter) / len(union)


@dataclass(frozen=True)
class GameIncentives:
    """Per-agent incentive summary of a miner stage game.

    ``coop`` / ``temptation_payoff`` / ``punishment`` are the all-honest,
    best-unilateral-deviation, and all-deviant payoffs; ``temptation`` the
    argmax deviant action (lowest index on ties) and ``delta_star`` the
    per-agent grim-trigger threshold.
    """

    coop: np.ndarray
    temptation_payoff: np.ndarray
    punishment: np.ndarray
    temptation: tuple
    delta_star: np.ndarray


def analyze_incentives(
    agents,
    state: ProtocolState,
    schedule: RewardSchedule,
    constants: ActionConstants,
    epoch: int = 0,
) -> GameIncentives:
    """Cooperate/deviate/punish payoffs of the miner stage game at ``state``.

    Decision analysis values the fee pool at its mean: realized fee noise
    moves payoffs, never strategies.
    """
    n = len(agents)
    honest = np.zeros(n, dtype=np.int64)
    # One batch: the honest profile, then every unilateral deviation.
    profiles = [honest]
    for i in range(n):
        for action in DEVIANT_ACTIONS:
            row = honest.copy()
            row[i] = int(action)
            profiles.append(row)
    table = stage_payoffs_batch(
        agents, np.stack(profiles), state, schedule, epoch, constants
    )
    coop = table[0]
    temptation = []
    tempt_pay = np.empty(n)
    for i in range(n):
        best_action = DEVIANT_ACTIONS[0]
        best_val = table[1 + i * len(DEVIANT_ACTIONS)][i]
        for k, action in enumerate(DEVIANT_ACTIONS[1:], start=1):
            val = table[1 + i * len(DEVIANT_ACTIONS) + k][i]
            if val > best_val + _TIE_EPS:
                best_val = val
                best_action = action
        temptation.append(best_action)
        tempt_pay[i] = best_val
    punishment = stage_payoffs(agents, temptation, state, schedule, epoch, constants)
    delta_star = np.array(
        [critical_delta(coop[i], tempt_pay[i], punishment[i]) for i in range(n)]
    )
    return GameIncentives(
        coop=coop,
        temptation_payoff=tempt_pay,
        punishment=punishment,
        temptation=tuple(temptation),
        delta_star=delta_star,
    )


def game_critical_delta(incentives: GameIncentives) -> float:
    """Binding cooperation threshold: the largest per-agent delta*."""
    return float(incentives.delta_star.max())


def restricted_stage_game(
    agents,
    state: ProtocolState,
    schedule: RewardSchedule,
    constants: ActionConstants,
    epoch: int = 0,
    incentives: GameIncentives | None = None,
    temptations: tuple | None = None,
) -> StageGame:
    """Binary {honest, own temptation} stage game for churn tracking.

    ``temptations`` pins the deviant action per player; churn comparisons
    across mutated states pass the initial temptation profile so consecutive
    games share identical action sets while the payoffs move.
    """
    if temptations is None:
        if incentives is None:
            incentives = analyze_incentives(agents, state, schedule, constants, epoch)
        temptations = incentives.temptation
    n = len(agents)
    if 2**n > ENUMERATION_BOUND:
        raise CapacityError(f"restricted game with {n} players exceeds enumeration bound")
    actions = tuple((Action.HONEST, temptations[i]) for i in range(n))
    profiles = list(itertools.product(*actions))
    table = stage_payoffs_batch(
        agents,
        np.array([[int(a) for a in p] for p in profiles]),
        state,
        schedule,
        epoch,
        constants,
    )
    tensor = {p: tuple(table[k]) for k, p in enumerate(profiles)}
    return StageGame(n_players=n, actions_per_player=actions, payoff_tensor=tensor)
