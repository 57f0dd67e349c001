"""Value iteration over a discretized protocol-state space.

The continuous rule vector is discretized on a per-field uniform grid and the
one-step transition kernel is estimated by Monte Carlo: sampled next states
are projected to their nearest grid point. Each grid state carries a local
discount factor derived from the empirical variance of its sampled one-step
shock magnitudes via the structural volatility discount.

Two solvers operate on the space:

* :func:`value_iterate` is the plain single-agent program against a frozen
  background profile: ``V(s) = max_a { u(s, a) + delta(s) * E[V(s')] }``.
  Because opponents never react, its greedy policy is the per-state myopic
  best action.
* :func:`cooperative_value_iterate` evaluates the repeated-game trade-off
  against trigger-enforcing opponents: staying honest earns the cooperative
  payoff and keeps the choice open, while a deviation earns the one-shot
  temptation and drops the agent into the permanently punished regime. Its
  policy is the one consulted by :func:`abandonment_volatility`, which scans
  a mutability grid for the first level at which honesty is abandoned at the
  baseline state.

``bridge_phi_linear`` maps the realized-shock discount decay expected over a
finite horizon onto an equivalent structural phi slope, so the stationary
solver and the epoch-loop simulation collapse at comparable mutability
levels.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .discounting import DiscountParams, volatility_discount
from .games import GameIncentives, analyze_incentives
from .model import (
    Action,
    ActionConstants,
    ProtocolState,
    RewardSchedule,
    stage_payoffs_batch,
)
from .mutation import MutationConfig, sample_transitions
from .seeds import derive_seed, make_rng

__all__ = [
    "STATE_CAP",
    "DiscreteStateSpace",
    "NonConvergenceError",
    "ValueSolution",
    "abandonment_volatility",
    "bridge_phi_linear",
    "build_state_space",
    "cooperative_value_iterate",
    "value_iterate",
]

STATE_CAP = 10_000

# Grid ranges per continuous field: bounded fields span their legal range,
# open-ended fields a band around the baseline magnitude.
_GRID_RANGES = ((0.25, 2.0), (0.0, 1.0), (0.25, 2.0), (0.0, 1.0))


class NonConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"value iteration residual {residual:.3e} after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Protocol grid, empirical kernel, and per-state discount factors."""

    states: tuple  # ProtocolState grid points
    transition: np.ndarray  # row-stochastic (S, S)
    delta_per_state: np.ndarray  # (S,)
    local_sigma2: np.ndarray  # (S,) empirical shock-magnitude variance
    grid_axes: tuple  # per-field grid levels


@dataclass(frozen=True)
class ValueSolution:
    values: np.ndarray
    policy: tuple  # per-state Action
    iterations: int
    residual: float
    residual_history: tuple = ()


def _grid_axes(grid_levels: int) -> tuple:
    axes = []
    for lo, hi in _GRID_RANGES:
        axes.append(np.linspace(lo, hi, grid_levels))
    return tuple(axes)


def _nearest_index(fields: np.ndarray, axes) -> np.ndarray:
    """Nearest grid state (row index) for each row of ``fields``."""
    idx = np.zeros(len(fields), dtype=np.int64)
    for k, axis in enumerate(axes):
        pos = np.clip(np.searchsorted(axis, fields[:, k]), 1, len(axis) - 1)
        left = axis[pos - 1]
        right = axis[pos]
        nearest = np.where(fields[:, k] - left <= right - fields[:, k], pos - 1, pos)
        idx = idx * len(axis) + nearest
    return idx


def nearest_state_index(space: DiscreteStateSpace, state: ProtocolState) -> int:
    return int(_nearest_index(state.continuous_vector()[None, :], space.grid_axes)[0])


def build_state_space(
    cfg: MutationConfig,
    grid_levels: int,
    samples: int,
    seed: int,
    discount: DiscountParams | None = None,
    lobby_count: int = 0,
) -> DiscreteStateSpace:
    """Discretize the protocol space and estimate the transition kernel.

    Each row draws ``samples`` one-step transitions from its grid state and
    projects them to nearest grid points; rows are seeded independently so
    the kernel is schedule-independent and reproducible.
    """
    if grid_levels < 2:
        raise ValueError("grid_levels must be >= 2")
    if samples < 100:
        raise ValueError("samples must be >= 100")
    if discount is None:
        discount = DiscountParams()
    axes = _grid_axes(grid_levels)
    n_states = int(np.prod([len(a) for a in axes]))
    if n_states > STATE_CAP:
        raise ValueError(f"{n_states} grid states exceed the cap of {STATE_CAP}")

    states = []
    for combo in itertools.product(*axes):
        states.append(
            ProtocolState(
                block_size_limit=float(combo[0]),
                relay_strictness=float(combo[1]),
                fee_threshold=float(combo[2]),
                validation_overhead=float(combo[3]),
            )
        )

    transition = np.zeros((n_states, n_states))
    sigma2 = np.zeros(n_states)
    for row, state in enumerate(states):
        rng = make_rng(derive_seed(seed, row))
        fields, _, mags = sample_transitions(state, cfg, lobby_count, samples, rng)
        targets = _nearest_index(fields, axes)
        counts = np.bincount(targets, minlength=n_states)
        transition[row] = counts / samples
        sigma2[row] = float(np.mean((mags - mags.mean()) ** 2))
    delta = np.array([volatility_discount(discount, s2) for s2 in sigma2])
    return DiscreteStateSpace(
        states=tuple(states),
        transition=transition,
        delta_per_state=delta,
        local_sigma2=sigma2,
        grid_axes=axes,
    )


def _stage_utilities(space, agent_index, agents, schedule, constants, actions):
    """u(s, a) table, shape (S, A): agent's payoff at each grid state for each
    own action, opponents frozen to all-honest, fees at their mean."""
    n = len(agents)
    table = np.empty((len(space.states), len(actions)))
    for si, state in enumerate(space.states):
        profiles = np.zeros((len(actions), n), dtype=np.int64)
        for k, action in enumerate(actions):
            profiles[k, agent_index] = int(action)
        table[si] = stage_payoffs_batch(
            agents, profiles, state, schedule, 0, constants
        )[:, agent_index]
    return table


def value_iterate(
    space: DiscreteStateSpace,
    agents,
    agent_index: int,
    schedule: RewardSchedule,
    constants: ActionConstants,
    tolerance: float = 1e-8,
    max_iter: int = 2000,
    actions: tuple = tuple(Action),
) -> ValueSolution:
    """Solve the frozen-background program by sup-norm fixed-point iteration.

    Converges geometrically because every per-state discount factor is below
    one. Raises :class:`NonConvergenceError` when ``max_iter`` is hit first.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    u = _stage_utilities(space, agent_index, agents, schedule, constants, actions)
    delta = space.delta_per_state[:, None]
    values = np.zeros(len(space.states))
    residual = math.inf
    history = []
    for iteration in range(1, max_iter + 1):
        continuation = space.transition @ values
        q = u + delta * continuation[:, None]
        new_values = q.max(axis=1)
        residual = float(np.abs(new_values - values).max())
        history.append(residual)
        values = new_values
        if residual <= tolerance:
            policy = tuple(actions[k] for k in q.argmax(axis=1))
            return ValueSolution(
                values=values,
                policy=policy,
                iterations=iteration,
                residual=residual,
                residual_history=tuple(history),
            )
    raise NonConvergenceError(residual, max_iter)


def backward_induction(
    space: DiscreteStateSpace,
    agents,
    agent_index: int,
    schedule: RewardSchedule,
    constants: ActionConstants,
    horizon: int,
    actions: tuple = tuple(Action),
) -> np.ndarray:
    """Finite-horizon values by explicit backward recursion (oracle path)."""
    u = _stage_utilities(space, agent_index, agents, schedule, constants, actions)
    delta = space.delta_per_state[:, None]
    values = np.zeros(len(space.states))
    for _ in range(horizon):
        continuation = space.transition @ values
        values = (u + delta * continuation[:, None]).max(axis=1)
    return values


def cooperative_value_iterate(
    space: DiscreteStateSpace,
    incentives_per_state,
    agent_index: int,
    tolerance: float = 1e-10,
    max_iter: int = 5000,
) -> tuple:
    """Cooperate-or-defect program against trigger-enforcing opponents.

    ``incentives_per_state`` supplies (coop, temptation, punishment) payoffs
    per grid state. Returns ``(policy, v_coop, v_punished)`` where policy[s]
    is HONEST when staying cooperative at s weakly dominates the one-shot
    deviation followed by permanent punishment.
    """
    S = len(space.states)
    coop = np.array([inc.coop[agent_index] for inc in incentives_per_state])
    tempt = np.array([inc.temptation_payoff[agent_index] for inc in incentives_per_state])
    punish = np.array([inc.punishment[agent_index] for inc in incentives_per_state])
    tempt_action = [inc.temptation[agent_index] for inc in incentives_per_state]
    delta = space.delta_per_state

    # Punished regime is linear: V_p = P + delta * T V_p.
    v_pun = np.zeros(S)
    for _ in range(max_iter):
        nxt = punish + delta * (space.transition @ v_pun)
        if np.abs(nxt - v_pun).max() <= tolerance:
            v_pun = nxt
            break
        v_pun = nxt

    v = np.zeros(S)
    for _ in range(max_iter):
        stay = coop + delta * (space.transition @ v)
        defect = tempt + delta * (space.transition @ v_pun)
        nxt = np.maximum(stay, defect)
        if np.abs(nxt - v).max() <= tolerance:
            v = nxt
            break
        v = nxt
    stay = coop + delta * (space.transition @ v)
    defect = tempt + delta * (space.transition @ v_pun)
    policy = tuple(
        Action.HONEST if stay[s] >= defect[s] else tempt_action[s] for s in range(S)
    )
    return policy, v, v_pun


def abandonment_volatility(
    mutability_grid,
    base_cfg: MutationConfig,
    agents,
    agent_index: int,
    schedule: RewardSchedule,
    constants: ActionConstants,
    discount: DiscountParams,
    baseline_state: ProtocolState,
    grid_levels: int = 2,
    samples: int = 2000,
    seed: int = 0,
) -> float | None:
    """Smallest grid mutability at which the cooperative-phase policy at the
    baseline state switches away from honest play; None if it never does."""
    for mut in sorted(mutability_grid):
        cfg = replace(base_cfg, mutability=float(mut))
        space = build_state_space(cfg, grid_levels, samples, seed, discount=discount)
        incentives = [
            analyze_incentives(agents, s, schedule, constants) for s in space.states
        ]
        policy, _, _ = cooperative_value_iterate(space, incentives, agent_index)
        if policy[nearest_state_index(space, baseline_state)] != Action.HONEST:
            return float(mut)
    return None


def bridge_phi_linear(
    delta_star: float,
    delta0: float,
    cfg: MutationConfig,
    kappa: float,
    horizon: int,
) -> float:
    """Phi slope that aligns the structural discount with the realized-shock
    decay accumulated over ``horizon`` epochs.

    The epoch loop multiplies delta by (1 - kappa * magnitude) on every
    shock; over a horizon the expected log decay is ``kappa * p * E[m] * T``.
    The structural channel reaches the same threshold crossing when
    ``phi(Var[m]) = 1/delta* - 1/delta0`` at the mutability level where the
    accumulated decay first crosses delta*, which pins one linear slope
    independent of the noise scale.
    """
    if not 0.0 < delta_star < delta0 < 1.0:
        raise ValueError("need 0 < delta_star < delta0 < 1")
    p = cfg.shock_probability
    if p <= 0 or kappa <= 0:
        return 0.0
    chi4_mean = math.sqrt(2.0) * math.gamma(2.5) / math.gamma(2.0)  # E||N(0,I4)||
    chi4_sq = 4.0  # E||N(0,I4)||^2
    var_factor = p * chi4_sq - (p * chi4_mean) ** 2  # Var[m] = var_factor*(eps*scale)^2
    # Mutability level where the accumulated decay crosses delta*; the noise
    # scale cancels between the crossing level and the variance it induces.
    scaled_cross = math.log(delta0 / delta_star) / (kappa * p * chi4_mean * horizon)
    sigma2_cross = var_factor * scaled_cross**2
    return (1.0 / delta_star - 1.0 / delta0) / sigma2_cross
