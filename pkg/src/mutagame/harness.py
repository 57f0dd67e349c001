"""Simulation loop, parameter sweeps, and collapse-threshold detection.

Each epoch: (1) the protocol steps (possibly shocked, tilted by last epoch's
lobbyists); (2) the rolling volatility estimate, per-agent confidence, and
per-agent discount factors are updated from the realized shock magnitude;
(3) agents pick actions under the configured strategy rule; (4) payoffs are
realized with the epoch's fee draw; (5) the epoch is recorded. Everything is
driven by one seeded generator, so a run is a pure function of its config.

Strategy rules
--------------
``trigger``  grim trigger: an agent stays honest until its discount factor
             drops below its own cooperation threshold for the current stage
             game, or until any deviation has been observed, after which it
             plays its temptation action forever.
``myopic``   best response to last epoch's observed profile, deviating only
             when the one-shot gain exceeds the discounted continuation
             advantage of staying honest.
``bellman``  cooperative-phase policy of the dynamic program, recomputed
             every ``sample_interval`` epochs, with grim punishment once a
             deviation is observed.

Sweeps run one simulation per (mutability, kappa, gamma) cell and replicate,
each on an independent stream derived from (master seed, cell index,
replicate index), so results are independent of the execution schedule.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import SimConfig, StrategyRule
from .discounting import DELTA_MIN, discounted_utility
from .dp import (
    bridge_phi_linear,
    build_state_space,
    cooperative_value_iterate,
    nearest_state_index,
)
from .games import (
    GameIncentives,
    analyze_incentives,
    equilibrium_churn,
    game_critical_delta,
    report_for,
    restricted_stage_game,
)
from .model import Action, ProtocolState, realize_payoffs, stage_payoffs_batch
from .mutation import VolatilityEstimate, step_protocol, update_volatility
from .seeds import derive_seed, make_rng

__all__ = [
    "GAMMA_HI",
    "GAMMA_LO",
    "EpochRecord",
    "SimulationError",
    "SimResult",
    "SweepCell",
    "SweepCellError",
    "SweepResult",
    "detect_threshold",
    "run_simulation",
    "run_sweep",
    "simulate",
]

log = logging.getLogger("mutagame.harness")

# Hash-share class cutoffs for the first-deviation statistics.
GAMMA_HI = 0.6
GAMMA_LO = 0.3

_TIE_EPS = 1e-12


class SimulationError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class SweepCellError(RuntimeError):
    def __init__(self, eps: float, kappa: float, gamma: float, cause: str):
        super().__init__(f"sweep cell (eps={eps}, kappa={kappa}, gamma={gamma}): {cause}")
        self.cell = (eps, kappa, gamma)


@dataclass(frozen=True, slots=True)
class EpochRecord:
    epoch: int
    shock_occurred: bool
    shock_magnitude: float
    protocol: ProtocolState
    sigma2: float
    per_agent: tuple  # (action, payoff, discount, confidence) per agent
    deviant_fraction: float


@dataclass(frozen=True)
class SimResult:
    """One simulation run plus the aggregates the sweeps consume."""

    records: tuple
    churn_samples: tuple
    first_deviation: tuple  # per-agent epoch of first deviance (epochs if never)
    shares: tuple
    epochs: int

    def incidence(self) -> float:
        tail = self.records[len(self.records) // 2 :]
        return float(np.mean([r.deviant_fraction for r in tail]))

    def cooperation_index(self) -> float:
        return float(np.mean([r.deviant_fraction < 0.5 for r in self.records]))

    def mean_churn(self) -> float:
        return float(np.mean(self.churn_samples)) if self.churn_samples else 0.0

    def first_deviation_class(self, lo: float | None = None, hi: float | None = None):
        """Earliest deviation epoch among agents with share in (lo, hi]."""
        picks = [
            fd
            for fd, share in zip(self.first_deviation, self.shares)
            if (lo is None or share > lo) and (hi is None or share <= hi)
        ]
        return min(picks) if picks else None

    def agent_utilities(self) -> tuple:
        streams = [[] for _ in self.shares]
        for rec in self.records:
            for i, (_, payoff, delta, psi) in enumerate(rec.per_agent):
                streams[i].append((payoff, delta, psi))
        return tuple(discounted_utility(s) for s in streams)


def _select_trigger(incent: GameIncentives, delta: np.ndarray, punished: bool) -> np.ndarray:
    tempt = np.array([int(a) for a in incent.temptation])
    if punished:
        return tempt
    honest = np.full(len(delta), int(Action.HONEST))
    return np.where(delta < incent.delta_star, tempt, honest)


def _select_myopic(agents, prev_profile, state, cfg, incent, delta, epoch) -> np.ndarray:
    n = len(agents)
    all_actions = tuple(Action)
    profiles = np.repeat(prev_profile[None, :], n * len(all_actions), axis=0)
    for i in range(n):
        for k, action in enumerate(all_actions):
            profiles[i * len(all_actions) + k, i] = int(action)
    table = stage_payoffs_batch(
        agents, profiles, state, cfg.reward, epoch, cfg.actions
    )
    chosen = np.empty(n, dtype=np.int64)
    for i in range(n):
        rows = table[i * len(all_actions) : (i + 1) * len(all_actions), i]
        honest_pay = rows[int(Action.HONEST)]
        best_dev = None
        best_val = -np.inf
        for action in all_actions:
            if action == Action.HONEST:
                continue
            if rows[int(action)] > best_val + _TIE_EPS:
                best_val = rows[int(action)]
                best_dev = action
        gain = best_val - honest_pay
        if gain <= _TIE_EPS:
            chosen[i] = int(Action.HONEST)
            continue
        cont_adv = (incent.coop[i] - incent.punishment[i]) / (1.0 - delta[i])
        chosen[i] = int(best_dev) if gain > delta[i] * cont_adv else int(Action.HONEST)
    return chosen


class _BellmanRule:
    """Holds the cooperative-phase DP policy, rebuilt every sample interval."""

    def __init__(self, cfg: SimConfig, agents, delta_star_ref: float):
        self.cfg = cfg
        self.agents = agents
        params = cfg.discount
        delta0 = cfg.agents.delta0
        if cfg.dp.bridge_phi and 0.0 < delta_star_ref < delta0:
            params = replace(
                params,
                phi_linear=bridge_phi_linear(
                    delta_star_ref, delta0, cfg.mutation, cfg.agents.kappa, cfg.epochs
                ),
                phi_quad=0.0,
            )
        self.params = params
        self.space = None
        self.policies = None
        self._state_cache = (None, 0)

    def rebuild(self):
        self.space = build_state_space(
            self.cfg.mutation,
            self.cfg.dp.grid_levels,
            self.cfg.dp.kernel_samples,
            derive_seed(self.cfg.seed, 0xB311),
            discount=self.params,
        )
        incentives = [
            analyze_incentives(self.agents, s, self.cfg.reward, self.cfg.actions)
            for s in self.space.states
        ]
        self.policies = np.array(
            [
                [int(a) for a in cooperative_value_iterate(self.space, incentives, i)[0]]
                for i in range(len(self.agents))
            ]
        )
        self._state_cache = (None, 0)

    def actions_at(self, state: ProtocolState) -> np.ndarray:
        cached_state, idx = self._state_cache
        if cached_state is not state:
            idx = nearest_state_index(self.space, state)
            self._state_cache = (state, idx)
        return self.policies[:, idx].copy()


def simulate(cfg: SimConfig, seed: int | None = None) -> SimResult:
    """Run one simulation; a pure function of (config, seed)."""
    seed = cfg.seed if seed is None else seed
    rng = make_rng(seed)
    agents = cfg.build_agents()
    n = len(agents)
    shares = tuple(a.hash_share for a in agents)
    kappa = np.array([a.kappa for a in agents])

    state = replace(cfg.protocol, epoch_of_last_shock=0)
    incent = analyze_incentives(agents, state, cfg.reward, cfg.actions)
    delta = np.full(n, cfg.agents.delta0)
    psi = np.full(n, cfg.agents.confidence0)
    window: deque = deque(maxlen=cfg.mutation.volatility_window)
    vol = VolatilityEstimate()

    bellman = None
    if cfg.strategy_rule == StrategyRule.BELLMAN:
        bellman = _BellmanRule(cfg, agents, game_critical_delta(incent))

    punished = False
    prev_profile = np.full(n, int(Action.HONEST))
    first_dev = np.full(n, cfg.epochs)
    churn_samples = []
    prev_report = None
    base_temptation = incent.temptation
    records = []

    for t in range(cfg.epochs):
        lobby_count = int((prev_profile == int(Action.LOBBY)).sum())
        stepped, fired, magnitude = step_protocol(state, cfg.mutation, lobby_count, rng)
        effective = fired and magnitude > 0.0
        if effective:
            state = replace(stepped, epoch_of_last_shock=t)
            incent = analyze_incentives(agents, state, cfg.reward, cfg.actions)
        vol = update_volatility(vol, magnitude, window)
        delta = np.clip(delta * (1.0 - kappa * magnitude), DELTA_MIN, 1.0 - DELTA_MIN)
        if effective:
            psi = psi * (1.0 - cfg.discount.psi_decay)
        else:
            psi = psi + cfg.discount.psi_recovery * (1.0 - psi)

        if bellman is not None and t % cfg.sample_interval == 0 and bellman.space is None:
            # The space and policy depend on the mutation config, not on the
            # current rule state, so the scheduled recomputation is a cache hit
            # after the first build.
            bellman.rebuild()

        if cfg.strategy_rule == StrategyRule.TRIGGER:
            actions = _select_trigger(incent, delta, punished)
        elif cfg.strategy_rule == StrategyRule.MYOPIC:
            actions = _select_myopic(agents, prev_profile, state, cfg, incent, delta, t)
        else:
            if punished:
                actions = np.array([int(a) for a in incent.temptation])
            else:
                actions = bellman.actions_at(state)

        deviant = actions != int(Action.HONEST)
        if deviant.any():
            punished = True
            first_dev = np.where(deviant & (first_dev == cfg.epochs), t, first_dev)

        fee_draw = cfg.reward.base_fee_pool + cfg.reward.fee_noise_sd * rng.standard_normal()
        fee_draw = max(fee_draw, 0.0)
        payoffs = realize_payoffs(
            agents,
            actions,
            state,
            cfg.reward,
            t,
            cfg.actions,
            fee_draw,
            lottery=cfg.lottery_mode,
            rng=rng,
        )
        if not np.all(np.isfinite(payoffs)):
            raise SimulationError(t, "non-finite payoff (check config magnitudes)")

        records.append(
            EpochRecord(
                epoch=t,
                shock_occurred=fired,
                shock_magnitude=magnitude,
                protocol=state,
                sigma2=vol.sigma2,
                per_agent=tuple(
                    (Action(int(actions[i])), float(payoffs[i]), float(delta[i]), float(psi[i]))
                    for i in range(n)
                ),
                deviant_fraction=float(deviant.sum()) / n,
            )
        )

        if t % cfg.sample_interval == 0:
            game = restricted_stage_game(
                agents,
                state,
                cfg.reward,
                cfg.actions,
                epoch=t,
                incentives=incent,
                temptations=base_temptation,
            )
            report = report_for(game)
            if prev_report is not None:
                churn_samples.append(equilibrium_churn(prev_report, report))
            prev_report = report

        prev_profile = actions

    return SimResult(
        records=tuple(records),
        churn_samples=tuple(churn_samples),
        first_deviation=tuple(int(v) for v in first_dev),
        shares=shares,
        epochs=cfg.epochs,
    )


def run_simulation(cfg: SimConfig) -> tuple:
    """Per-epoch records of one run (see :func:`simulate` for the loop)."""
    return simulate(cfg).records


@dataclass(frozen=True)
class SweepCell:
    eps: float
    kappa: float
    gamma: float
    incidence: float
    cooperation_index: float
    mean_churn: float
    first_deviation_gamma_hi: float | None
    first_deviation_gamma_lo: float | None
    replicates: int


@dataclass(frozen=True)
class SweepResult:
    eps_grid: tuple
    kappa_grid: tuple
    gamma_grid: tuple
    replicates: int
    cells: tuple  # row-major over (eps, kappa, gamma)

    def cell(self, eps_i: int, kappa_i: int, gamma_i: int) -> SweepCell:
        stride_k = len(self.gamma_grid)
        stride_e = len(self.kappa_grid) * stride_k
        return self.cells[eps_i * stride_e + kappa_i * stride_k + gamma_i]

    def eps_curve(self, kappa_i: int, gamma_i: int) -> list:
        return [
            (self.eps_grid[e], self.cell(e, kappa_i, gamma_i).incidence)
            for e in range(len(self.eps_grid))
        ]


def _cell_config(cfg: SimConfig, eps: float, kappa: float, gamma: float) -> SimConfig:
    return replace(
        cfg,
        mutation=replace(cfg.mutation, mutability=eps),
        agents=replace(cfg.agents, kappa=kappa),
        gamma_max=gamma,
        hash_shares=None,
    )


def _run_cell(args):
    cfg, cell_index, eps, kappa, gamma, replicates = args
    try:
        cell_cfg = _cell_config(cfg, eps, kappa, gamma)
        incidences, coops, churns, his, los = [], [], [], [], []
        for rep in range(replicates):
            sim = simulate(cell_cfg, seed=derive_seed(cfg.seed, cell_index, rep))
            incidences.append(sim.incidence())
            coops.append(sim.cooperation_index())
            churns.append(sim.mean_churn())
            his.append(sim.first_deviation_class(lo=GAMMA_HI))
            los.append(sim.first_deviation_class(hi=GAMMA_LO))
        return SweepCell(
            eps=eps,
            kappa=kappa,
            gamma=gamma,
            incidence=float(np.mean(incidences)),
            cooperation_index=float(np.mean(coops)),
            mean_churn=float(np.mean(churns)),
            first_deviation_gamma_hi=_mean_or_none(his),
            first_deviation_gamma_lo=_mean_or_none(los),
            replicates=replicates,
        )
    except Exception as exc:  # re-raised with cell coordinates by the caller
        return SweepCellError(eps, kappa, gamma, f"{type(exc).__name__}: {exc}")


def _mean_or_none(values):
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def run_sweep(
    cfg: SimConfig,
    grids=None,
    replicates: int | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Replicated sweep over the (mutability, kappa, gamma) grid.

    Cell seeds depend only on (master seed, cell index, replicate index), and
    cells are reassembled in grid order, so the result is byte-stable across
    any parallel schedule.
    """
    grids = grids if grids is not None else cfg.sweep
    replicates = replicates if replicates is not None else grids.replicates
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    coords = list(itertools.product(grids.eps, grids.kappa, grids.gamma))
    tasks = [
        (cfg, index, eps, kappa, gamma, replicates)
        for index, (eps, kappa, gamma) in enumerate(coords)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        results = [_run_cell(task) for task in tasks]
    for res in results:
        if isinstance(res, SweepCellError):
            raise res
    return SweepResult(
        eps_grid=tuple(grids.eps),
        kappa_grid=tuple(grids.kappa),
        gamma_grid=tuple(grids.gamma),
        replicates=replicates,
        cells=tuple(results),
    )


def detect_threshold(curve) -> tuple:
    """Locate an abrupt incidence transition along a mutability curve.

    ``curve`` is a sorted list of (mutability, incidence) with at least five
    points. The threshold is the midpoint of the interval with the largest
    positive first difference, accepted only when that difference is at least
    twice the median absolute interval difference; sharpness is the largest
    difference over the curve's range. A flat curve yields ``(None, 0.0)``.
    """
    if len(curve) < 5:
        raise ValueError("threshold detection needs at least 5 points")
    mut = np.array([point[0] for point in curve], dtype=float)
    inc = np.array([point[1] for point in curve], dtype=float)
    if np.any(np.diff(mut) <= 0):
        raise ValueError("curve must be sorted by strictly increasing mutability")
    curve_range = float(inc.max() - inc.min())
    if curve_range <= 0:
        return None, 0.0
    diffs = np.diff(inc)
    k = int(np.argmax(diffs))  # first maximal interval wins ties
    sharpness = float(diffs[k] / curve_range)
    median_diff = float(np.median(np.abs(diffs)))
    if diffs[k] <= 0 or diffs[k] < 2.0 * median_diff:
        return None, sharpness
    return float(0.5 * (mut[k] + mut[k + 1])), sharpness
