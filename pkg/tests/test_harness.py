from dataclasses import replace

import numpy as np
import pytest

from mutagame.config import SimConfig, StrategyRule, SweepGrids
from mutagame.games import analyze_incentives, game_critical_delta
from mutagame.harness import (
    SimulationError,
    SweepCellError,
    detect_threshold,
    run_simulation,
    run_sweep,
    simulate,
)
from mutagame.model import Action


def quiet_cfg(**kwargs):
    cfg = SimConfig(epochs=800, **kwargs)
    return replace(cfg, mutation=replace(cfg.mutation, mutability=0.0))


def with_delta0(cfg, delta0):
    return replace(cfg, agents=replace(cfg.agents, delta0=delta0))


def stage_delta_star(cfg):
    agents = cfg.build_agents()
    return game_critical_delta(
        analyze_incentives(agents, cfg.protocol, cfg.reward, cfg.actions)
    )


class TestSimulate:
    def test_bit_identical_reruns(self):
        cfg = SimConfig(epochs=400)
        a = simulate(cfg)
        b = simulate(cfg)
        assert a.records == b.records
        assert a.churn_samples == b.churn_samples

    def test_fixed_rules_patient_agents_never_deviate(self):
        cfg = quiet_cfg()
        dstar = stage_delta_star(cfg)
        sim = simulate(with_delta0(cfg, min(dstar + 0.05, 0.99)))
        assert sim.incidence() == 0.0
        assert all(r.deviant_fraction == 0.0 for r in sim.records)

    def test_fixed_rules_impatient_agents_collapse(self):
        cfg = quiet_cfg()
        dstar = stage_delta_star(cfg)
        sim = simulate(with_delta0(cfg, max(dstar - 0.05, 0.01)))
        assert sim.incidence() == 1.0

    def test_fixed_rule_reduction_of_dynamics(self):
        cfg = quiet_cfg()
        sim = simulate(cfg)
        assert all(c == 0.0 for c in sim.churn_samples)
        for rec in sim.records:
            assert rec.sigma2 == 0.0
            assert rec.shock_magnitude == 0.0
            for _, _, delta, psi in rec.per_agent:
                assert delta == cfg.agents.delta0
                assert psi == 1.0
            assert rec.protocol.continuous_vector() == pytest.approx(
                cfg.protocol.continuous_vector(), abs=0
            )

    def test_deviant_fraction_is_exact_count(self):
        cfg = SimConfig(epochs=300)
        sim = simulate(cfg)
        for rec in sim.records:
            deviants = sum(1 for a, _, _, _ in rec.per_agent if a != Action.HONEST)
            assert rec.deviant_fraction == deviants / len(rec.per_agent)

    def test_noisy_run_eventually_collapses(self):
        cfg = SimConfig(epochs=5000)
        cfg = replace(cfg, mutation=replace(cfg.mutation, mutability=0.2))
        sim = simulate(cfg)
        assert sim.incidence() == 1.0
        assert 0.0 < sim.cooperation_index() < 1.0

    def test_first_deviation_classes(self):
        cfg = replace(SimConfig(epochs=2000, gamma_max=0.7), mutation=replace(
            SimConfig().mutation, mutability=0.15
        ))
        sim = simulate(cfg)
        hi = sim.first_deviation_class(lo=0.6)
        lo = sim.first_deviation_class(hi=0.3)
        assert hi == 0  # the majority agent cannot be deterred and defects at once
        assert lo == 1  # small agents follow through the trigger one epoch later

    def test_first_deviation_sentinel_when_never(self):
        cfg = quiet_cfg()
        sim = simulate(with_delta0(cfg, 0.95))
        assert all(fd == cfg.epochs for fd in sim.first_deviation)
        assert sim.first_deviation_class(lo=0.6) is None  # no agent above 0.6

    def test_myopic_rule_matches_trigger_thresholds_under_fixed_rules(self):
        cfg = quiet_cfg(strategy_rule=StrategyRule.MYOPIC)
        dstar = stage_delta_star(cfg)
        calm = simulate(with_delta0(cfg, min(dstar + 0.05, 0.99)))
        assert calm.incidence() == 0.0
        stormy = simulate(with_delta0(cfg, max(dstar - 0.05, 0.01)))
        assert stormy.records[0].deviant_fraction > 0.0

    def test_bellman_rule_cooperates_under_fixed_rules(self):
        cfg = quiet_cfg(strategy_rule=StrategyRule.BELLMAN)
        cfg = replace(cfg, epochs=300)
        sim = simulate(cfg)
        assert sim.incidence() == 0.0

    def test_lottery_mode_runs_deterministically(self):
        cfg = SimConfig(epochs=200, lottery_mode=True)
        a = simulate(cfg)
        b = simulate(cfg)
        assert a.records == b.records

    def test_single_epoch_run(self):
        cfg = SimConfig(epochs=1)
        sim = simulate(cfg)
        assert len(sim.records) == 1
        assert sim.incidence() in (0.0, 1.0) or 0.0 <= sim.incidence() <= 1.0

    def test_non_finite_payoff_aborts_with_epoch(self):
        cfg = SimConfig(epochs=10)
        cfg = replace(cfg, costs=replace(cfg.costs, network_ths=float("inf")))
        with pytest.raises(SimulationError) as err:
            simulate(cfg)
        assert err.value.epoch == 0

    def test_run_simulation_returns_records(self):
        cfg = SimConfig(epochs=50)
        records = run_simulation(cfg)
        assert len(records) == 50
        assert records[0].epoch == 0 and records[-1].epoch == 49

    def test_utilities_finite_and_ordered_by_share_when_honest(self):
        cfg = quiet_cfg()
        sim = simulate(with_delta0(cfg, 0.9))
        utils = sim.agent_utilities()
        assert all(np.isfinite(u) for u in utils)
        # Bigger share, bigger margin, bigger discounted utility.
        assert utils[0] > max(utils[1:])


class TestSweep:
    def test_degenerate_grid_equals_single_run(self):
        cfg = SimConfig(epochs=400)
        grids = SweepGrids(eps=(0.1,), kappa=(1.0,), gamma=(0.4,), replicates=1)
        result = run_sweep(cfg, grids=grids, replicates=1)
        assert len(result.cells) == 1
        from mutagame.seeds import derive_seed

        cell_cfg = replace(
            cfg,
            mutation=replace(cfg.mutation, mutability=0.1),
            agents=replace(cfg.agents, kappa=1.0),
            gamma_max=0.4,
        )
        sim = simulate(cell_cfg, seed=derive_seed(cfg.seed, 0, 0))
        cell = result.cells[0]
        assert cell.incidence == pytest.approx(sim.incidence(), rel=1e-15)
        assert cell.cooperation_index == pytest.approx(sim.cooperation_index(), rel=1e-15)
        assert cell.mean_churn == pytest.approx(sim.mean_churn(), rel=1e-15)

    def test_jobs_do_not_change_results(self):
        cfg = SimConfig(epochs=200)
        grids = SweepGrids(eps=(0.0, 0.15), kappa=(1.0,), gamma=(0.3, 0.6), replicates=2)
        serial = run_sweep(cfg, grids=grids, jobs=1)
        parallel = run_sweep(cfg, grids=grids, jobs=2)
        assert serial == parallel

    def test_incidence_monotone_endpoints(self):
        cfg = SimConfig(epochs=3000)
        grids = SweepGrids(eps=(0.0, 0.3), kappa=(1.0,), gamma=(0.4,), replicates=2)
        result = run_sweep(cfg, grids=grids, jobs=2)
        assert result.cell(0, 0, 0).incidence <= result.cell(1, 0, 0).incidence

    def test_cell_failure_carries_coordinates(self):
        cfg = SimConfig(epochs=10)
        cfg = replace(cfg, costs=replace(cfg.costs, network_ths=float("inf")))
        grids = SweepGrids(eps=(0.2,), kappa=(1.0,), gamma=(0.4,), replicates=1)
        with pytest.raises(SweepCellError) as err:
            run_sweep(cfg, grids=grids)
        assert err.value.cell == (0.2, 1.0, 0.4)

    def test_row_major_cell_order(self):
        cfg = SimConfig(epochs=30)
        grids = SweepGrids(eps=(0.0, 0.1), kappa=(0.5, 1.5), gamma=(0.2,), replicates=1)
        result = run_sweep(cfg, grids=grids)
        coords = [(c.eps, c.kappa, c.gamma) for c in result.cells]
        assert coords == [
            (0.0, 0.5, 0.2),
            (0.0, 1.5, 0.2),
            (0.1, 0.5, 0.2),
            (0.1, 1.5, 0.2),
        ]


class TestDetectThreshold:
    def test_step_curve(self):
        curve = list(zip([0.0, 0.05, 0.1, 0.15, 0.2], [0, 0, 0, 1, 1]))
        threshold, sharpness = detect_threshold(curve)
        assert threshold == pytest.approx(0.125)
        assert sharpness == pytest.approx(1.0)

    def test_linear_ramp_has_no_threshold(self):
        curve = list(zip(np.linspace(0, 0.3, 8), np.linspace(0, 1, 8)))
        threshold, _ = detect_threshold(curve)
        assert threshold is None

    def test_constant_curve(self):
        curve = [(x, 0.25) for x in np.linspace(0, 0.3, 6)]
        assert detect_threshold(curve) == (None, 0.0)

    def test_needs_five_points(self):
        with pytest.raises(ValueError):
            detect_threshold([(0.0, 0), (0.1, 0), (0.2, 1), (0.3, 1)])

    def test_unsorted_rejected(self):
        curve = [(0.0, 0), (0.2, 0), (0.1, 0.5), (0.25, 1), (0.3, 1)]
        with pytest.raises(ValueError):
            detect_threshold(curve)

    def test_decreasing_curve_yields_none(self):
        curve = list(zip(np.linspace(0, 0.3, 6), [1.0, 0.8, 0.6, 0.4, 0.2, 0.0]))
        threshold, _ = detect_threshold(curve)
        assert threshold is None

    def test_ties_resolve_to_first_interval(self):
        curve = [(0.0, 0.0), (0.1, 0.5), (0.2, 0.5), (0.3, 1.0), (0.4, 1.0), (0.5, 1.0)]
        threshold, _ = detect_threshold(curve)
        assert threshold == pytest.approx(0.05)
