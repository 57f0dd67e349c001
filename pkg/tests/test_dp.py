import numpy as np
import pytest

from mutagame.discounting import DiscountParams
from mutagame.dp import (
    DiscreteStateSpace,
    NonConvergenceError,
    abandonment_volatility,
    backward_induction,
    bridge_phi_linear,
    build_state_space,
    cooperative_value_iterate,
    nearest_state_index,
    value_iterate,
    _nearest_index,
)
from mutagame.games import analyze_incentives
from mutagame.model import (
    Action,
    ActionConstants,
    MinerAgent,
    ProtocolState,
    RewardSchedule,
)
from mutagame.mutation import MutationConfig, sample_transitions
from mutagame.seeds import derive_seed, make_rng

from conftest import concentration, make_agents


def manual_space(states, transition, deltas):
    return DiscreteStateSpace(
        states=tuple(states),
        transition=np.array(transition, dtype=float),
        delta_per_state=np.array(deltas, dtype=float),
        local_sigma2=np.zeros(len(states)),
        grid_axes=(),
    )


def unit_agent():
    return [MinerAgent(id=0, hash_share=1.0, opex_rate=0.0)]


class TestValueIterate:
    def test_single_state_single_action_geometric(self):
        space = manual_space([ProtocolState(relay_strictness=0.0)], [[1.0]], [0.9])
        sched = RewardSchedule(initial_subsidy=1.0, base_fee_pool=0.0, fee_noise_sd=0.0)
        sol = value_iterate(
            space,
            unit_agent(),
            0,
            sched,
            ActionConstants(),
            tolerance=1e-12,
            max_iter=10_000,
            actions=(Action.HONEST,),
        )
        assert sol.values[0] == pytest.approx(10.0, rel=1e-9)
        assert sol.policy == (Action.HONEST,)

    def test_two_decoupled_states_closed_form(self):
        states = [
            ProtocolState(relay_strictness=0.0),
            ProtocolState(relay_strictness=0.5),
        ]
        space = manual_space(states, [[1.0, 0.0], [0.0, 1.0]], [0.9, 0.8])
        sched = RewardSchedule(initial_subsidy=10.0, base_fee_pool=4.0)
        agents = unit_agent()
        sol = value_iterate(
            space, agents, 0, sched, ActionConstants(), tolerance=1e-12, max_iter=20_000
        )
        for s in range(2):
            best = max(
                analyze_incentives(agents, states[s], sched, ActionConstants()).coop[0],
                analyze_incentives(agents, states[s], sched, ActionConstants()).temptation_payoff[
                    0
                ],
            )
            assert sol.values[s] == pytest.approx(
                best / (1 - space.delta_per_state[s]), rel=1e-8
            )

    def test_policy_reapplication_reproduces_values(self):
        cfg = MutationConfig(mutability=0.3, continuous_sd_scale=1.0)
        space = build_state_space(cfg, 2, 500, seed=3)
        agents = make_agents(concentration(0.4, n=3))
        sol = value_iterate(space, agents, 1, RewardSchedule(), ActionConstants())
        # One operator application restricted to the returned policy.
        from mutagame.dp import _stage_utilities

        u = _stage_utilities(space, 1, agents, RewardSchedule(), ActionConstants(), tuple(Action))
        idx = [list(Action).index(a) for a in sol.policy]
        reapplied = np.array(
            [
                u[s, idx[s]] + space.delta_per_state[s] * (space.transition[s] @ sol.values)
                for s in range(len(space.states))
            ]
        )
        assert np.abs(reapplied - sol.values).max() <= 1e-6

    def test_residuals_monotone_after_first_iteration(self):
        cfg = MutationConfig(mutability=0.2, continuous_sd_scale=1.0)
        space = build_state_space(cfg, 2, 300, seed=5)
        sol = value_iterate(
            space, make_agents([1.0]), 0, RewardSchedule(), ActionConstants()
        )
        hist = sol.residual_history
        assert all(hist[k + 1] <= hist[k] + 1e-12 for k in range(1, len(hist) - 1))

    def test_value_monotone_in_delta(self):
        cfg = MutationConfig(mutability=0.2, continuous_sd_scale=1.0)
        space = build_state_space(cfg, 2, 300, seed=6)
        agents = [MinerAgent(id=0, hash_share=1.0, opex_rate=0.0)]  # nonnegative payoffs
        low = value_iterate(space, agents, 0, RewardSchedule(), ActionConstants())
        raised = DiscreteStateSpace(
            states=space.states,
            transition=space.transition,
            delta_per_state=np.minimum(space.delta_per_state + 0.05, 0.97),
            local_sigma2=space.local_sigma2,
            grid_axes=space.grid_axes,
        )
        high = value_iterate(raised, agents, 0, RewardSchedule(), ActionConstants())
        assert (high.values >= low.values - 1e-9).all()

    def test_non_convergence_error_carries_residual(self):
        space = manual_space([ProtocolState()], [[1.0]], [0.95])
        with pytest.raises(NonConvergenceError) as err:
            value_iterate(
                space,
                unit_agent(),
                0,
                RewardSchedule(),
                ActionConstants(),
                tolerance=1e-30,
                max_iter=5,
            )
        assert err.value.residual > 0
        assert err.value.iterations == 5


class TestKernel:
    def test_zero_mutability_identity(self):
        cfg = MutationConfig(mutability=0.0)
        space = build_state_space(cfg, 2, 500, seed=1)
        assert np.array_equal(space.transition, np.eye(16))
        assert (space.local_sigma2 == 0).all()

    def test_zero_rate_identity(self):
        cfg = MutationConfig(mutability=0.3, shock_rate=0.0)
        space = build_state_space(cfg, 2, 500, seed=2)
        assert np.array_equal(space.transition, np.eye(16))

    def test_rows_stochastic(self):
        cfg = MutationConfig(mutability=0.3, continuous_sd_scale=1.5)
        space = build_state_space(cfg, 3, 2000, seed=4)
        sums = space.transition.sum(axis=1)
        assert np.abs(sums - 1.0).max() <= 1e-9
        assert (space.transition >= 0).all()

    def test_deterministic_given_seed(self):
        cfg = MutationConfig(mutability=0.2, continuous_sd_scale=1.0)
        a = build_state_space(cfg, 2, 1000, seed=9)
        b = build_state_space(cfg, 2, 1000, seed=9)
        assert np.array_equal(a.transition, b.transition)
        assert np.array_equal(a.local_sigma2, b.local_sigma2)

    def test_small_sample_kernel_close_to_large_sample_oracle(self):
        # Total-variation distance between the default-sample kernel and a
        # 100x oracle estimate, rowwise.
        cfg = MutationConfig(mutability=0.3, continuous_sd_scale=1.0)
        space = build_state_space(cfg, 2, 10_000, seed=11)
        for row, state in enumerate(space.states):
            gen = make_rng(derive_seed(123456, row))
            fields, _, _ = sample_transitions(state, cfg, 0, 1_000_000, gen)
            targets = _nearest_index(fields, space.grid_axes)
            oracle = np.bincount(targets, minlength=16) / 1_000_000
            tv = 0.5 * np.abs(space.transition[row] - oracle).sum()
            assert tv <= 0.05

    def test_capacity_error(self):
        with pytest.raises(ValueError):
            build_state_space(MutationConfig(), 11, 500, seed=0)  # 11^4 > 10^4

    def test_nearest_state_roundtrip(self):
        cfg = MutationConfig(mutability=0.1)
        space = build_state_space(cfg, 3, 200, seed=13)
        for idx, state in enumerate(space.states):
            assert nearest_state_index(space, state) == idx

    def test_null_mutation_values_hit_closed_form_everywhere(self):
        # Identity kernel decouples the states: V(s) = best stage payoff
        # over (1 - delta(s)) at every grid point.
        space = build_state_space(MutationConfig(mutability=0.0), 2, 500, seed=21)
        agents = make_agents(concentration(0.4, n=3))
        sol = value_iterate(
            space, agents, 0, RewardSchedule(), ActionConstants(), tolerance=1e-12, max_iter=50_000
        )
        for s, state in enumerate(space.states):
            inc = analyze_incentives(agents, state, RewardSchedule(), ActionConstants())
            best = max(inc.coop[0], inc.temptation_payoff[0])
            assert sol.values[s] == pytest.approx(
                best / (1.0 - space.delta_per_state[s]), rel=1e-9
            )


class TestBackwardInduction:
    def test_sixteen_state_match(self):
        cfg = MutationConfig()  # golden defaults
        space = build_state_space(cfg, 2, 10_000, seed=42, discount=DiscountParams())
        agents = make_agents(concentration(0.4))
        sol = value_iterate(
            space, agents, 0, RewardSchedule(), ActionConstants(), tolerance=1e-8
        )
        oracle = backward_induction(
            space, agents, 0, RewardSchedule(), ActionConstants(), horizon=200
        )
        assert np.abs(sol.values - oracle).max() <= 1e-4
        assert sol.iterations <= 2000


class TestAbandonment:
    def test_honest_dominant_never_abandons(self):
        # Every deviant action is strictly worse at every state.
        cons = ActionConstants(
            snipe_bonus=0.0,
            snipe_burn=0.2,
            withhold_edge=0.0,
            lobby_cost_frac=0.5,
            validation_saving=0.0,
        )
        got = abandonment_volatility(
            (0.0, 0.1, 0.2, 0.3),
            MutationConfig(continuous_sd_scale=1.0),
            make_agents(concentration(0.4, n=4)),
            1,
            RewardSchedule(),
            cons,
            DiscountParams(),
            ProtocolState(),
            samples=300,
            seed=3,
        )
        assert got is None

    def test_deviant_dominant_switches_at_first_grid_point(self):
        # Empty blocks dominate pointwise: huge validation saving, no fees.
        sched = RewardSchedule(base_fee_pool=0.0, fee_noise_sd=0.0)
        got = abandonment_volatility(
            (0.0, 0.1, 0.2),
            MutationConfig(continuous_sd_scale=1.0),
            make_agents(concentration(0.4, n=4)),
            1,
            sched,
            ActionConstants(),
            DiscountParams(),
            ProtocolState(validation_overhead=0.9),
            samples=300,
            seed=4,
        )
        assert got == 0.0

    def test_cooperative_policy_honest_under_patient_discounting(self):
        cfg = MutationConfig(mutability=0.0)
        space = build_state_space(cfg, 2, 300, seed=5)
        agents = make_agents(concentration(0.4, n=4))
        incentives = [
            analyze_incentives(agents, s, RewardSchedule(), ActionConstants())
            for s in space.states
        ]
        policy, v_coop, v_pun = cooperative_value_iterate(space, incentives, 1)
        # delta(s) = 0.9 everywhere at zero mutability: honesty holds exactly
        # at the states whose own threshold is below 0.9 (extreme grid corners
        # with full validation overhead are dominated by empty blocks and are
        # rationally abandoned even under fixed rules).
        for s in range(len(space.states)):
            want_honest = incentives[s].delta_star[1] <= 0.9
            assert (policy[s] == Action.HONEST) == want_honest
        baseline = nearest_state_index(space, ProtocolState())
        assert policy[baseline] == Action.HONEST
        assert (v_coop >= v_pun - 1e-9).all()


class TestBridgePhi:
    def test_scale_invariance(self):
        # The bridge slope must not depend on the noise scale.
        a = bridge_phi_linear(0.54, 0.9, MutationConfig(continuous_sd_scale=0.014), 1.0, 5000)
        b = bridge_phi_linear(0.54, 0.9, MutationConfig(continuous_sd_scale=0.14), 1.0, 5000)
        assert a == pytest.approx(b, rel=1e-12)

    def test_rejects_bad_ordering(self):
        with pytest.raises(ValueError):
            bridge_phi_linear(0.95, 0.9, MutationConfig(), 1.0, 5000)
