import math

import numpy as np
import pytest

from slackline.config import TaskConfig
from slackline.controller import make_pickplace
from slackline.explore import _arbitrary_action
from slackline.seeding import make_rng
from slackline.simulator import (
    ActionPair,
    EnvState,
    GenerationError,
    InfeasibleActionError,
    PickPlace,
    execute,
    execute_with_stats,
    generate_env,
    goal_reached,
    quantize,
    reward,
)


def straight_chain(m=16, link=0.035, x0=0.42, y0=0.3):
    q = np.column_stack([x0 + np.arange(m) * link, np.full(m, y0)])
    return EnvState(q, np.zeros((0, 2)))


def link_lengths(state):
    d = np.diff(state.q, axis=0)
    return np.hypot(d[:, 0], d[:, 1])


def bend_angles(state):
    q = state.q
    out = []
    for j in range(1, q.shape[0] - 1):
        a = q[j] - q[j - 1]
        b = q[j + 1] - q[j]
        out.append(abs(math.atan2(a[0] * b[1] - a[1] * b[0], float(a @ b))))
    return np.array(out)


def obstacle_penetration(state, mu):
    worst = 0.0
    pts = np.vstack([state.q, 0.5 * (state.q[:-1] + state.q[1:])])
    for ox, oy in state.o:
        worst = max(worst, mu - np.hypot(pts[:, 0] - ox, pts[:, 1] - oy).min())
    return worst


class TestGenerateEnv:
    def test_deterministic(self, task_config):
        a = generate_env(task_config, 42)
        b = generate_env(task_config, 42)
        assert a == b

    def test_different_seeds_differ(self, task_config):
        assert generate_env(task_config, 1) != generate_env(task_config, 2)

    def test_never_starts_in_goal(self, task_config):
        for seed in range(30):
            state = generate_env(task_config, seed)
            assert not goal_reached(state, task_config)

    def test_link_lengths_uniform(self, task_config):
        lo, hi = task_config.dlo_length_range
        m = task_config.keypoint_count
        for seed in range(100):
            state = generate_env(task_config, seed)
            ll = link_lengths(state)
            assert np.abs(ll - ll.mean()).max() < 1e-9
            assert lo / (m - 1) - 1e-9 <= ll.mean() <= hi / (m - 1) + 1e-9

    def test_chain_inside_workspace(self, task_config):
        for seed in range(30):
            q = generate_env(task_config, seed).q
            assert (q[:, 0] >= 0).all() and (q[:, 0] <= task_config.workspace_width).all()
            assert (q[:, 1] >= 0).all() and (q[:, 1] <= task_config.workspace_height).all()

    def test_initial_bends_within_limit(self, task_config):
        for seed in range(30):
            state = generate_env(task_config, seed)
            assert bend_angles(state).max() <= task_config.joint_limit + 1e-9

    def test_obstacles_separated(self, task_config):
        for seed in range(30):
            o = generate_env(task_config, seed).o
            for i in range(len(o)):
                for j in range(i + 1, len(o)):
                    assert np.hypot(*(o[i] - o[j])) >= 3 * task_config.obstacle_radius

    def test_impossible_config_raises(self):
        bad = TaskConfig(obstacle_count=120)  # cannot place with 3*mu spacing
        with pytest.raises(GenerationError):
            generate_env(bad, 0)


PINNED = TaskConfig(arm_bases=((0.2, 0.3), (0.8, 0.3)))


class TestExecute:
    @pytest.fixture()
    def task_config(self):
        return PINNED

    def test_identity_action_is_exact_noop(self, task_config):
        state = straight_chain()
        pp = PickPlace(1, 0, (0.42, 0.3), (0.42, 0.3))
        out = execute(state, ActionPair(pp), task_config)
        assert np.array_equal(out.q, state.q)

    def test_axial_drag_keeps_chain_straight(self, task_config):
        state = straight_chain()
        pp = PickPlace(1, 0, (0.42, 0.3), (0.37, 0.3))
        out = execute(state, ActionPair(pp), task_config)
        assert abs(out.q[0, 0] - 0.37) < 1e-6
        assert abs(out.q[0, 1] - 0.3) < 1e-12
        assert np.abs(out.q[:, 1] - 0.3).max() < 1e-9
        assert np.abs(link_lengths(out) - 0.035).max() < 1e-9

    def test_input_state_never_mutated(self, task_config):
        state = straight_chain()
        before = state.q.copy()
        pp = PickPlace(1, 0, (0.42, 0.3), (0.37, 0.3))
        execute(state, ActionPair(pp), task_config)
        assert np.array_equal(before, state.q)

    def test_deterministic(self, task_config):
        state = generate_env(task_config, 7)
        action = _arbitrary_action(state, task_config, make_rng(1))
        assert execute(state, action, task_config) == execute(state, action, task_config)

    def test_infeasible_action_rejected(self, task_config):
        state = straight_chain()
        # pick inside arm 1's inner ring
        bad = PickPlace(1, 0, (0.42, 0.3), (0.3, 0.3))
        with pytest.raises(InfeasibleActionError):
            execute(state, ActionPair(bad), task_config)

    def test_pick_must_match_keypoint(self, task_config):
        state = straight_chain()
        bad = PickPlace(1, 0, (0.43, 0.3), (0.4, 0.3))
        with pytest.raises(InfeasibleActionError):
            execute(state, ActionPair(bad), task_config)

    def test_displacement_cap_enforced(self, task_config):
        state = straight_chain()
        bad = PickPlace(1, 0, (0.42, 0.3), (0.42, 0.45))
        with pytest.raises(InfeasibleActionError):
            execute(state, ActionPair(bad), task_config)

    def test_dual_arm_needs_distinct_arms(self, task_config):
        state = straight_chain()
        a = PickPlace(1, 0, (0.42, 0.3), (0.40, 0.3))
        b = PickPlace(1, 15, tuple(state.q[15]), tuple(state.q[15]))
        with pytest.raises(InfeasibleActionError):
            execute(state, ActionPair(a, b), task_config)

    def test_pick_separation_enforced(self, task_config):
        state = straight_chain()
        a = PickPlace(1, 6, tuple(state.q[6]), tuple(state.q[6]))
        b = PickPlace(2, 7, tuple(state.q[7]), tuple(state.q[7]))
        with pytest.raises(InfeasibleActionError):
            execute(state, ActionPair(a, b), task_config)

    def test_perpendicular_drag_respects_joint_limit(self, task_config):
        state = straight_chain()
        pp = PickPlace(1, 0, (0.42, 0.3), (0.42, 0.4))
        out = execute(state, ActionPair(pp), task_config)
        assert np.abs(out.q[0] - [0.42, 0.4]).max() < 1e-6
        assert bend_angles(out).max() <= task_config.joint_limit + 1e-9
        assert np.abs(link_lengths(out) - 0.035).max() < 1e-9

    def test_random_action_invariants(self, task_config):
        mu = task_config.obstacle_radius
        checked = 0
        for seed in range(8):
            state = generate_env(task_config, seed)
            nominal = state.link_length()
            rng = make_rng(900, seed)
            for _ in range(25):
                action = _arbitrary_action(state, task_config, rng)
                if action is None:
                    break
                state = execute(state, action, task_config)
                checked += 1
                assert np.abs(link_lengths(state) - nominal).max() < 1e-9
                assert bend_angles(state).max() <= task_config.joint_limit + 1e-9
                assert obstacle_penetration(state, mu) <= 1e-3
        assert checked > 100

    def test_pin_fidelity_unobstructed(self, task_config):
        hits = 0
        for seed in range(25):
            state = generate_env(task_config, seed)
            rng = make_rng(901, seed)
            for _ in range(10):
                action = _arbitrary_action(state, task_config, rng)
                if action is None:
                    break
                new_state, stats = execute_with_stats(state, action, task_config)
                pp = action.leader
                far = all(
                    np.hypot(state.o[:, 0] - x, state.o[:, 1] - y).min()
                    > task_config.obstacle_radius + task_config.max_step
                    for x, y in (pp.pick, pp.place)
                ) if len(state.o) else True
                if far and stats.joint_clamps == 0 and stats.workspace_clamps == 0:
                    err = np.hypot(
                        new_state.q[pp.pick_index, 0] - pp.place[0],
                        new_state.q[pp.pick_index, 1] - pp.place[1],
                    )
                    assert err <= 1e-6
                    hits += 1
                state = new_state
        assert hits >= 10


class TestGoalAndReward:
    @pytest.fixture()
    def task_config(self):
        return PINNED

    def test_goal_requires_both_endpoints(self, task_config):
        # both endpoints placed mid-annulus, no obstacles nearby
        m = task_config.keypoint_count
        xs = np.linspace(0.36, 0.64, m)
        q = np.column_stack([xs, np.full(m, 0.3)])
        state = EnvState(q, np.zeros((0, 2)))
        d1 = math.hypot(q[0, 0] - 0.2, q[0, 1] - 0.3)
        d2 = math.hypot(q[-1, 0] - 0.8, q[-1, 1] - 0.3)
        assert task_config.reach_min < d1 < task_config.reach_max
        assert task_config.reach_min < d2 < task_config.reach_max
        assert goal_reached(state, task_config)
        assert reward(state, task_config) == 1

    def test_endpoint_too_close_fails(self, task_config):
        m = task_config.keypoint_count
        xs = np.linspace(0.3, 0.64, m)  # q1 at distance 0.1 < reach_min
        q = np.column_stack([xs, np.full(m, 0.3)])
        state = EnvState(q, np.zeros((0, 2)))
        assert not goal_reached(state, task_config)
        assert reward(state, task_config) == 0

    def test_obstacle_blocks_goal(self, task_config):
        m = task_config.keypoint_count
        xs = np.linspace(0.35, 0.65, m)
        q = np.column_stack([xs, np.full(m, 0.3)])
        blocked = EnvState(q, np.array([[0.65, 0.35]]))  # 0.05 < clearance
        assert not goal_reached(blocked, task_config)


class TestSerialization:
    def test_state_roundtrip_is_quantization(self, task_config):
        state = generate_env(task_config, 3)
        again = EnvState.from_obj(state.to_obj())
        assert again == state.quantized()

    def test_quantized_is_idempotent(self, task_config):
        state = generate_env(task_config, 3).quantized()
        assert state.quantized() == state

    def test_quantize_nine_significant_digits(self):
        assert quantize(0.123456789123) == 0.123456789
        assert quantize(1.0) == 1.0

    def test_action_roundtrip(self):
        pp = PickPlace(2, 5, (0.123456789, 0.3), (0.2, 0.4))
        pair = ActionPair(pp, None)
        assert ActionPair.from_obj(pair.to_obj()) == pair
