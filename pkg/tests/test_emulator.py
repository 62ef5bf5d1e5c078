import random

import pytest
from hypothesis import given, settings, strategies as st

from redtwin.emulator import EmuEnv, EpisodeDone, episode_return, reset, virtual_time
from redtwin.facts import Fact, FactKind, Observation


def run_episode(env, actions):
    env.reset()
    outcomes = []
    for a in actions:
        outcomes.append(env.step(a))
        if outcomes[-1].done:
            break
    return outcomes


def test_reset_returns_initial_facts(default_scenario):
    env, obs = reset(default_scenario, 7)
    assert obs == Observation.of(default_scenario.initial_facts)
    assert Fact(FactKind.HAND_PRESENT, 2, "user") in obs


def test_same_seed_same_trajectory(default_scenario):
    actions = [13, 14, 11, 10, 0, 5, 8, 2, 8, 2, 8, 7, 9] * 3
    env1, o1 = reset(default_scenario, 42)
    env2, o2 = reset(default_scenario, 42)
    assert o1.key == o2.key
    for a in actions:
        s1, s2 = env1.step(a), env2.step(a)
        assert s1.observation.key == s2.observation.key
        assert s1.reward == s2.reward
        assert s1.done == s2.done
        if s1.done:
            break


def test_reset_clears_all_state(default_scenario):
    env, _ = reset(default_scenario, 1)
    for a in (13, 14, 11):
        env.step(a)
    obs = env.reset()
    assert obs == Observation.of(default_scenario.initial_facts)
    assert env.episode_return == 0.0


def test_invalid_action_costs_eight(default_scenario):
    env, _ = reset(default_scenario, 3)
    # action 9 needs an elevated hand plus facts nobody has yet
    out = env.step(9)
    assert out.reward == -8.0
    assert out.observation == Observation.of(default_scenario.initial_facts)
    assert out.info.per_hand[0].executable is False


def test_valid_action_costs_one(default_scenario):
    env, _ = reset(default_scenario, 3)
    out = env.step(13)
    assert out.reward == -1.0
    assert out.info.per_hand[0].executable is True


def test_goal_step_single_hand_yields_99(one_host):
    env, _ = reset(one_host, 5)
    out = env.step(0)
    assert out.reward == 99.0
    assert out.done is True
    assert env.episode_return == 99.0


def test_action_out_of_range(default_scenario):
    env, _ = reset(default_scenario, 0)
    with pytest.raises(ValueError, match="out of range"):
        env.step(16)


def test_step_after_done_raises(one_host):
    env, _ = reset(one_host, 0)
    env.step(0)
    with pytest.raises(EpisodeDone):
        env.step(0)


def test_latency_accounting_16s_per_step(default_scenario):
    env, _ = reset(default_scenario, 11)
    for k in range(1, 10):
        env.step(13)
        assert env.virtual_time_s == 16.0 * k
    assert virtual_time(env) == env.virtual_time_s


def test_failed_episode_return_bound(goalless):
    env, _ = reset(goalless, 2)
    total = 0.0
    done = False
    while not done:
        out = env.step(0)
        total += out.reward
        done = out.done
    # one hand, never executable: 80 steps x -8
    assert total == -640.0
    assert episode_return(env) == total


def test_monotone_knowledge(default_scenario):
    env, obs = reset(default_scenario, 9)
    rng = random.Random(0)
    seen = set(obs.facts)
    done = False
    while not done:
        out = env.step(rng.randrange(env.action_count))
        assert seen <= set(out.observation.facts)
        seen = set(out.observation.facts)
        done = out.done


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    actions=st.lists(st.integers(min_value=0, max_value=15), min_size=1, max_size=60),
)
def test_reward_decomposition(default_scenario, seed, actions):
    """reward = G - sum(per-hand costs) on every step."""
    game = default_scenario.game
    env, _ = reset(default_scenario, seed)
    prev_goal = False
    for a in actions:
        out = env.step(a)
        cost = sum(
            game.cost_valid if h.executable else game.cost_invalid
            for h in out.info.per_hand
        )
        goal_now = game.goal_satisfied(out.observation.fact_set())
        gain = game.goal_gain if goal_now and not prev_goal else 0.0
        assert out.reward == gain - cost
        prev_goal = goal_now
        if out.done:
            break


def test_lateral_success_targets_are_reachable(default_scenario):
    """every new foothold appears on a host reachable from an existing one"""
    from redtwin.scenario import reachable

    rng = random.Random(4)
    env, obs = reset(default_scenario, 4)
    hands = {2}
    for _ in range(500):
        out = env.step(rng.randrange(16))
        new_hands = {
            f.host for f in out.observation.facts if f.kind is FactKind.HAND_PRESENT
        }
        for h in new_hands - hands:
            assert any(reachable(default_scenario, src, h) for src in hands)
        hands = new_hands
        if out.done:
            env.reset()
            hands = {2}


def test_independent_handles_do_not_interact(default_scenario):
    env1, _ = reset(default_scenario, 5)
    env2, _ = reset(default_scenario, 5)
    r1 = [env1.step(13).reward]
    r2 = [env2.step(13).reward, env2.step(14).reward]
    r1.append(env1.step(14).reward)
    assert r1 == r2[: len(r1)]
