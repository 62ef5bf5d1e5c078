"""Ground-truth training environment.

Executes actions against the hidden network state, returns observations
and rewards, and accounts per-action virtual latency instead of ever
sleeping. One RNG stream per handle; one draw per live hand per step in
hand-id order, so logging or inspection can never perturb trajectories.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .engine import apply_successes, plan_action, step_reward
from .facts import Fact, Observation
from .scenario import Scenario, validate


@dataclass(frozen=True)
class HandReport:
    hand_id: int
    executable: bool
    succeeded: bool | None


@dataclass(frozen=True)
class StepInfo:
    per_hand: tuple[HandReport, ...]
    latency_s: float


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    done: bool
    info: StepInfo


@dataclass
class GroundState:
    """Hidden true state; observation is a deterministic function of it."""

    facts: frozenset[Fact]
    step_count: int = 0
    episode_return: float = 0.0
    done: bool = False


class EpisodeDone(RuntimeError):
    """step() called after the episode finished."""


class EmuEnv:
    """Environment handle. Single-context: no concurrent step calls.

    Distinct handles (distinct seeds) share no mutable state and may run
    fully in parallel.
    """

    def __init__(self, scenario: Scenario, seed: int):
        report = validate(scenario)
        if report.errors:
            raise ValueError(f"invalid scenario: {report.errors[0].message}")
        self.scenario = scenario
        self.seed = seed
        self._rng = random.Random(seed)
        self._virtual_time_s = 0.0
        self._total_steps = 0
        self._state = GroundState(facts=frozenset(scenario.initial_facts))

    # -- environment contract ------------------------------------------------

    @property
    def action_count(self) -> int:
        return len(self.scenario.actions)

    @property
    def done(self) -> bool:
        return self._state.done

    @property
    def virtual_time_s(self) -> float:
        return self._virtual_time_s

    @property
    def total_steps(self) -> int:
        return self._total_steps

    @property
    def episode_return(self) -> float:
        return self._state.episode_return

    @property
    def unknown_events(self) -> int:
        return 0  # ground truth has no unknown transitions

    def reset(self) -> Observation:
        """Start a fresh episode; no fact survives. The RNG stream and the
        virtual clock continue across episodes."""
        self._state = GroundState(facts=frozenset(self.scenario.initial_facts))
        return self.observation()

    def reseed(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def observation(self) -> Observation:
        return Observation.of(self._state.facts)

    def step(self, action_id: int) -> StepOutcome:
        if not 0 <= action_id < self.action_count:
            raise ValueError(f"action id {action_id} out of range 0..{self.action_count - 1}")
        if self._state.done:
            raise EpisodeDone("episode is done; call reset()")
        action = self.scenario.actions[action_id]
        state = self._state
        plans = plan_action(self.scenario, state.facts, action)

        # one draw per live hand, hand-id ascending, success/failure or not
        draws = tuple(self._rng.random() for _ in plans)
        successes = tuple(
            plan.can_succeed and draw < plan.success_prob
            for plan, draw in zip(plans, draws)
        )
        next_facts = apply_successes(state.facts, plans, successes)
        flags = tuple(p.executable for p in plans)
        reward = step_reward(self.scenario.game, state.facts, next_facts, flags)

        state.facts = next_facts
        state.step_count += 1
        state.episode_return += reward
        self._virtual_time_s += action.latency_s
        self._total_steps += 1
        goal = self.scenario.game.goal_satisfied(next_facts)
        state.done = goal or state.step_count >= self.scenario.game.max_steps

        per_hand = tuple(
            HandReport(plan.hand.hand_id, plan.executable, ok)
            for plan, ok in zip(plans, successes)
        )
        return StepOutcome(
            observation=Observation.of(next_facts),
            reward=reward,
            done=state.done,
            info=StepInfo(per_hand=per_hand, latency_s=action.latency_s),
        )


def reset(scenario: Scenario, seed: int) -> tuple[EmuEnv, Observation]:
    """Create a seeded environment handle and start the first episode."""
    env = EmuEnv(scenario, seed)
    return env, env.reset()


def virtual_time(env: EmuEnv) -> float:
    return env.virtual_time_s


def episode_return(env: EmuEnv) -> float:
    return env.episode_return
