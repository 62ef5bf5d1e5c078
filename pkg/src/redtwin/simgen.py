"""Generated twin simulator: the empirical MDP over observations.

``build`` turns a CountIndex into exact count-ratio transition
distributions (stored as rationals, sampled through a float inverse
CDF). The resulting environment satisfies the same reset/step contract
as the ground-truth emulator, so any learner runs unmodified on either.

A stepped (o, a) pair never seen in the data falls back to the identity
transition o' = o - for a red agent an unknown action is most probably
not executable - and the event is tallied in the unknown-transition
ledger.
"""

from __future__ import annotations

import json
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .emulator import HandReport, StepInfo, StepOutcome
from .engine import derive_hands
from .facts import Observation, parse_observation_key
from .scenario import GameSpec
from .traces import CountIndex, TraceError, TraceStats, stats as index_stats

SIM_STEP_LATENCY_S = 0.001
SIM_SUFFIX = ".cgs"

PROBABILITY_TOLERANCE = 1e-12


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class PairDistribution:
    """Outcome distribution of one (o_key, action_id) pair."""

    outcomes: tuple[tuple[str, Fraction], ...]  # (o2_key, probability), o2_key-sorted
    counts: tuple[int, ...]
    total: int
    executable: tuple[bool, ...]
    cumulative: tuple[float, ...]

    def sample(self, u: float) -> str:
        idx = bisect_right(self.cumulative, u)
        if idx >= len(self.outcomes):
            idx = len(self.outcomes) - 1
        return self.outcomes[idx][0]


@dataclass
class EmpiricalMdp:
    """Immutable, shareable empirical FSM over observations."""

    transitions: dict[tuple[str, int], PairDistribution]
    initial_key: str
    observations: dict[str, Observation]
    scenario_digest: str
    n_actions: int

    def pair_count(self) -> int:
        return len(self.transitions)

    def coverage_stats(self) -> TraceStats:
        idx = CountIndex()
        for (o_key, action_id), dist in self.transitions.items():
            idx.counts[(o_key, action_id)] = {
                o2: c for (o2, _), c in zip(dist.outcomes, dist.counts)
            }
            idx.totals[(o_key, action_id)] = dist.total
        return index_stats(idx)


def observations_from_keys(keys: set[str]) -> dict[str, Observation]:
    """Reconstruct observation payloads from canonical keys."""
    return {key: parse_observation_key(key) for key in sorted(keys)}


def build(
    idx: CountIndex,
    observations: dict[str, Observation] | None = None,
    initial_key: str | None = None,
    n_actions: int | None = None,
) -> EmpiricalMdp:
    """Build the empirical MDP: P(o' | o, a) = C(o,a,o') / sum_j C(o,a,o'_j).

    Probabilities are exact count ratios (rational arithmetic). Output is
    deterministic for a given index: pairs and outcome lists are key-sorted.
    """
    if not idx.counts:
        raise BuildError("empty count index")
    keys: set[str] = set()
    for (o_key, _), outcome_counts in idx.counts.items():
        keys.add(o_key)
        keys.update(outcome_counts)
    if observations is None:
        observations = observations_from_keys(keys)
    else:
        missing = sorted(keys - set(observations))
        if missing:
            raise BuildError(f"missing Observation payload for key {missing[0]!r}")

    if initial_key is None:
        if len(idx.initial_keys) == 1:
            initial_key = next(iter(idx.initial_keys))
        elif not idx.initial_keys:
            raise BuildError("no episode-start key in index; pass initial_key")
        else:
            raise BuildError(
                f"ambiguous initial key ({len(idx.initial_keys)} candidates); pass initial_key"
            )
    if initial_key not in observations:
        observations[initial_key] = parse_observation_key(initial_key)

    transitions: dict[tuple[str, int], PairDistribution] = {}
    max_action = 0
    for pair in sorted(idx.counts):
        outcome_counts = idx.counts[pair]
        total = idx.totals[pair]
        assert total == sum(outcome_counts.values())
        ordered = sorted(outcome_counts.items())
        probs = tuple((o2, Fraction(c, total)) for o2, c in ordered)
        acc = 0.0
        cumulative = []
        for _, p in probs:
            acc += float(p)
            cumulative.append(acc)
        transitions[pair] = PairDistribution(
            outcomes=probs,
            counts=tuple(c for _, c in ordered),
            total=total,
            executable=idx.executable.get(pair, ()),
            cumulative=tuple(cumulative),
        )
        max_action = max(max_action, pair[1])

    return EmpiricalMdp(
        transitions=transitions,
        initial_key=initial_key,
        observations=observations,
        scenario_digest=idx.scenario_digest or "",
        n_actions=n_actions if n_actions is not None else max_action + 1,
    )


@dataclass
class UnknownTransitionLedger:
    """Counts fallback events per (o_key, action_id); only ever increases."""

    events: dict[tuple[str, int], int] = field(default_factory=dict)
    total: int = 0

    def record(self, o_key: str, action_id: int) -> None:
        pair = (o_key, action_id)
        self.events[pair] = self.events.get(pair, 0) + 1
        self.total += 1

    def merge(self, other: UnknownTransitionLedger) -> None:
        for pair, count in other.events.items():
            self.events[pair] = self.events.get(pair, 0) + count
        self.total += other.total


class SimEnv:
    """Sampling handle over an EmpiricalMdp; single-context like EmuEnv.

    Many handles may train in parallel against one shared mdp. Rewards
    are recomputed from the game rules (never replayed from the trace),
    so one trace set supports any number of training games.
    """

    def __init__(
        self,
        mdp: EmpiricalMdp,
        game: GameSpec,
        seed: int,
        step_latency_s: float = SIM_STEP_LATENCY_S,
    ):
        self.mdp = mdp
        self.game = game
        self.seed = seed
        self.step_latency_s = step_latency_s
        self.ledger = UnknownTransitionLedger()
        self._rng = random.Random(seed)
        self._virtual_time_s = 0.0
        self._total_steps = 0
        self._key = mdp.initial_key
        self._step_count = 0
        self._episode_return = 0.0
        self._done = False
        # (o_key, a, o2_key) -> (reward, goal_reached); local because it
        # depends on this handle's GameSpec, not on the shared mdp
        self._reward_cache: dict[tuple[str, int, str], tuple[float, bool]] = {}
        self._hand_cache: dict[str, tuple[int, ...]] = {}

    # -- environment contract ------------------------------------------------

    @property
    def action_count(self) -> int:
        return self.mdp.n_actions

    @property
    def done(self) -> bool:
        return self._done

    @property
    def virtual_time_s(self) -> float:
        return self._virtual_time_s

    @property
    def total_steps(self) -> int:
        return self._total_steps

    @property
    def episode_return(self) -> float:
        return self._episode_return

    @property
    def unknown_events(self) -> int:
        return self.ledger.total

    def reset(self) -> Observation:
        self._key = self.mdp.initial_key
        self._step_count = 0
        self._episode_return = 0.0
        self._done = False
        return self.mdp.observations[self._key]

    def reseed(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def observation(self) -> Observation:
        return self.mdp.observations[self._key]

    def _hands(self, o_key: str) -> tuple[int, ...]:
        hands = self._hand_cache.get(o_key)
        if hands is None:
            obs = self.mdp.observations[o_key]
            hands = tuple(h.hand_id for h in derive_hands(obs.fact_set()))
            self._hand_cache[o_key] = hands
        return hands

    def _reward(self, o_key: str, action_id: int, o2_key: str, flags: tuple[bool, ...]) -> tuple[float, bool]:
        sig = (o_key, action_id, o2_key)
        cached = self._reward_cache.get(sig)
        if cached is None:
            prev = self.mdp.observations[o_key].fact_set()
            nxt = self.mdp.observations[o2_key].fact_set()
            goal_now = self.game.goal_satisfied(nxt)
            gain = self.game.goal_gain if goal_now and not self.game.goal_satisfied(prev) else 0.0
            cost = sum(
                self.game.cost_valid if f else self.game.cost_invalid for f in flags
            )
            cached = (gain - cost, goal_now)
            self._reward_cache[sig] = cached
        return cached

    def step(self, action_id: int) -> StepOutcome:
        if not 0 <= action_id < self.action_count:
            raise ValueError(f"action id {action_id} out of range 0..{self.action_count - 1}")
        if self._done:
            raise RuntimeError("episode is done; call reset()")
        o_key = self._key
        dist = self.mdp.transitions.get((o_key, action_id))
        if dist is not None:
            o2_key = dist.sample(self._rng.random())
            flags = dist.executable
        else:
            # unknown transition: identity fallback, every hand counted
            # as lacking parameters
            o2_key = o_key
            flags = tuple(False for _ in self._hands(o_key))
            self.ledger.record(o_key, action_id)
        reward, goal_now = self._reward(o_key, action_id, o2_key, flags)

        self._key = o2_key
        self._step_count += 1
        self._episode_return += reward
        self._virtual_time_s += self.step_latency_s
        self._total_steps += 1
        self._done = goal_now or self._step_count >= self.game.max_steps

        hands = self._hands(o_key)
        per_hand = tuple(
            HandReport(hand_id, flag, None) for hand_id, flag in zip(hands, flags)
        )
        return StepOutcome(
            observation=self.mdp.observations[o2_key],
            reward=reward,
            done=self._done,
            info=StepInfo(per_hand=per_hand, latency_s=self.step_latency_s),
        )


def sim_reset(
    mdp: EmpiricalMdp, game: GameSpec, seed: int, step_latency_s: float = SIM_STEP_LATENCY_S
) -> tuple[SimEnv, Observation]:
    """Create a seeded simulator handle and start the first episode."""
    env = SimEnv(mdp, game, seed, step_latency_s)
    return env, env.reset()


def sim_step(env: SimEnv, action_id: int) -> StepOutcome:
    return env.step(action_id)


@dataclass(frozen=True)
class SufficiencyReport:
    """Inputs for judging whether a trace set was sufficient."""

    coverage: TraceStats
    unknown_pairs: int
    unknown_events: int
    eval_mean_return: float | None
    eval_returns: tuple[float, ...]


def sufficiency_report(
    mdp: EmpiricalMdp,
    ledger: UnknownTransitionLedger,
    eval_results: tuple[float, ...] = (),
) -> SufficiencyReport:
    eval_returns = tuple(eval_results)
    mean = sum(eval_returns) / len(eval_returns) if eval_returns else None
    return SufficiencyReport(
        coverage=mdp.coverage_stats(),
        unknown_pairs=len(ledger.events),
        unknown_events=ledger.total,
        eval_mean_return=mean,
        eval_returns=eval_returns,
    )


def export_unknown_histogram(ledger: UnknownTransitionLedger, path: str | Path) -> None:
    """CSV export: o_key,action_id,unknown_count (sorted)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("o_key,action_id,unknown_count\n")
        for (o_key, action_id), count in sorted(ledger.events.items()):
            fh.write(f"\"{o_key}\",{action_id},{count}\n")


# ---------------------------------------------------------------------------
# .cgs serialization


def save_mdp(mdp: EmpiricalMdp, path: str | Path) -> None:
    """Write the simulator file: a header line, then one line per pair."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "format_version": FORMAT_VERSION_CGS,
            "scenario_digest": mdp.scenario_digest,
            "pairs": len(mdp.transitions),
            "initial_key": mdp.initial_key,
            "n_actions": mdp.n_actions,
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for (o_key, action_id), dist in sorted(mdp.transitions.items()):
            line = {
                "o_key": o_key,
                "action_id": action_id,
                "outcomes": [[o2, c] for (o2, _), c in zip(dist.outcomes, dist.counts)],
                "executable": list(dist.executable),
            }
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")


FORMAT_VERSION_CGS = 1


def load_mdp(path: str | Path) -> EmpiricalMdp:
    """Read a simulator file back into an exact EmpiricalMdp."""
    path = Path(path)
    idx = CountIndex()
    with path.open("r", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
            digest = str(header["scenario_digest"])
            initial_key = str(header["initial_key"])
            n_actions = int(header["n_actions"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TraceError(f"bad simulator header ({exc})", path, 1) from None
        idx.scenario_digest = digest
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                doc = json.loads(line)
                pair = (str(doc["o_key"]), int(doc["action_id"]))
                outcomes = {str(o2): int(c) for o2, c in doc["outcomes"]}
                flags = tuple(bool(x) for x in doc["executable"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise TraceError(f"corrupt simulator line ({exc})", path, lineno) from None
            idx.counts[pair] = outcomes
            idx.totals[pair] = sum(outcomes.values())
            idx.executable[pair] = flags
    return build(idx, initial_key=initial_key, n_actions=n_actions)
