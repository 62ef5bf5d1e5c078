"""Brute-force ground-truth solver.

Enumerates every knowledge state a scenario can reach (facts are
monotone, so the space is a finite lattice), then runs undiscounted
finite-horizon backward induction with horizon = max_steps. The optimal
expected return it reports upper-bounds any observation policy and is
attained here because the observation is a deterministic function of the
hidden state; all optimality acceptance checks compare against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .engine import outcome_distribution, executability, derive_hands
from .facts import Fact, Observation
from .scenario import GameSpec, Scenario
from .traces import CountIndex

DEFAULT_NODE_BUDGET = 200_000


class NodeBudgetExceeded(RuntimeError):
    def __init__(self, budget: int, frontier: int):
        super().__init__(
            f"state enumeration exceeded the node budget of {budget} "
            f"(frontier size {frontier})"
        )
        self.budget = budget
        self.frontier = frontier


@dataclass(frozen=True)
class Edge:
    dst: int
    probability: Fraction
    reward: float


@dataclass
class StateGraph:
    """Closed transition graph over canonical state keys."""

    keys: list[str]
    index: dict[str, int]
    edges: dict[tuple[int, int], tuple[Edge, ...]]  # (state, action) -> outcomes
    terminal: np.ndarray  # goal-satisfying states
    initial: int
    horizon: int
    n_actions: int

    @property
    def node_count(self) -> int:
        return len(self.keys)

    @property
    def edge_count(self) -> int:
        return sum(len(v) for v in self.edges.values())


def enumerate_states(scenario: Scenario, cap: int = DEFAULT_NODE_BUDGET) -> StateGraph:
    """Breadth-first closure from the initial state over all actions,
    expanding stochastic branches exactly. Goal states are terminal and
    not expanded."""
    game = scenario.game
    initial = frozenset(scenario.initial_facts)
    key_of: dict[frozenset[Fact], str] = {}

    def state_key(facts: frozenset[Fact]) -> str:
        k = key_of.get(facts)
        if k is None:
            k = Observation.of(facts).key
            key_of[facts] = k
        return k

    keys: list[str] = []
    index: dict[str, int] = {}
    fact_sets: list[frozenset[Fact]] = []
    terminal_flags: list[bool] = []

    def intern(facts: frozenset[Fact]) -> int:
        k = state_key(facts)
        i = index.get(k)
        if i is None:
            i = len(keys)
            index[k] = i
            keys.append(k)
            fact_sets.append(facts)
            terminal_flags.append(game.goal_satisfied(facts))
        return i

    edges: dict[tuple[int, int], tuple[Edge, ...]] = {}
    frontier = [intern(initial)]
    cursor = 0
    while cursor < len(frontier):
        state = frontier[cursor]
        cursor += 1
        if terminal_flags[state]:
            continue
        facts = fact_sets[state]
        for action in scenario.actions:
            outs = outcome_distribution(scenario, facts, action)
            edge_list = []
            for next_facts, prob, reward in outs:
                before = len(keys)
                dst = intern(next_facts)
                if len(keys) > before:
                    if len(keys) > cap:
                        raise NodeBudgetExceeded(cap, len(frontier) - cursor)
                    frontier.append(dst)
                edge_list.append(Edge(dst, prob, reward))
            edges[(state, action.id)] = tuple(edge_list)

    return StateGraph(
        keys=keys,
        index=index,
        edges=edges,
        terminal=np.asarray(terminal_flags, dtype=bool),
        initial=index[state_key(initial)],
        horizon=game.max_steps,
        n_actions=len(scenario.actions),
    )


@dataclass
class OracleResult:
    optimal_expected_return: float
    min_expected_steps: float
    optimal_policy: dict[str, int]  # state key -> action at full horizon
    node_count: int
    edge_count: int
    #: action table indexed by steps remaining (1..horizon); row h gives
    #: the optimal action per state with h steps left
    policy_by_horizon: np.ndarray | None = None
    goal_reachable: bool = True


def value_iteration(graph: StateGraph, game: GameSpec) -> OracleResult:
    """Undiscounted backward induction over (state, steps-remaining)."""
    n = graph.node_count
    horizon = game.max_steps
    n_actions = graph.n_actions

    # flatten edges into arrays grouped by (state, action)
    pair_state = []
    pair_action = []
    e_dst = []
    e_prob = []
    e_reward = []
    pair_starts = []
    for (state, action), edge_list in sorted(graph.edges.items()):
        pair_starts.append(len(e_dst))
        pair_state.append(state)
        pair_action.append(action)
        for edge in edge_list:
            e_dst.append(edge.dst)
            e_prob.append(float(edge.probability))
            e_reward.append(edge.reward)
    n_pairs = len(pair_state)
    pair_state_arr = np.asarray(pair_state, dtype=np.int64)
    pair_action_arr = np.asarray(pair_action, dtype=np.int64)
    e_dst_arr = np.asarray(e_dst, dtype=np.int64)
    e_prob_arr = np.asarray(e_prob, dtype=np.float64)
    e_reward_arr = np.asarray(e_reward, dtype=np.float64)
    starts = np.asarray(pair_starts, dtype=np.int64)
    e_pair = np.repeat(np.arange(n_pairs), np.diff(np.append(starts, len(e_dst))))

    values = np.zeros(n)
    policy_by_horizon = np.zeros((horizon + 1, n), dtype=np.int64)
    nonterminal = ~graph.terminal

    q = np.full((n, n_actions), -np.inf)
    for h in range(1, horizon + 1):
        contrib = e_prob_arr * (e_reward_arr + values[e_dst_arr])
        pair_q = np.bincount(e_pair, weights=contrib, minlength=n_pairs)
        q.fill(-np.inf)
        q[pair_state_arr, pair_action_arr] = pair_q
        new_values = q.max(axis=1)
        actions = q.argmax(axis=1)
        new_values[graph.terminal] = 0.0
        actions[graph.terminal] = 0
        # states with no outgoing pairs (shouldn't happen) keep value 0
        isolated = ~np.isfinite(new_values)
        new_values[isolated] = 0.0
        actions[isolated] = 0
        values = new_values
        policy_by_horizon[h] = actions

    # expected episode length under the greedy optimal policy
    steps = np.zeros(n)
    for h in range(1, horizon + 1):
        new_steps = np.zeros(n)
        for i in np.nonzero(nonterminal)[0]:
            action = policy_by_horizon[h][i]
            acc = 1.0
            for edge in graph.edges.get((int(i), int(action)), ()):
                acc += float(edge.probability) * steps[edge.dst]
            new_steps[i] = acc
        steps = new_steps

    # is the goal reachable at all from the initial state?
    reachable_goal = _goal_reachable(graph)

    optimal_return = float(values[graph.initial])
    policy = {graph.keys[i]: int(policy_by_horizon[horizon][i]) for i in range(n)}
    return OracleResult(
        optimal_expected_return=optimal_return,
        min_expected_steps=float(steps[graph.initial]),
        optimal_policy=policy,
        node_count=graph.node_count,
        edge_count=graph.edge_count,
        policy_by_horizon=policy_by_horizon,
        goal_reachable=reachable_goal,
    )


def _goal_reachable(graph: StateGraph) -> bool:
    seen = {graph.initial}
    stack = [graph.initial]
    while stack:
        state = stack.pop()
        if graph.terminal[state]:
            return True
        for action in range(graph.n_actions):
            for edge in graph.edges.get((state, action), ()):
                if edge.dst not in seen:
                    seen.add(edge.dst)
                    stack.append(edge.dst)
    return False


class OraclePolicy:
    """Rollout adapter: plays the exact horizon-indexed optimal policy."""

    def __init__(self, result: OracleResult, graph: StateGraph, horizon: int):
        self.result = result
        self.graph = graph
        self.horizon = horizon
        self._step = 0

    def reset(self) -> None:
        self._step = 0

    def action_for(self, o_key: str) -> int:
        state = self.graph.index.get(o_key)
        if state is None:
            return 0
        remaining = max(1, self.horizon - self._step)
        self._step += 1
        return int(self.result.policy_by_horizon[remaining][state])


def exhaustive_trace(
    scenario: Scenario, cap: int = DEFAULT_NODE_BUDGET, resolution: int | None = None
) -> CountIndex:
    """Every reachable (o, a, o') with exact ground-truth probabilities
    converted to integer counts.

    Per pair, counts are probability * L where L is the least common
    multiple of the outcome denominators (or `resolution` if given, which
    must make every probability integral).
    """
    graph = enumerate_states(scenario, cap)
    idx = CountIndex(scenario_digest=scenario.digest)
    for (state, action_id), edge_list in sorted(graph.edges.items()):
        o_key = graph.keys[state]
        if resolution is None:
            scale = 1
            for edge in edge_list:
                scale = scale * edge.probability.denominator // math.gcd(
                    scale, edge.probability.denominator
                )
        else:
            scale = resolution
        outcome_counts: dict[str, int] = {}
        for edge in edge_list:
            count = edge.probability * scale
            if count.denominator != 1:
                raise ValueError(
                    f"resolution {scale} does not make probability {edge.probability} integral"
                )
            o2_key = graph.keys[edge.dst]
            outcome_counts[o2_key] = outcome_counts.get(o2_key, 0) + int(count)
        pair = (o_key, action_id)
        idx.counts[pair] = outcome_counts
        idx.totals[pair] = sum(outcome_counts.values())
        obs = Observation.of(_facts_of(o_key))
        action = scenario.actions[action_id]
        idx.executable[pair] = executability(scenario, obs.fact_set(), action)
        idx.record_count += idx.totals[pair]
    idx.initial_keys.add(graph.keys[graph.initial])
    return idx


def _facts_of(o_key: str) -> tuple[Fact, ...]:
    from .facts import parse_observation_key

    return parse_observation_key(o_key).facts


def hands_of_key(o_key: str) -> tuple[int, ...]:
    return tuple(h.hand_id for h in derive_hands(frozenset(_facts_of(o_key))))
