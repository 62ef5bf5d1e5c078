"""Shared step-resolution core.

Resolves what one action does to one knowledge state: per-hand parameter
binding, ground-truth guard checks, and effect expansion. The emulator
samples from the resolved plans with its RNG; the oracle enumerates all
success/failure combinations symbolically. Both call into this module so
their dynamics agree by construction.

Hands are derived from HandPresent facts: one hand per compromised host,
hand id == host id, privilege is the highest level present. Because
facts are monotone within an episode, the full environment state is a
deterministic function of the fact set, which is what makes the
observation process a proper MDP.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product

from .facts import Fact, FactKind, PRIV_ELEVATED, PRIV_USER
from .scenario import (
    ACCESS_PREFIX,
    ActionSpec,
    FactPattern,
    GameSpec,
    KNOWN_MACRO,
    REACHABLE_MACRO,
    SERVICES_MACRO,
    SRC_MACRO,
    Scenario,
    is_variable,
    reachable,
    reachable_from,
)


@dataclass(frozen=True)
class Hand:
    """A foothold on a compromised host; hand_id equals the host id."""

    hand_id: int
    host: int
    privilege: str


@dataclass(frozen=True)
class HandPlan:
    """Resolved behaviour of one hand for one action at one state."""

    hand: Hand
    executable: bool
    guard_ok: bool
    success_prob: float
    effects: tuple[Fact, ...]

    @property
    def can_succeed(self) -> bool:
        return self.executable and self.guard_ok and self.success_prob > 0.0


def derive_hands(facts: frozenset[Fact]) -> tuple[Hand, ...]:
    """Live hands implied by HandPresent facts, host-ascending."""
    privilege: dict[int, str] = {}
    for f in facts:
        if f.kind is FactKind.HAND_PRESENT:
            if f.detail == PRIV_ELEVATED or privilege.get(f.host) == PRIV_ELEVATED:
                privilege[f.host] = PRIV_ELEVATED
            else:
                privilege[f.host] = PRIV_USER
    return tuple(Hand(host, host, priv) for host, priv in sorted(privilege.items()))


def _match_pattern(
    pattern: FactPattern, facts: frozenset[Fact], binding: dict[str, object]
) -> list[tuple[Fact, dict[str, object]]]:
    """All facts matching one pattern under a partial binding."""
    out = []
    for fact in facts:
        if fact.kind is not pattern.kind:
            continue
        new = dict(binding)
        host_term = pattern.host
        if isinstance(host_term, int):
            if fact.host != host_term:
                continue
        elif is_variable(host_term):
            bound = new.get(host_term)
            if bound is None:
                new[host_term] = fact.host
            elif bound != fact.host:
                continue
        else:  # $src or other macro, already resolved in the binding
            if new.get(host_term) != fact.host:
                continue
        detail_term = pattern.detail
        if is_variable(detail_term):
            bound = new.get(detail_term)
            if bound is None:
                new[detail_term] = fact.detail
            elif bound != fact.detail:
                continue
        elif fact.detail != detail_term:
            continue
        out.append((fact, new))
    return out


def enumerate_bindings(
    action: ActionSpec, facts: frozenset[Fact], src_host: int
) -> list[tuple[tuple[Fact, ...], dict[str, object]]]:
    """Complete bindings of an action's preconditions against facts.

    Returns (matched-facts, binding) pairs sorted by the matched fact
    tuple, which defines the canonical binding order.
    """
    partial: list[tuple[tuple[Fact, ...], dict[str, object]]] = [((), {SRC_MACRO: src_host})]
    for pattern in action.preconditions:
        nxt = []
        for matched, binding in partial:
            for fact, new in _match_pattern(pattern, facts, binding):
                nxt.append((matched + (fact,), new))
        partial = nxt
        if not partial:
            return []
    seen: set[tuple] = set()
    unique = []
    for matched, binding in sorted(partial, key=lambda mb: mb[0]):
        sig = tuple(sorted((k, v) for k, v in binding.items()))
        if sig not in seen:
            seen.add(sig)
            unique.append((matched, binding))
    return unique


def _resolve_hosts(
    term: int | str,
    binding: dict[str, object],
    scenario: Scenario,
    facts: frozenset[Fact],
    src_host: int,
) -> list[int]:
    if isinstance(term, int):
        return [term]
    if term == SRC_MACRO:
        return [src_host]
    if term == REACHABLE_MACRO:
        return list(reachable_from(scenario, src_host))
    if term == KNOWN_MACRO:
        discovered = {f.host for f in facts if f.kind is FactKind.HOST_DISCOVERED}
        return [h for h in reachable_from(scenario, src_host) if h in discovered]
    value = binding.get(term)
    if not isinstance(value, int):
        raise ValueError(f"host term {term!r} is unbound")
    return [value]


def instantiate_effects(
    action: ActionSpec,
    binding: dict[str, object],
    scenario: Scenario,
    facts: frozenset[Fact],
    src_host: int,
) -> tuple[Fact, ...]:
    """Ground facts an action adds on success, macros expanded."""
    out: list[Fact] = []
    for pattern in action.effects:
        hosts = _resolve_hosts(pattern.host, binding, scenario, facts, src_host)
        for host in hosts:
            if pattern.detail == SERVICES_MACRO:
                for svc in scenario.services(host):
                    if not svc.startswith(ACCESS_PREFIX):
                        out.append(Fact(pattern.kind, host, svc))
            elif is_variable(pattern.detail):
                out.append(Fact(pattern.kind, host, str(binding[pattern.detail])))
            else:
                out.append(Fact(pattern.kind, host, pattern.detail))
    return tuple(sorted(set(out)))


def _guard_holds(
    action: ActionSpec,
    binding: dict[str, object],
    scenario: Scenario,
    src_host: int,
) -> bool:
    guard = action.guard
    targets = _resolve_hosts(guard.target, binding, scenario, frozenset(), src_host)
    target = targets[0]
    if not scenario.has_host(target):
        return False
    if guard.reachable and not reachable(scenario, src_host, target):
        return False
    if guard.service is not None and guard.service not in scenario.services(target):
        return False
    if guard.credential is not None:
        principal = binding.get(guard.credential, guard.credential)
        if f"{ACCESS_PREFIX}{principal}" not in scenario.services(target):
            return False
    return True


def plan_hand(
    scenario: Scenario, facts: frozenset[Fact], action: ActionSpec, hand: Hand
) -> HandPlan:
    """Resolve one hand's behaviour for the action at this state.

    Binding choice: the first (canonically smallest) binding whose
    effects are not yet all present; when every binding's effects are
    already present, the smallest binding overall is re-executed. The
    rule depends only on the fact set, never on episode history.
    """
    bindings = enumerate_bindings(action, facts, hand.host)
    if not bindings:
        return HandPlan(hand, False, False, action.success_prob, ())
    chosen = None
    chosen_effects: tuple[Fact, ...] = ()
    for _, binding in bindings:
        effects = instantiate_effects(action, binding, scenario, facts, hand.host)
        if any(f not in facts for f in effects):
            chosen, chosen_effects = binding, effects
            break
    if chosen is None:
        chosen = bindings[0][1]
        chosen_effects = instantiate_effects(action, chosen, scenario, facts, hand.host)
    guard_ok = _guard_holds(action, chosen, scenario, hand.host)
    return HandPlan(hand, True, guard_ok, action.success_prob, chosen_effects)


def plan_action(
    scenario: Scenario, facts: frozenset[Fact], action: ActionSpec
) -> tuple[HandPlan, ...]:
    """Plans for every live hand, hand-id ascending."""
    return tuple(
        plan_hand(scenario, facts, action, hand) for hand in derive_hands(facts)
    )


def apply_successes(
    facts: frozenset[Fact], plans: tuple[HandPlan, ...], successes: tuple[bool, ...]
) -> frozenset[Fact]:
    """Fact set after the given per-hand success outcomes."""
    added: set[Fact] = set()
    for plan, ok in zip(plans, successes):
        if ok and plan.can_succeed:
            added.update(plan.effects)
    if not added:
        return facts
    return facts | added


def step_reward(
    game: GameSpec,
    prev_facts: frozenset[Fact],
    next_facts: frozenset[Fact],
    executable_flags: tuple[bool, ...],
) -> float:
    """R = G - L: goal gain on the first goal-satisfying transition minus
    a per-hand cost (cost_valid if the hand could bind parameters,
    cost_invalid otherwise)."""
    gain = 0.0
    if game.goal_satisfied(next_facts) and not game.goal_satisfied(prev_facts):
        gain = game.goal_gain
    cost = sum(
        game.cost_valid if flag else game.cost_invalid for flag in executable_flags
    )
    return gain - cost


def executability(
    scenario: Scenario, facts: frozenset[Fact], action: ActionSpec
) -> tuple[bool, ...]:
    """Per-hand executable flags, hand-id ascending (pure function of facts)."""
    return tuple(p.executable for p in plan_action(scenario, facts, action))


def outcome_distribution(
    scenario: Scenario, facts: frozenset[Fact], action: ActionSpec
) -> list[tuple[frozenset[Fact], Fraction, float]]:
    """Exact next-state distribution for (facts, action).

    Enumerates per-hand success/failure combinations, merging branches
    that land on the same fact set. Returns (next_facts, probability,
    reward) with probabilities summing to exactly 1.
    """
    plans = plan_action(scenario, facts, action)
    flags = tuple(p.executable for p in plans)
    drawing = [p for p in plans if p.can_succeed]
    outcomes: dict[frozenset[Fact], Fraction] = {}
    for combo in product((True, False), repeat=len(drawing)):
        prob = Fraction(1)
        for plan, ok in zip(drawing, combo):
            p = Fraction(plan.success_prob).limit_denominator(10**9)
            prob *= p if ok else 1 - p
        if prob == 0:
            continue
        combo_iter = iter(combo)
        successes = tuple(next(combo_iter) if p.can_succeed else False for p in plans)
        nxt = apply_successes(facts, plans, successes)
        outcomes[nxt] = outcomes.get(nxt, Fraction(0)) + prob
    if not outcomes:
        outcomes[facts] = Fraction(1)
    return [
        (nxt, prob, step_reward(scenario.game, facts, nxt, flags))
        for nxt, prob in sorted(outcomes.items(), key=lambda kv: sorted(kv[0]))
    ]
