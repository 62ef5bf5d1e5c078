"""Declarative ground truth: network scenario, action space, and game rules.

A scenario document is a UTF-8 JSON file with top-level keys ``version``
(=1), ``hosts``, ``subnets``, ``firewall``, ``actions``, ``game`` and
``initial_facts``. The canonical serialization sorts object keys
lexicographically, which makes the 64-bit FNV-1a content digest stable
across platforms. Everything downstream consumes an immutable
``Scenario``.

Action preconditions and effects are fact patterns. Pattern host fields
may be a declared host id, a variable (``"?t"``), or one of the
expansion macros resolved against ground truth when the action fires:

* ``"$src"`` - the executing hand's host;
* ``"$reachable"`` - every host reachable from the hand's host;
* ``"$known"`` - reachable hosts already present as HostDiscovered facts.

Pattern detail fields may be a literal, a variable, or ``"$services"``
(expands to the target host's declared services, except ``access_*``
markers, which encode credential ground truth and are never revealed
by scans).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from importlib import resources

from .facts import (
    FACT_SEPARATOR,
    FIELD_SEPARATOR,
    Fact,
    FactKind,
    PRIVILEGES,
    kind_from_name,
    kind_name,
)

DEFAULT_ACTION_LATENCY_S = 16.0

SRC_MACRO = "$src"
REACHABLE_MACRO = "$reachable"
KNOWN_MACRO = "$known"
SERVICES_MACRO = "$services"

#: services with this prefix are ground-truth access markers (credential
#: validity), not scannable services.
ACCESS_PREFIX = "access_"

_HOST_MACROS = (SRC_MACRO, REACHABLE_MACRO, KNOWN_MACRO)


class ScenarioParseError(ValueError):
    """Raised when a scenario document cannot be parsed or is invalid."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class OsName(str, enum.Enum):
    WIN10 = "win10"
    WINSERVER2016 = "winserver2016"
    UBUNTU18 = "ubuntu18"


class Tactic(str, enum.Enum):
    DISCOVERY = "Discovery"
    CREDENTIAL_ACCESS = "CredentialAccess"
    PRIVILEGE_ESCALATION = "PrivilegeEscalation"
    LATERAL_MOVEMENT = "LateralMovement"


@dataclass(frozen=True)
class HostSpec:
    id: int
    os: OsName
    subnet: str
    services: tuple[str, ...] = ()
    is_domain_controller: bool = False
    internet_facing: bool = False


@dataclass(frozen=True)
class FirewallRule:
    """Directed rule; endpoints are host ids (int) or subnet ids (str)."""

    src: int | str
    dst: int | str
    allow: bool = True


def is_variable(term: object) -> bool:
    return isinstance(term, str) and term.startswith("?")


@dataclass(frozen=True)
class FactPattern:
    """A fact with variables/macros in place of concrete values."""

    kind: FactKind
    host: int | str
    detail: str = ""

    def variables(self) -> set[str]:
        out = set()
        if is_variable(self.host):
            out.add(self.host)
        if is_variable(self.detail):
            out.add(self.detail)
        return out


@dataclass(frozen=True)
class GuardSpec:
    """Ground-truth predicate checked per hand before the success draw.

    ``target`` names the host the action operates on (a literal id, a
    bound variable, or ``$src``). The guard holds when the target is
    reachable from the hand's host (if ``reachable``), runs ``service``
    (if set), and ``credential`` (a principal literal or bound variable,
    if set) is valid for the target, i.e. the target declares the
    ``access_<principal>`` marker.
    """

    target: int | str = SRC_MACRO
    reachable: bool = True
    service: str | None = None
    credential: str | None = None


@dataclass(frozen=True)
class ActionSpec:
    id: int
    tactic: Tactic
    preconditions: tuple[FactPattern, ...] = ()
    guard: GuardSpec = GuardSpec()
    success_prob: float = 1.0
    effects: tuple[FactPattern, ...] = ()
    latency_s: float = DEFAULT_ACTION_LATENCY_S


@dataclass(frozen=True)
class GameSpec:
    """Reward and termination rules layered on a network."""

    goal: tuple[Fact, ...]
    goal_gain: float = 100.0
    cost_valid: float = 1.0
    cost_invalid: float = 8.0
    max_steps: int = 80

    def goal_satisfied(self, facts: frozenset[Fact]) -> bool:
        return all(f in facts for f in self.goal)


@dataclass(frozen=True)
class Scenario:
    hosts: tuple[HostSpec, ...]
    subnets: tuple[str, ...]
    firewall: tuple[FirewallRule, ...]
    actions: tuple[ActionSpec, ...]
    game: GameSpec
    initial_facts: tuple[Fact, ...]
    _host_index: dict[int, HostSpec] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        self._host_index.update({h.id: h for h in self.hosts})

    def host(self, host_id: int) -> HostSpec:
        try:
            return self._host_index[host_id]
        except KeyError:
            raise KeyError(f"unknown host id {host_id}") from None

    def has_host(self, host_id: int) -> bool:
        return host_id in self._host_index

    def services(self, host_id: int) -> tuple[str, ...]:
        return self.host(host_id).services

    def domain_controllers(self) -> tuple[int, ...]:
        return tuple(h.id for h in self.hosts if h.is_domain_controller)

    @property
    def digest(self) -> str:
        return scenario_digest(self)


@dataclass(frozen=True)
class ValidationIssue:
    severity: str  # "error" | "warning"
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...]

    @property
    def errors(self) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.severity == "error")

    @property
    def warnings(self) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.severity == "warning")

    @property
    def ok(self) -> bool:
        return not self.issues


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_bytes(document: dict) -> bytes:
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("utf-8")


def scenario_digest(scenario: Scenario) -> str:
    """Stable 16-hex-digit content digest of the canonical document."""
    return f"{fnv1a64(canonical_bytes(scenario_to_document(scenario))):016x}"


# ---------------------------------------------------------------------------
# document <-> Scenario


def _fact_to_doc(fact: Fact) -> dict:
    return {"kind": kind_name(fact.kind), "host": fact.host, "detail": fact.detail}


def _fact_from_doc(doc: dict, where: str, errors: list[str]) -> Fact | None:
    try:
        return Fact(kind_from_name(doc["kind"]), int(doc["host"]), str(doc.get("detail", "")))
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"{where}: bad fact ({exc})")
        return None


def _pattern_to_doc(p: FactPattern) -> dict:
    return {"kind": kind_name(p.kind), "host": p.host, "detail": p.detail}


def _pattern_from_doc(doc: dict, where: str, errors: list[str]) -> FactPattern | None:
    try:
        host = doc["host"]
        if not isinstance(host, (int, str)) or isinstance(host, bool):
            raise ValueError(f"host term {host!r}")
        return FactPattern(kind_from_name(doc["kind"]), host, str(doc.get("detail", "")))
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"{where}: bad pattern ({exc})")
        return None


def scenario_to_document(scenario: Scenario) -> dict:
    """Serialize to the plain-dict document form (order-normalized)."""
    return {
        "version": 1,
        "hosts": [
            {
                "id": h.id,
                "os": h.os.value,
                "subnet": h.subnet,
                "services": list(h.services),
                "is_domain_controller": h.is_domain_controller,
                "internet_facing": h.internet_facing,
            }
            for h in scenario.hosts
        ],
        "subnets": list(scenario.subnets),
        "firewall": [
            {"src": r.src, "dst": r.dst, "allow": r.allow} for r in scenario.firewall
        ],
        "actions": [
            {
                "id": a.id,
                "tactic": a.tactic.value,
                "preconditions": [_pattern_to_doc(p) for p in a.preconditions],
                "guard": {
                    "target": a.guard.target,
                    "reachable": a.guard.reachable,
                    "service": a.guard.service,
                    "credential": a.guard.credential,
                },
                "success_prob": a.success_prob,
                "effects": [_pattern_to_doc(p) for p in a.effects],
                "latency_s": a.latency_s,
            }
            for a in scenario.actions
        ],
        "game": {
            "goal": [_fact_to_doc(f) for f in scenario.game.goal],
            "goal_gain": scenario.game.goal_gain,
            "cost_valid": scenario.game.cost_valid,
            "cost_invalid": scenario.game.cost_invalid,
            "max_steps": scenario.game.max_steps,
        },
        "initial_facts": [_fact_to_doc(f) for f in scenario.initial_facts],
    }


def serialize_scenario(scenario: Scenario) -> str:
    """Canonical JSON text of a scenario (sorted keys)."""
    return json.dumps(scenario_to_document(scenario), sort_keys=True, indent=2) + "\n"


def scenario_from_document(doc: dict) -> Scenario:
    """Build and validate a Scenario from a parsed document.

    Raises ScenarioParseError listing every problem found.
    """
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioParseError(["document root must be an object"])
    if doc.get("version") != 1:
        errors.append(f"unsupported version {doc.get('version')!r} (expected 1)")

    hosts: list[HostSpec] = []
    for i, h in enumerate(doc.get("hosts", [])):
        where = f"hosts[{i}]"
        try:
            hosts.append(
                HostSpec(
                    id=int(h["id"]),
                    os=OsName(h["os"]),
                    subnet=str(h["subnet"]),
                    services=tuple(sorted(str(s) for s in h.get("services", []))),
                    is_domain_controller=bool(h.get("is_domain_controller", False)),
                    internet_facing=bool(h.get("internet_facing", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{where}: {exc}")

    subnets = tuple(str(s) for s in doc.get("subnets", []))

    firewall: list[FirewallRule] = []
    for i, r in enumerate(doc.get("firewall", [])):
        where = f"firewall[{i}]"
        try:
            src, dst = r["src"], r["dst"]
            if not isinstance(src, (int, str)) or not isinstance(dst, (int, str)):
                raise ValueError("endpoints must be host ids or subnet ids")
            firewall.append(FirewallRule(src=src, dst=dst, allow=bool(r.get("allow", True))))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{where}: {exc}")

    actions: list[ActionSpec] = []
    for i, a in enumerate(doc.get("actions", [])):
        where = f"actions[{i}]"
        try:
            pre = tuple(
                p
                for j, raw in enumerate(a.get("preconditions", []))
                if (p := _pattern_from_doc(raw, f"{where}.preconditions[{j}]", errors))
            )
            eff = tuple(
                p
                for j, raw in enumerate(a.get("effects", []))
                if (p := _pattern_from_doc(raw, f"{where}.effects[{j}]", errors))
            )
            g = a.get("guard", {})
            guard = GuardSpec(
                target=g.get("target", SRC_MACRO),
                reachable=bool(g.get("reachable", True)),
                service=g.get("service"),
                credential=g.get("credential"),
            )
            actions.append(
                ActionSpec(
                    id=int(a["id"]),
                    tactic=Tactic(a["tactic"]),
                    preconditions=pre,
                    guard=guard,
                    success_prob=float(a["success_prob"]),
                    effects=eff,
                    latency_s=float(a.get("latency_s", DEFAULT_ACTION_LATENCY_S)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{where}: {exc}")

    game_doc = doc.get("game", {})
    goal_facts: list[Fact] = []
    for j, raw in enumerate(game_doc.get("goal", [])):
        f = _fact_from_doc(raw, f"game.goal[{j}]", errors)
        if f is not None:
            goal_facts.append(f)
    try:
        game = GameSpec(
            goal=tuple(goal_facts),
            goal_gain=float(game_doc.get("goal_gain", 100.0)),
            cost_valid=float(game_doc.get("cost_valid", 1.0)),
            cost_invalid=float(game_doc.get("cost_invalid", 8.0)),
            max_steps=int(game_doc.get("max_steps", 80)),
        )
    except (TypeError, ValueError) as exc:
        errors.append(f"game: {exc}")
        game = GameSpec(goal=tuple(goal_facts))

    initial: list[Fact] = []
    for j, raw in enumerate(doc.get("initial_facts", [])):
        f = _fact_from_doc(raw, f"initial_facts[{j}]", errors)
        if f is not None:
            initial.append(f)

    if errors:
        raise ScenarioParseError(errors)

    scenario = Scenario(
        hosts=tuple(sorted(hosts, key=lambda h: h.id)),
        subnets=tuple(sorted(subnets)),
        firewall=tuple(firewall),
        actions=tuple(sorted(actions, key=lambda a: a.id)),
        game=game,
        initial_facts=tuple(sorted(set(initial))),
    )
    report = validate(scenario)
    if report.errors:
        raise ScenarioParseError([f"{i.code}: {i.message}" for i in report.errors])
    return scenario


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document.

    Raises ScenarioParseError with all problems (syntax errors report
    their position).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(
            [f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"]
        ) from None
    return scenario_from_document(doc)


# ---------------------------------------------------------------------------
# validation


def _detail_ok(detail: str) -> bool:
    return FIELD_SEPARATOR not in detail and FACT_SEPARATOR not in detail and "\n" not in detail


def validate(scenario: Scenario) -> ValidationReport:
    """Check every scenario invariant; violations are data, not failures."""
    issues: list[ValidationIssue] = []

    def err(code: str, message: str) -> None:
        issues.append(ValidationIssue("error", code, message))

    def warn(code: str, message: str) -> None:
        issues.append(ValidationIssue("warning", code, message))

    host_ids = [h.id for h in scenario.hosts]
    if len(set(host_ids)) != len(host_ids):
        err("duplicate-host-id", "host ids must be unique")
    if not scenario.hosts:
        err("no-hosts", "scenario declares no hosts")

    subnet_set = set(scenario.subnets)
    if len(scenario.subnets) != len(subnet_set):
        err("duplicate-subnet", "subnet ids must be unique")
    for h in scenario.hosts:
        if h.subnet not in subnet_set:
            err("unknown-subnet", f"host {h.id} references undeclared subnet {h.subnet!r}")
        for svc in h.services:
            if not _detail_ok(svc):
                err("bad-service-name", f"host {h.id} service {svc!r} contains separator characters")

    dcs = scenario.domain_controllers()
    if len(dcs) == 0:
        warn("no-domain-controller", "no host is marked as the domain controller")
    elif len(dcs) > 1:
        warn("multiple-domain-controllers", f"hosts {list(dcs)} are all marked domain controller")
    if not any(h.internet_facing for h in scenario.hosts):
        warn("no-entry-point", "no internet-facing host declared")

    def endpoint_ok(endpoint: int | str) -> bool:
        if isinstance(endpoint, int):
            return scenario.has_host(endpoint)
        return endpoint in subnet_set

    for i, rule in enumerate(scenario.firewall):
        for side, endpoint in (("src", rule.src), ("dst", rule.dst)):
            if not endpoint_ok(endpoint):
                err(
                    "unknown-firewall-endpoint",
                    f"firewall[{i}].{side} references undeclared host/subnet {endpoint!r}",
                )

    action_ids = [a.id for a in scenario.actions]
    if len(set(action_ids)) != len(action_ids):
        err("duplicate-action-id", "action ids must be unique")
    if scenario.actions and sorted(action_ids) != list(range(len(action_ids))):
        err("sparse-action-ids", f"action ids must be dense 0..{len(action_ids) - 1}")

    for a in scenario.actions:
        where = f"action {a.id}"
        if not 0.0 <= a.success_prob <= 1.0:
            err("probability-out-of-range", f"{where}: probability out of range ({a.success_prob})")
        if a.latency_s < 0:
            err("negative-latency", f"{where}: latency_s must be >= 0")
        bound = {SRC_MACRO}
        for p in a.preconditions:
            bound |= p.variables()
            if isinstance(p.host, int) and not scenario.has_host(p.host):
                err("unknown-host", f"{where}: precondition references undeclared host {p.host}")
            if isinstance(p.host, str) and not is_variable(p.host) and p.host != SRC_MACRO:
                err("bad-host-term", f"{where}: precondition host term {p.host!r} not allowed")
            if not is_variable(p.detail) and not _detail_ok(p.detail):
                err("bad-detail", f"{where}: precondition detail {p.detail!r} has separators")
        for p in a.effects:
            if isinstance(p.host, int):
                if not scenario.has_host(p.host):
                    err("unknown-host", f"{where}: effect references undeclared host {p.host}")
            elif p.host not in _HOST_MACROS and p.host not in bound:
                err("unbound-variable", f"{where}: effect host {p.host!r} not bound by preconditions")
            if p.detail == SERVICES_MACRO:
                if p.kind is not FactKind.SERVICE_KNOWN:
                    err("bad-macro", f"{where}: $services only valid on ServiceKnown effects")
            elif is_variable(p.detail):
                if p.detail not in bound:
                    err("unbound-variable", f"{where}: effect detail {p.detail!r} not bound")
            elif not _detail_ok(p.detail):
                err("bad-detail", f"{where}: effect detail {p.detail!r} has separators")
            if p.kind is FactKind.HAND_PRESENT and not is_variable(p.detail):
                if p.detail not in PRIVILEGES and p.detail != SERVICES_MACRO:
                    err("bad-privilege", f"{where}: HandPresent detail must be a privilege level")
        g = a.guard
        if isinstance(g.target, int) and not scenario.has_host(g.target):
            err("unknown-host", f"{where}: guard target references undeclared host {g.target}")
        if isinstance(g.target, str) and g.target != SRC_MACRO and g.target not in bound:
            err("unbound-variable", f"{where}: guard target {g.target!r} not bound")
        if g.credential is not None and is_variable(g.credential) and g.credential not in bound:
            err("unbound-variable", f"{where}: guard credential {g.credential!r} not bound")

    game = scenario.game
    if game.goal_gain <= 0:
        err("bad-goal-gain", "goal_gain must be positive")
    if not game.cost_invalid >= game.cost_valid > 0:
        err("bad-costs", "costs must satisfy cost_invalid >= cost_valid > 0")
    if game.max_steps < 1:
        err("bad-max-steps", "max_steps must be >= 1")
    if not game.goal:
        err("empty-goal", "game goal must list at least one fact")
    for f in game.goal:
        if not scenario.has_host(f.host):
            err("unknown-host", f"game goal references undeclared host {f.host}")

    hand_hosts = set()
    for f in scenario.initial_facts:
        if not scenario.has_host(f.host):
            err("unknown-host", f"initial fact references undeclared host {f.host}")
        if not _detail_ok(f.detail):
            err("bad-detail", f"initial fact detail {f.detail!r} has separators")
        if f.kind is FactKind.HAND_PRESENT:
            if f.detail not in PRIVILEGES:
                err("bad-privilege", f"initial hand privilege {f.detail!r} invalid")
            hand_hosts.add(f.host)
    if not hand_hosts:
        err("no-initial-hand", "initial_facts must place at least one hand")

    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------------------
# reachability


def reachable(scenario: Scenario, src: int, dst: int) -> bool:
    """True iff dst is directly reachable from src.

    Holds when both are in the same subnet, an allow rule covers the
    pair, or dst is the domain controller (every internal host reaches
    it). Reflexive by the same-subnet clause.
    """
    src_host = scenario.host(src)
    dst_host = scenario.host(dst)
    if src_host.subnet == dst_host.subnet:
        return True
    if dst_host.is_domain_controller:
        return True
    for rule in scenario.firewall:
        if not rule.allow:
            continue
        src_match = rule.src == src or rule.src == src_host.subnet
        dst_match = rule.dst == dst or rule.dst == dst_host.subnet
        if src_match and dst_match:
            return True
    return False


def reachable_from(scenario: Scenario, src: int) -> tuple[int, ...]:
    """All hosts reachable from src, ascending (includes src)."""
    return tuple(h.id for h in scenario.hosts if reachable(scenario, src, h.id))


# ---------------------------------------------------------------------------
# shipped default


def builtin_default() -> Scenario:
    """The shipped 9-host, 16-action scenario (parsed from package data)."""
    text = resources.files("redtwin.data").joinpath("default_scenario.json").read_text("utf-8")
    return parse_scenario(text)


def with_game(scenario: Scenario, game: GameSpec) -> Scenario:
    """Same network and actions, different training game."""
    return replace(scenario, game=game)
