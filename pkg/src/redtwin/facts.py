"""Knowledge atoms of the red agent and canonical observations.

Everything the agent learns about the network is a set of ``Fact``
values; an ``Observation`` is the canonically ordered, immutable
snapshot of that set. The canonical string key of an observation doubles
as its wire encoding: keys are injective and an Observation can always
be reconstructed from its key with :func:`parse_observation_key`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

PRIV_USER = "user"
PRIV_ELEVATED = "elevated"
PRIVILEGES = (PRIV_USER, PRIV_ELEVATED)

#: Key of the empty observation. Real keys always contain ':' so the
#: sentinel cannot collide with a serialized fact set.
EMPTY_OBSERVATION_KEY = "EMPTY"

FACT_SEPARATOR = "|"
FIELD_SEPARATOR = ":"


class FactKind(enum.IntEnum):
    """Fact categories, in canonical (sort) order."""

    HOST_DISCOVERED = 0
    SERVICE_KNOWN = 1
    SHARE_KNOWN = 2
    CREDENTIAL_KNOWN = 3
    HAND_PRESENT = 4
    DOMAIN_ADMIN_REACHED = 5


_KIND_NAMES = {
    FactKind.HOST_DISCOVERED: "HostDiscovered",
    FactKind.SERVICE_KNOWN: "ServiceKnown",
    FactKind.SHARE_KNOWN: "ShareKnown",
    FactKind.CREDENTIAL_KNOWN: "CredentialKnown",
    FactKind.HAND_PRESENT: "HandPresent",
    FactKind.DOMAIN_ADMIN_REACHED: "DomainAdminReached",
}
_NAME_KINDS = {name: kind for kind, name in _KIND_NAMES.items()}


def kind_name(kind: FactKind) -> str:
    return _KIND_NAMES[kind]


def kind_from_name(name: str) -> FactKind:
    try:
        return _NAME_KINDS[name]
    except KeyError:
        raise ValueError(f"unknown fact kind {name!r}") from None


@dataclass(frozen=True, order=True)
class Fact:
    """One atom of agent knowledge.

    Facts are pure values with a total canonical ordering given by
    (kind, host, detail). ``detail`` is kind-dependent: a service name,
    share label, principal name, or privilege level. It must not contain
    the ':' or '|' separator characters (enforced by scenario
    validation).
    """

    kind: FactKind
    host: int
    detail: str = ""

    def encode(self) -> str:
        return f"{_KIND_NAMES[self.kind]}{FIELD_SEPARATOR}{self.host}{FIELD_SEPARATOR}{self.detail}"

    @classmethod
    def decode(cls, text: str) -> Fact:
        parts = text.split(FIELD_SEPARATOR, 2)
        if len(parts) != 3:
            raise ValueError(f"malformed fact encoding {text!r}")
        name, host, detail = parts
        return cls(kind_from_name(name), int(host), detail)


def host_discovered(host: int) -> Fact:
    return Fact(FactKind.HOST_DISCOVERED, host)


def service_known(host: int, service: str) -> Fact:
    return Fact(FactKind.SERVICE_KNOWN, host, service)


def share_known(host: int, share: str) -> Fact:
    return Fact(FactKind.SHARE_KNOWN, host, share)


def credential_known(host: int, principal: str) -> Fact:
    return Fact(FactKind.CREDENTIAL_KNOWN, host, principal)


def hand_present(host: int, privilege: str) -> Fact:
    return Fact(FactKind.HAND_PRESENT, host, privilege)


def domain_admin_reached(host: int) -> Fact:
    return Fact(FactKind.DOMAIN_ADMIN_REACHED, host)


@dataclass(frozen=True)
class Observation:
    """Canonically ordered, immutable set of facts.

    Two observations are equal iff their keys are byte-equal.
    """

    facts: tuple[Fact, ...]
    key: str = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "key", _encode_facts(self.facts))

    @classmethod
    def of(cls, facts: Iterable[Fact]) -> Observation:
        """Build an observation from any iterable, deduplicating and sorting."""
        return cls(tuple(sorted(set(facts))))

    def __contains__(self, fact: Fact) -> bool:
        return fact in self.facts

    def __len__(self) -> int:
        return len(self.facts)

    def fact_set(self) -> frozenset[Fact]:
        return frozenset(self.facts)


def _encode_facts(facts: tuple[Fact, ...]) -> str:
    if not facts:
        return EMPTY_OBSERVATION_KEY
    return FACT_SEPARATOR.join(f.encode() for f in facts)


def observation_key(obs: Observation) -> str:
    """Canonical key of an observation; injective on observations."""
    return obs.key


def parse_observation_key(key: str) -> Observation:
    """Reconstruct the observation a key encodes."""
    if key == EMPTY_OBSERVATION_KEY:
        return Observation(())
    facts = tuple(Fact.decode(part) for part in key.split(FACT_SEPARATOR))
    obs = Observation.of(facts)
    if obs.key != key:
        raise ValueError("key is not in canonical form")
    return obs
