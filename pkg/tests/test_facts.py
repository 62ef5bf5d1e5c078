from hypothesis import given, strategies as st

from redtwin.facts import (
    EMPTY_OBSERVATION_KEY,
    Fact,
    FactKind,
    Observation,
    hand_present,
    host_discovered,
    observation_key,
    parse_observation_key,
    service_known,
)

details = st.text(
    alphabet=st.sampled_from("abcdefghijklmnopqrstuvwxyz0123456789_."), max_size=12
)
facts = st.builds(
    Fact,
    kind=st.sampled_from(list(FactKind)),
    host=st.integers(min_value=0, max_value=99),
    detail=details,
)


def test_canonical_ordering_is_kind_host_detail():
    a = Fact(FactKind.HOST_DISCOVERED, 9, "z")
    b = Fact(FactKind.SERVICE_KNOWN, 1, "a")
    c = Fact(FactKind.SERVICE_KNOWN, 1, "b")
    assert a < b < c


def test_observation_deduplicates_and_sorts():
    obs = Observation.of([hand_present(2, "user"), host_discovered(2), hand_present(2, "user")])
    assert len(obs) == 2
    assert obs.facts == tuple(sorted(obs.facts))


def test_permutations_share_one_key():
    fs = [host_discovered(3), service_known(3, "smb"), hand_present(2, "user")]
    assert Observation.of(fs).key == Observation.of(reversed(fs)).key


def test_empty_observation_uses_sentinel():
    assert Observation.of([]).key == EMPTY_OBSERVATION_KEY
    assert parse_observation_key(EMPTY_OBSERVATION_KEY) == Observation.of([])


def test_initial_default_key_is_stable(default_scenario):
    # golden value: canonical encoding must never drift
    obs = Observation.of(default_scenario.initial_facts)
    assert obs.key == "HostDiscovered:2:|HandPresent:2:user"


@given(st.lists(facts, max_size=12))
def test_key_round_trip(fact_list):
    obs = Observation.of(fact_list)
    assert parse_observation_key(obs.key) == obs


@given(st.lists(facts, max_size=12), st.lists(facts, max_size=12))
def test_keys_injective(fs1, fs2):
    o1, o2 = Observation.of(fs1), Observation.of(fs2)
    assert (o1.key == o2.key) == (o1 == o2)


def test_observation_key_function_matches_attribute():
    obs = Observation.of([host_discovered(1)])
    assert observation_key(obs) == obs.key
