import json

import pytest

from redtwin.facts import Fact, FactKind
from redtwin.scenario import (
    ScenarioParseError,
    builtin_default,
    parse_scenario,
    reachable,
    scenario_digest,
    serialize_scenario,
    validate,
)

from .conftest import one_host_doc, scenario_text, three_host_doc


def test_minimal_document_parses(one_host):
    assert len(one_host.actions) == 1
    assert one_host.game.goal_gain == 100.0


def test_default_shape(default_scenario):
    assert len(default_scenario.hosts) == 9
    assert len(default_scenario.actions) == 16
    assert default_scenario.domain_controllers() == (6,)
    assert [a.id for a in default_scenario.actions] == list(range(16))


def test_default_game_constants(default_scenario):
    game = default_scenario.game
    assert game.goal_gain == 100.0
    assert game.cost_valid == 1.0
    assert game.cost_invalid == 8.0
    assert game.max_steps == 80


def test_default_initial_hand(default_scenario):
    assert Fact(FactKind.HAND_PRESENT, 2, "user") in default_scenario.initial_facts


def test_probability_out_of_range_rejected():
    doc = one_host_doc()
    doc["actions"][0]["success_prob"] = 1.3
    with pytest.raises(ScenarioParseError, match="probability out of range"):
        parse_scenario(scenario_text(doc))


def test_syntax_error_reports_position():
    with pytest.raises(ScenarioParseError, match="syntax error at line"):
        parse_scenario("{\n  broken")


def test_unknown_host_reference_rejected():
    doc = one_host_doc()
    doc["game"]["goal"] = [{"kind": "HandPresent", "host": 42, "detail": "elevated"}]
    with pytest.raises(ScenarioParseError, match="undeclared host"):
        parse_scenario(scenario_text(doc))


def test_duplicate_action_id_rejected():
    doc = three_host_doc()
    doc["actions"][1]["id"] = 0
    with pytest.raises(ScenarioParseError, match="unique|dense"):
        parse_scenario(scenario_text(doc))


def test_validate_default_is_clean(default_scenario):
    assert validate(default_scenario).ok


def test_two_domain_controllers_warn():
    doc = three_host_doc()
    doc["hosts"][0]["is_domain_controller"] = True
    s = parse_scenario(scenario_text(doc))
    report = validate(s)
    assert any(i.code == "multiple-domain-controllers" for i in report.warnings)
    assert not report.errors


def test_unbound_effect_variable_rejected():
    doc = one_host_doc()
    doc["actions"][0]["effects"] = [{"kind": "HostDiscovered", "host": "?t", "detail": ""}]
    with pytest.raises(ScenarioParseError, match="not bound"):
        parse_scenario(scenario_text(doc))


def test_round_trip_identity(default_scenario, one_host, three_host):
    for s in (default_scenario, one_host, three_host):
        assert parse_scenario(serialize_scenario(s)) == s


def test_digest_stable_under_formatting(default_scenario):
    doc = json.loads(serialize_scenario(default_scenario))
    pretty = json.dumps(doc, indent=4, sort_keys=False)
    assert scenario_digest(parse_scenario(pretty)) == default_scenario.digest
    assert len(default_scenario.digest) == 16
    int(default_scenario.digest, 16)  # hex


def test_reachable_same_subnet(three_host):
    assert reachable(three_host, 1, 2)
    assert reachable(three_host, 2, 1)


def test_reachable_reflexive(default_scenario):
    for h in default_scenario.hosts:
        assert reachable(default_scenario, h.id, h.id)


def test_reachable_firewall_pair(default_scenario):
    # explicit allow rules open 5 <-> 2 across subnets
    assert reachable(default_scenario, 5, 2)
    assert reachable(default_scenario, 2, 5)


def test_dc_reachable_from_everywhere(default_scenario):
    dc = default_scenario.domain_controllers()[0]
    for h in default_scenario.hosts:
        assert reachable(default_scenario, h.id, dc)


def test_cross_subnet_without_rule_unreachable(default_scenario):
    # dmz host 3 cannot reach core host 9 (not the DC, no allow rule)
    assert not reachable(default_scenario, 3, 9)
    assert not reachable(default_scenario, 2, 4)


def test_reachable_unknown_host_raises(default_scenario):
    with pytest.raises(KeyError):
        reachable(default_scenario, 1, 99)


def test_builtin_default_matches_packaged_file(default_scenario):
    assert builtin_default() == default_scenario
