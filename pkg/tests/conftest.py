"""Shared fixtures: small hand-built scenarios with known-by-construction
optima, used as independent references throughout the suite."""

from __future__ import annotations

import json

import pytest

from redtwin.scenario import Scenario, builtin_default, parse_scenario


def scenario_text(doc: dict) -> str:
    return json.dumps(doc)


def one_host_doc(goal_detail: str = "elevated") -> dict:
    """One host, one deterministic elevate action; optimal return is 99."""
    return {
        "version": 1,
        "hosts": [
            {
                "id": 1,
                "os": "ubuntu18",
                "subnet": "lan",
                "services": [],
                "is_domain_controller": False,
                "internet_facing": True,
            }
        ],
        "subnets": ["lan"],
        "firewall": [],
        "actions": [
            {
                "id": 0,
                "tactic": "PrivilegeEscalation",
                "preconditions": [
                    {"kind": "HandPresent", "host": "$src", "detail": "user"}
                ],
                "guard": {"target": "$src", "reachable": True, "service": None, "credential": None},
                "success_prob": 1.0,
                "effects": [{"kind": "HandPresent", "host": "$src", "detail": goal_detail}],
            }
        ],
        "game": {
            "goal": [{"kind": "HandPresent", "host": 1, "detail": goal_detail}],
            "goal_gain": 100.0,
            "cost_valid": 1.0,
            "cost_invalid": 8.0,
            "max_steps": 80,
        },
        "initial_facts": [{"kind": "HandPresent", "host": 1, "detail": "user"}],
    }


def unreachable_goal_doc() -> dict:
    """One action whose preconditions never bind; every step costs 8."""
    doc = one_host_doc()
    doc["actions"][0]["preconditions"] = [
        {"kind": "ShareKnown", "host": 1, "detail": "never"}
    ]
    doc["actions"][0]["effects"] = []
    doc["game"]["goal"] = [{"kind": "ShareKnown", "host": 1, "detail": "never"}]
    return doc


def three_host_doc() -> dict:
    """Three hosts in one subnet: scan, service sweep, then two lateral
    routes; the goal is a foothold on host 3. Small enough for exhaustive
    enumeration."""
    return {
        "version": 1,
        "hosts": [
            {
                "id": 1,
                "os": "ubuntu18",
                "subnet": "lan",
                "services": [],
                "is_domain_controller": False,
                "internet_facing": True,
            },
            {
                "id": 2,
                "os": "win10",
                "subnet": "lan",
                "services": ["winrm"],
                "is_domain_controller": False,
                "internet_facing": False,
            },
            {
                "id": 3,
                "os": "winserver2016",
                "subnet": "lan",
                "services": ["smb"],
                "is_domain_controller": True,
                "internet_facing": False,
            },
        ],
        "subnets": ["lan"],
        "firewall": [],
        "actions": [
            {
                "id": 0,
                "tactic": "Discovery",
                "preconditions": [],
                "guard": {"target": "$src", "reachable": True, "service": None, "credential": None},
                "success_prob": 1.0,
                "effects": [{"kind": "HostDiscovered", "host": "$reachable", "detail": ""}],
            },
            {
                "id": 1,
                "tactic": "Discovery",
                "preconditions": [],
                "guard": {"target": "$src", "reachable": True, "service": None, "credential": None},
                "success_prob": 1.0,
                "effects": [{"kind": "ServiceKnown", "host": "$known", "detail": "$services"}],
            },
            {
                "id": 2,
                "tactic": "LateralMovement",
                "preconditions": [{"kind": "ServiceKnown", "host": "?t", "detail": "winrm"}],
                "guard": {"target": "?t", "reachable": True, "service": "winrm", "credential": None},
                "success_prob": 0.8,
                "effects": [{"kind": "HandPresent", "host": "?t", "detail": "user"}],
            },
            {
                "id": 3,
                "tactic": "LateralMovement",
                "preconditions": [{"kind": "ServiceKnown", "host": "?t", "detail": "smb"}],
                "guard": {"target": "?t", "reachable": True, "service": "smb", "credential": None},
                "success_prob": 0.8,
                "effects": [{"kind": "HandPresent", "host": "?t", "detail": "user"}],
            },
        ],
        "game": {
            "goal": [{"kind": "HandPresent", "host": 3, "detail": "user"}],
            "goal_gain": 100.0,
            "cost_valid": 1.0,
            "cost_invalid": 8.0,
            "max_steps": 20,
        },
        "initial_facts": [
            {"kind": "HandPresent", "host": 1, "detail": "user"},
            {"kind": "HostDiscovered", "host": 1, "detail": ""},
        ],
    }


@pytest.fixture(scope="session")
def default_scenario() -> Scenario:
    return builtin_default()


@pytest.fixture()
def one_host() -> Scenario:
    return parse_scenario(scenario_text(one_host_doc()))


@pytest.fixture()
def goalless() -> Scenario:
    return parse_scenario(scenario_text(unreachable_goal_doc()))


@pytest.fixture()
def three_host() -> Scenario:
    return parse_scenario(scenario_text(three_host_doc()))
