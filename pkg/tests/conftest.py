from __future__ import annotations

from pathlib import Path

import pytest

from chaoslab.crawler.flows import FlowDefinition, load_flow
from chaoslab.crawler.policy import PolicyDecision
from chaoslab.topology import Topology, load_topology, load_topology_file

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

# a(0) -> b(2) critical, b -> c(5) non_critical; default budgets a->b 80 ms, b->c 20 ms
CHAIN_YAML = """
name: chain
services:
  - name: a
    tier: 0
    base_latency_ms: 10
    endpoints:
      - {path: /home, relevance_tags: {shop: direct}}
  - name: b
    tier: 2
    base_latency_ms: 20
    endpoints:
      - {path: /data, relevance_tags: {shop: indirect}}
  - name: c
    tier: 5
    base_latency_ms: 5
    endpoints:
      - {path: /extra, relevance_tags: {shop: unrelated}}
edges:
  - {caller: a, callee: b, endpoint: /data, declared_criticality: critical}
  - {caller: b, callee: c, endpoint: /extra, declared_criticality: non_critical, fallback_payload: "badge:missing"}
entry_points:
  shop.home: {service: a, endpoint: /home, app_instance: rider}
"""

SHOP_FLOW = {
    "flow_id": "shop",
    "screens": [
        {"screen_id": "home", "entry": "shop.home", "elements": ["buy_button", "badge"], "required": ["buy_button"]},
        {"screen_id": "done", "entry": "shop.home", "elements": ["receipt"]},
    ],
    "steps": [{"step_id": "buy", "goal": "Buy", "screen": "home", "primary_action": "tap:buy_button"}],
    "end_screen": "done",
    "end_state_assertion": {"prompt": "Is the receipt shown?", "predicate": {"element": "receipt"}},
    "mid_state_assertions": [
        {"prompt": "Was the badge shown?", "target": "mosaic", "predicate": {"element": "badge"}},
    ],
    "keywords": ["shop", "buy"],
}


@pytest.fixture
def chain() -> Topology:
    return load_topology(CHAIN_YAML)


@pytest.fixture
def shop_flow() -> FlowDefinition:
    return FlowDefinition.model_validate(SHOP_FLOW)


@pytest.fixture
def chain_files(tmp_path) -> tuple[Path, Path]:
    """Chain topology and shop flow written to disk, for harness code that loads by path."""
    import yaml

    topo = tmp_path / "chain.yaml"
    topo.write_text(CHAIN_YAML, encoding="utf-8")
    flow = tmp_path / "shop.yaml"
    flow.write_text(yaml.safe_dump(SHOP_FLOW), encoding="utf-8")
    return topo, flow


@pytest.fixture(scope="session")
def ride_min() -> Topology:
    return load_topology_file(CONFIGS / "topologies" / "ride-min.yaml")


@pytest.fixture(scope="session")
def ride_city() -> Topology:
    return load_topology_file(CONFIGS / "topologies" / "ride-city.yaml")


@pytest.fixture(scope="session")
def core_trip() -> FlowDefinition:
    return load_flow(CONFIGS / "flows" / "core-trip.yaml")


@pytest.fixture(scope="session")
def eats_order() -> FlowDefinition:
    return load_flow(CONFIGS / "flows" / "eats-order.yaml")


class LoopPolicy:
    """Always proposes the same action, whatever the screen."""

    def __init__(self, action: str):
        self.name = f"loop-{action}"
        self.action = action

    def rank(self, screen, goal, history, *, per_element_wait_ms):
        return PolicyDecision(ranked_actions=(self.action,))
