import pytest
from hypothesis import given
from hypothesis import strategies as st

from chaoslab.errors import PlantError, TopologyParseError, TopologyValidationError
from chaoslab.topology import (
    EdgeRef,
    TierPredicate,
    budget_overruns,
    dump_topology,
    exposable_edges,
    load_topology,
    plant_violation,
    tier_services,
    topology_document,
    worst_case_ms,
)

from .conftest import CHAIN_YAML


def test_load_chain(chain):
    assert set(chain.services) == {"a", "b", "c"}
    assert chain.entry_points["shop.home"].service == "a"
    edge = chain.edge(EdgeRef("a", "b", "/data"))
    assert edge.timeout_budget_ms == 80
    assert edge.actual_criticality == "critical"
    assert chain.edge(EdgeRef("b", "c", "/extra")).fallback_payload.element_id == "badge"


def test_missing_service_named():
    doc = CHAIN_YAML.replace("callee: c, endpoint: /extra", "callee: X, endpoint: /extra")
    with pytest.raises(TopologyValidationError, match="X") as e:
        load_topology(doc)
    assert e.value.code == "topology_invalid"


def test_cycle_rejected():
    doc = CHAIN_YAML.replace(
        "entry_points:",
        "  - {caller: b, stage: 1, callee: a, endpoint: /home, declared_criticality: critical}\nentry_points:",
    )
    with pytest.raises(TopologyValidationError, match="cycle: a -> b -> a"):
        load_topology(doc)


def test_malformed_and_missing_sections():
    with pytest.raises(TopologyParseError):
        load_topology("services: [unclosed")
    with pytest.raises(TopologyParseError, match="edges"):
        load_topology("services: []\nentry_points: {}\n")


def test_tier_out_of_range():
    with pytest.raises(TopologyValidationError, match="'c'"):
        load_topology(CHAIN_YAML.replace("tier: 5", "tier: 6"))


def test_non_critical_needs_fallback():
    with pytest.raises(TopologyValidationError, match="fallback_payload"):
        load_topology(CHAIN_YAML.replace(', fallback_payload: "badge:missing"', ""))


def test_plant_violation(chain):
    planted = plant_violation(chain, ("b", "c", "/extra"))
    edge = planted.edge(EdgeRef("b", "c", "/extra"))
    assert (edge.declared_criticality, edge.actual_criticality) == ("non_critical", "critical")
    assert planted.violations() == [EdgeRef("b", "c", "/extra")]
    assert plant_violation(planted, ("b", "c", "/extra")) == planted
    assert chain.violations() == []


def test_plant_changes_one_field(ride_city):
    ref = EdgeRef("pricing", "demand-forecast", "/forecast")
    before = topology_document(ride_city)
    after = topology_document(plant_violation(ride_city, ref))
    changed = [(x, y) for x, y in zip(before["edges"], after["edges"]) if x != y]
    assert len(changed) == 1
    old, new = changed[0]
    assert {k for k in old if old[k] != new[k]} == {"actual_criticality"}
    assert before["services"] == after["services"]


def test_plant_errors(chain):
    with pytest.raises(PlantError, match="declared critical"):
        plant_violation(chain, ("a", "b", "/data"))
    with pytest.raises(PlantError, match="unknown edge"):
        plant_violation(chain, ("a", "c", "/extra"))


def test_tier_services(chain):
    assert tier_services(chain, "tier >= 2") == {"b", "c"}
    assert tier_services(chain, "tier ≥ 6") == set()
    assert tier_services(chain, "tier>=0") == {"a", "b", "c"}
    with pytest.raises(ValueError):
        tier_services(chain, "level >= 2")


@given(op=st.sampled_from([">=", "<=", "==", "!=", ">", "<"]), value=st.integers(min_value=0, max_value=7))
def test_tier_partition(ride_city, op, value):
    p = TierPredicate(op=op, value=value)
    yes = tier_services(ride_city, p)
    no = tier_services(ride_city, p.negate())
    assert yes | no == set(ride_city.services)
    assert not yes & no


@pytest.mark.parametrize("fixture", ["chain", "ride_min", "ride_city"])
def test_round_trip(request, fixture):
    topology = request.getfixturevalue(fixture)
    assert load_topology(dump_topology(topology)) == topology


def test_shipped_topologies(ride_min, ride_city):
    assert len(ride_min.services) == 12
    assert len(ride_city.services) == 40
    assert set(ride_min.entry_points) == set(ride_city.entry_points)
    # no edge of the city mesh into tier >= 3 may be critical
    for _, _, e in ride_city.edges():
        if ride_city.services[e.callee].tier >= 3:
            assert e.declared_criticality == "non_critical"


def test_budgets_must_nest(chain):
    # b waits up to 20 ms on c: 20 + 20 fits the 80 ms a->b budget, and a finishes by 50
    assert worst_case_ms(chain) == {"a": 50, "b": 40, "c": 5}
    assert budget_overruns(chain) == []
    slow_fallback = CHAIN_YAML.replace('fallback_payload: "badge:missing"}', 'fallback_payload: "badge:missing", timeout_budget_ms: 100}')
    with pytest.raises(TopologyValidationError, match="a->b"):
        load_topology(slow_fallback)
    tight_entry = CHAIN_YAML.replace("app_instance: rider}", "app_instance: rider, timeout_budget_ms: 40}")
    with pytest.raises(TopologyValidationError, match="shop.home"):
        load_topology(tight_entry)


def test_city_budgets_nest(ride_city):
    worst = worst_case_ms(ride_city)
    assert worst["pricing"] <= 8000
    assert budget_overruns(ride_city) == []
    for edge in exposable_edges(ride_city):
        planted = worst_case_ms(plant_violation(ride_city, edge))
        assert all(planted[s] <= worst[s] for s in worst)


def test_exposable_edges(ride_min, core_trip):
    assert exposable_edges(ride_min, core_trip.entry_points()) == [
        EdgeRef("matching", "surge", "/multiplier"),
        EdgeRef("pricing", "surge", "/multiplier"),
        EdgeRef("rider-bff", "promotions", "/offers"),
    ]
    planted = plant_violation(ride_min, ("rider-bff", "promotions", "/offers"))
    after = exposable_edges(planted, core_trip.entry_points())
    assert EdgeRef("rider-bff", "promotions", "/offers") not in after
    assert EdgeRef("promotions", "loyalty", "/points") in after


def test_city_tier2_candidates(ride_city, core_trip):
    tier2 = [e for e in exposable_edges(ride_city, core_trip.entry_points()) if ride_city.services[e.callee].tier == 2]
    assert EdgeRef("rider-bff", "eta", "/estimate") in tier2
    assert EdgeRef("pricing", "demand-forecast", "/forecast") in tier2


def test_relevance_lookup(chain):
    assert chain.relevance_lookup().category("b", "/data", "shop") == "indirect"
    assert chain.relevance_lookup(enabled=False).category("b", "/data", "shop") is None
    assert chain.relevance_lookup().category("b", "/nope", "shop") is None
