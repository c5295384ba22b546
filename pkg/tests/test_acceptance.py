"""Corpus-level checks: each test runs a seeded sweep and asserts the trend it should show."""

import math
import random
from collections import defaultdict

import pytest

from chaoslab.crawler.runner import run_flow
from chaoslab.harness.config import HarnessConfig, load_harness_config
from chaoslab.harness.metrics import latency_percentiles, percentile, precision_at_k
from chaoslab.harness.orchestrate import Orchestrator
from chaoslab.harness.scenarios import generate_scenarios
from chaoslab.havoc import FaultSpec, HavocHeaders
from chaoslab.simmesh import execute_request

from .conftest import CONFIGS, LoopPolicy

CITY = str(CONFIGS / "topologies" / "ride-city.yaml")
FLOWS = [str(CONFIGS / "flows" / "core-trip.yaml"), str(CONFIGS / "flows" / "eats-order.yaml")]
FAULTS = str(CONFIGS / "faults.yaml")


def _city_config(templates: list[str], variants: int, **kw) -> HarnessConfig:
    return HarnessConfig(
        name="acceptance",
        master_seed=kw.pop("master_seed", 11),
        topologies={"ride-city": CITY},
        flows=kw.pop("flows", FLOWS[:1]),
        fault_templates=FAULTS,
        templates=templates,
        variants=[f"v{i:03d}" for i in range(variants)],
        **kw,
    )


def _random_clause(rng: random.Random) -> str:
    kind = rng.choice([f"abort({rng.randint(400, 599)})", "timeout", f"latency({rng.randint(1, 5000)})"])
    target = rng.choice([f"tier>={rng.randint(0, 5)}", "svc=pricing|users|eta", "ep=payments:/authorize"])
    scope = rng.choice(["all", f"p={rng.choice([0.1, 0.5, 0.9])}"])
    return f"{kind};{target};{scope}"


def test_production_tenancy_never_injected(ride_city):
    rng = random.Random(1)
    entries = sorted(ride_city.entry_points)
    records = 0
    while records < 10_000:
        faults = tuple(FaultSpec.model_validate(_random_clause(rng)) for _ in range(rng.randint(1, 4)))
        h = HavocHeaders(tenancy="production", faults=faults)
        _, _, log = execute_request(ride_city, rng.choice(entries), h, rng.randint(0, 10**6))
        assert not any(r.injected for r in log)
        records += len(log)


def _by_template(pairs):
    out = defaultdict(list)
    for p in pairs:
        out[p.scenario.template].append(p)
    return out


def test_rca_attribution_on_planted_corpus():
    scenarios = generate_scenarios(_city_config(["planted-abort"], 100, master_seed=23, flows=FLOWS))
    assert len(scenarios) == 200
    oracle = Orchestrator(workers=4, classifier_mode="oracle")
    pairs = oracle.sweep(scenarios)

    def attribution(analyzed):
        return [
            ([rc.key for rc in p.report.root_causes], (p.scenario.planted_violations[0].callee, p.scenario.planted_violations[0].endpoint))
            for p in analyzed
            if not p.chaos.passed and p.report is not None
        ]

    decisions = attribution(pairs)
    assert len(decisions) >= 100
    p = precision_at_k(decisions)
    assert p[1] >= 0.90 and p[5] >= 0.95

    degraded = Orchestrator(workers=1, classifier_mode="degraded")
    stats = degraded.corpus_stats(pairs)
    p_deg = precision_at_k(attribution([degraded.analyze(x, stats[x.scenario.topology]) for x in pairs]))
    assert p_deg[5] >= 0.80


ABORTS = ["t5-abort", "t4-abort", "t3-abort", "t2-abort"]


def test_pass_rate_trend_over_tiers():
    cfg = _city_config(ABORTS, 25, repeat_count=4, plant_violation=True, plant_tier=2)
    pairs = Orchestrator(workers=4).sweep(generate_scenarios(cfg))
    groups = _by_template(pairs)
    rates = []
    for name in ABORTS:
        runs = groups[name]
        assert len(runs) == 100
        assert all(p.baseline.passed for p in runs)
        rates.append(sum(p.chaos.passed for p in runs) / len(runs))
    assert rates[:3] == [1.0, 1.0, 1.0]
    assert rates[3] < 1.0
    assert rates == sorted(rates, reverse=True)


LATENCIES = ["none", "t5-latency", "t4-latency", "t3-latency", "t2-latency"]


@pytest.fixture(scope="module")
def latency_pairs():
    return _by_template(Orchestrator(workers=4).sweep(generate_scenarios(_city_config(LATENCIES, 20, flows=FLOWS))))


def _sort_oracle(values, q):
    ordered = sorted(values)
    return ordered[max(math.ceil(q * len(ordered) / 100), 1) - 1]


def test_latency_ordering(latency_pairs):
    baseline = [p.baseline.duration_ms for p in latency_pairs["t5-latency"]]
    p50 = {name: percentile([p.chaos.duration_ms for p in latency_pairs[name]], 50) for name in LATENCIES}
    assert percentile(baseline, 50) <= p50["t5-latency"]
    assert p50["t3-latency"] < p50["t2-latency"]
    for name in LATENCIES:
        durations = [p.chaos.duration_ms for p in latency_pairs[name]]
        assert latency_percentiles(durations) == tuple(_sort_oracle(durations, q) for q in (50, 95, 99))


def test_action_precision_fault_free_vs_latency(latency_pairs):
    def p_at_1(name):
        return precision_at_k([(d.ranked_actions, d.optimal) for p in latency_pairs[name] for d in p.chaos.decisions], ks=(1,))[1]

    fault_free = p_at_1("none")
    assert fault_free == 1.0
    assert p_at_1("t2-latency") <= fault_free


@pytest.mark.parametrize("action", ["wait", "back", "tap:nowhere", "retry"])
def test_loop_policy_terminates_on_shipped_flows(ride_min, ride_city, core_trip, eats_order, action):
    for topology in (ride_min, ride_city):
        for flow in (core_trip, eats_order):
            result, log = run_flow(flow, topology, HavocHeaders(tenancy="test"), LoopPolicy(action), seed=5)
            assert result.label == "fail(loop_abort)"
            assert result.action_count <= flow.max_actions
            assert result.duration_ms <= flow.overall_timeout_ms
            assert max(r.end_ms for r in log) <= result.duration_ms


def test_demo_digests_are_reproducible(tmp_path):
    scenarios = generate_scenarios(load_harness_config(CONFIGS / "demo.yaml"))
    first = Orchestrator(archive_root=tmp_path / "one", workers=2).run(scenarios)
    second = Orchestrator(archive_root=tmp_path / "two", workers=1).run(scenarios)
    digests = [(o.baseline.digest, o.chaos.digest) for o in first]
    assert digests == [(o.baseline.digest, o.chaos.digest) for o in second]
    assert first[0].baseline.run_id != second[0].baseline.run_id
