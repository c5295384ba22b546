import pytest
import requests
from fastapi.testclient import TestClient

from chaoslab import remote
from chaoslab.api import app
from chaoslab.crawler.assertions import RemoteClassifier
from chaoslab.crawler.policy import RemotePolicy
from chaoslab.crawler.runner import run_flow
from chaoslab.crawler.screens import ElementState, ScreenState
from chaoslab.harness.orchestrate import Orchestrator
from chaoslab.harness.scenarios import Scenario
from chaoslab.havoc import HavocHeaders, parse_fault
from chaoslab.rca.categorize import RemoteCategorizer, categorize_endpoint
from chaoslab.rca.detect import RemoteInspector
from chaoslab.settings import settings

PEER = "http://peer.test"


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "archive_root", tmp_path)
    with TestClient(app) as c:
        yield c


@pytest.fixture
def peer(client, monkeypatch):
    """Route remote calls into the in-process app."""

    def post_json(url, payload, *, timeout_s=None):
        r = client.post(url.removeprefix(PEER), json=payload)
        r.raise_for_status()
        return r.json()

    monkeypatch.setattr(remote, "post_json", post_json)
    return client


def test_categorize_route(client):
    r = client.post("/classifier/categorize", json={"callee": "pricing", "path": "/quote", "flow_id": "core-trip", "keywords": ["pricing"]})
    assert r.status_code == 200
    assert r.json() == {"category": "direct"}


def test_detect_route(client):
    broken = ScreenState(screen_id="home:error", error_text="Something went wrong. Please try again.")
    r = client.post("/classifier/detect", json={"screen": broken.model_dump(mode="json")})
    assert r.json()["error"] is True
    fine = ScreenState(screen_id="home", elements=(ElementState(element_id="go"),), required_elements=("go",))
    assert client.post("/classifier/detect", json={"screen": fine.model_dump(mode="json")}).json() == {"error": False, "reason": None}


def test_rank_rejects_bad_body(client):
    assert client.post("/policy/rank", json={"screen": {}}).status_code == 422


def test_runs_catalog(client, tmp_path, chain_files):
    assert client.get("/runs").json() == []
    topo, flow = chain_files
    scenario = Scenario(
        scenario_id="chain.shop.b-abort.default",
        topology="chain",
        topology_path=str(topo),
        flow="shop",
        flow_path=str(flow),
        template="b-abort",
        faults=(parse_fault("abort(503);svc=b;all"),),
        seed=1,
    )
    outcome = Orchestrator(archive_root=tmp_path, workers=1).run_pair(scenario)
    runs = client.get("/runs").json()
    assert [r["role"] for r in runs] == ["baseline", "chaos"]
    assert client.get("/runs", params={"role": "chaos"}).json()[0]["run_id"] == outcome.chaos.run_id

    detail = client.get(f"/runs/{outcome.chaos.run_id}").json()
    assert detail["digest"] == outcome.chaos.digest
    assert detail["ticket"]["top_cause"] == "b/data"
    assert client.get("/runs/nope").status_code == 404


def test_external_peer_matches_local(peer, chain, shop_flow):
    h = HavocHeaders(tenancy="test", faults=(parse_fault("abort(503);tier>=5;all"),))
    local = run_flow(shop_flow, chain, h, seed=2)
    external = run_flow(shop_flow, chain, h, RemotePolicy(PEER), seed=2, classifier=RemoteClassifier(PEER))
    assert external == local


def test_remote_categorizer_and_inspector(peer):
    assert RemoteCategorizer(PEER).categorize("loyalty", "/points", "core-trip") == "unrelated"
    missing = ScreenState(screen_id="home", elements=(ElementState(element_id="go", state="missing"),), required_elements=("go",))
    assert RemoteInspector(PEER).inspect(missing) == "classifier: error screen"


def test_unreachable_peer_falls_back(monkeypatch):
    def down(url, payload, *, timeout_s=None):
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(remote, "post_json", down)
    categorizer = RemoteCategorizer(PEER)
    assert categorize_endpoint(categorizer, ("pricing", "/quote"), "core-trip") == "supporting"
    assert categorizer.endpoint.failures == 1
