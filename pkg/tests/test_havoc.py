import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaoslab.errors import HeaderDecodeError
from chaoslab.havoc import (
    FAULTS_HEADER,
    Abort,
    FaultOutcome,
    FaultSpec,
    HavocHeaders,
    Latency,
    Scope,
    TargetSelector,
    Timeout,
    apply_fault,
    decode_headers,
    encode_headers,
    parse_fault,
    selector_matches,
)


def _faults(h: HavocHeaders) -> str:
    return dict(encode_headers(h))[FAULTS_HEADER]


def test_encode_examples():
    h = HavocHeaders(tenancy="test", run_id="r1", faults=(FaultSpec(kind=Abort(status_code=503), selector=TargetSelector.by_tier_at_least(2)),))
    assert encode_headers(h) == [("x-havoc-tenancy", "test"), ("x-havoc-run", "r1"), ("x-havoc-faults", "abort(503);tier>=2;all")]
    assert _faults(HavocHeaders(tenancy="production", run_id="r2")) == ""
    h3 = HavocHeaders(
        tenancy="test",
        run_id="r3",
        faults=(FaultSpec(kind=Latency(extra_ms=2000), selector=TargetSelector.by_services("pricing"), scope=Scope(probability=0.5)),),
    )
    assert _faults(h3) == "latency(2000);svc=pricing;p=0.5"


def test_decode_examples():
    h = decode_headers([("X-Havoc-Tenancy", "TEST"), ("x-havoc-faults", "timeout;ep=pricing:/quote|users:/profile;all")])
    assert h.tenancy == "test"
    assert h.faults[0].kind == Timeout()
    assert h.faults[0].selector.endpoints == frozenset({("pricing", "/quote"), ("users", "/profile")})
    assert decode_headers([]).tenancy == "production"
    assert decode_headers([("x-havoc-tenancy", "staging")]).tenancy == "production"


@pytest.mark.parametrize(
    "clause, fragment",
    [
        ("abort(600);tier>=2;all", "400..599"),
        ("explode;tier>=2;all", "unknown fault kind"),
        ("latency(0);tier>=2;all", "at least 1"),
        ("abort(503);tier>=7;all", "out of range"),
        ("abort(503);tier>=2;p=0", "outside"),
        ("abort(503);tier>=2", "kind;target;scope"),
        ("abort(503);ep=pricing;all", "malformed endpoint"),
    ],
)
def test_decode_errors(clause, fragment):
    with pytest.raises(HeaderDecodeError, match=fragment.replace("(", r"\(").replace(".", r"\.")):
        parse_fault(clause)


def test_fault_spec_from_text():
    spec = FaultSpec.model_validate("abort(503);tier>=4;p=0.25")
    assert spec.kind == Abort(status_code=503)
    assert spec.scope.probability == 0.25
    assert str(spec) == "abort(503);tier>=4;p=0.25"


names = st.from_regex(r"[A-Za-z0-9_.\-]{1,12}", fullmatch=True)
paths = st.from_regex(r"/[A-Za-z0-9_./\-]{0,12}", fullmatch=True)
kinds = st.one_of(
    st.builds(Abort, status_code=st.integers(400, 599)),
    st.just(Timeout()),
    st.builds(Latency, extra_ms=st.integers(1, 10**7)),
)
selectors = st.one_of(
    st.builds(TargetSelector.by_tier_at_least, st.integers(0, 5)),
    st.lists(names, min_size=1, max_size=4).map(lambda ns: TargetSelector.by_services(*ns)),
    st.lists(st.tuples(names, paths), min_size=1, max_size=4).map(lambda ps: TargetSelector.by_endpoint(*ps)),
)
scopes = st.one_of(st.just(Scope()), st.builds(Scope, probability=st.floats(min_value=0.0, max_value=1.0, exclude_min=True)))
headers = st.builds(
    HavocHeaders,
    tenancy=st.sampled_from(["production", "test"]),
    faults=st.lists(st.builds(FaultSpec, kind=kinds, selector=selectors, scope=scopes), max_size=5).map(tuple),
    run_id=st.text(max_size=20),
)


@settings(max_examples=1000, deadline=None)
@given(h=headers)
def test_header_round_trip(h):
    assert decode_headers(encode_headers(h)) == h


def test_selector_matches(ride_min):
    pricing = ride_min.services["pricing"]
    assert selector_matches(TargetSelector.by_tier_at_least(1), pricing, "/quote")
    assert not selector_matches(TargetSelector.by_tier_at_least(2), pricing, "/quote")
    assert selector_matches(TargetSelector.by_services("pricing", "users"), pricing, "/quote")
    assert selector_matches(TargetSelector.by_endpoint(("pricing", "/quote")), pricing, "/quote")
    assert not selector_matches(TargetSelector.by_endpoint(("pricing", "/quote")), pricing, "/other")


def test_apply_fault_gating(ride_min):
    loyalty = ride_min.services["loyalty"]
    faults = (FaultSpec.model_validate("abort(503);tier>=5;all"),)
    rng = random.Random(0)
    assert apply_fault(HavocHeaders(tenancy="production", faults=faults), loyalty, "/points", rng) == FaultOutcome()
    hit = apply_fault(HavocHeaders(tenancy="test", faults=faults), loyalty, "/points", rng)
    assert (hit.applied, hit.effect, hit.status_code) == (True, "aborted", 503)
    miss = apply_fault(HavocHeaders(tenancy="test", faults=faults), ride_min.services["users"], "/profile", rng)
    assert not miss.applied


def test_apply_fault_first_match_wins(ride_min):
    loyalty = ride_min.services["loyalty"]
    h = HavocHeaders(
        tenancy="test",
        faults=(FaultSpec.model_validate("latency(50);svc=loyalty;all"), FaultSpec.model_validate("abort(500);tier>=0;all")),
    )
    out = apply_fault(h, loyalty, "/points", random.Random(1))
    assert (out.effect, out.extra_ms) == ("delayed", 50)


def test_probability_scope_rate(ride_min):
    loyalty = ride_min.services["loyalty"]
    h = HavocHeaders(tenancy="test", faults=(FaultSpec.model_validate("timeout;tier>=5;p=0.3"),))
    hits = sum(apply_fault(h, loyalty, "/points", random.Random(f"s{i}")).applied for i in range(4000))
    assert 0.26 < hits / 4000 < 0.34


def test_outcome_invariant():
    with pytest.raises(ValueError):
        FaultOutcome(applied=True)
    with pytest.raises(ValueError):
        FaultOutcome(applied=False, effect="aborted", status_code=503)
