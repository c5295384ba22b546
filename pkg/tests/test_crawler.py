import pytest

from chaoslab.crawler.assertions import DefaultClassifier, evaluate_assertion
from chaoslab.crawler.cycles import detect_cycle
from chaoslab.crawler.flows import Assertion, FlowDefinition, StepSpec, load_flow
from chaoslab.crawler.policy import FALLBACK_DECISION, DefaultPolicy, PolicyDecision, select_action
from chaoslab.crawler.runner import run_flow
from chaoslab.crawler.screens import ERROR_TEXT, ElementState, ScreenState, ScreenTransition, render_screen, transitions_chain
from chaoslab.errors import ClassifierUnavailable, ConfigError
from chaoslab.havoc import HavocHeaders, parse_fault
from chaoslab.simmesh import ResponsePayload, VirtualClock

from .conftest import SHOP_FLOW, LoopPolicy


def _test(*clauses: str) -> HavocHeaders:
    return HavocHeaders(tenancy="test", faults=tuple(parse_fault(c) for c in clauses))


def _screen(*elements: tuple[str, str], rendered: int = 0, loaded: int = 0) -> ScreenState:
    return ScreenState(
        screen_id="home",
        elements=tuple(ElementState(element_id=e, state=s) for e, s in elements),
        rendered_at_ms=rendered,
        loaded_at_ms=loaded,
    )


STEP = StepSpec(step_id="s", goal="g", screen="home", primary_action="tap:go", alternate_actions=("tap:detour",))


def _t(screen: str, action: str, step: int = 0) -> ScreenTransition:
    return ScreenTransition(from_screen=screen, action_taken=action, to_screen=screen, at_ms=0, step_index=step)


class BrokenPolicy:
    name = "broken"

    def rank(self, screen, goal, history, *, per_element_wait_ms):
        return PolicyDecision(ranked_actions=("fly",))


class AbstainingClassifier:
    name = "abstain"

    def answer(self, prompt, screens):
        raise ClassifierUnavailable("offline")


# -- flows

def test_shipped_flows(core_trip, eats_order, ride_min):
    assert len(core_trip.steps) == 5
    assert set(core_trip.entry_points()) <= set(ride_min.entry_points)
    assert set(eats_order.entry_points()) <= set(ride_min.entry_points)


def test_flow_validation():
    bad = dict(SHOP_FLOW, steps=[{"step_id": "buy", "goal": "Buy", "screen": "home", "primary_action": "tap:nothing"}])
    with pytest.raises(ValueError, match="nothing"):
        FlowDefinition.model_validate(bad)
    with pytest.raises(ValueError, match="end screen"):
        FlowDefinition.model_validate(dict(SHOP_FLOW, end_screen="elsewhere"))


def test_load_flow_missing(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_flow(tmp_path / "nope.yaml")


# -- screens

def test_render_markers(shop_flow):
    payload = ResponsePayload(status_code=200, degradation_markers=frozenset({"badge:placeholder"}))
    screen = render_screen(shop_flow, "home", payload, VirtualClock(100))
    assert screen.summary() == {"buy_button": "present", "badge": "placeholder"}
    assert screen.rendered_at_ms == 100 and not screen.is_error


def test_render_most_severe_marker_wins(shop_flow):
    markers = frozenset({"badge:delayed(300)", "badge:missing"})
    screen = render_screen(shop_flow, "home", ResponsePayload(status_code=200, degradation_markers=markers), VirtualClock(0))
    assert screen.state_of("badge") == "missing"


def test_delayed_element_appears(shop_flow):
    payload = ResponsePayload(status_code=200, degradation_markers=frozenset({"buy_button:delayed(700)"}))
    screen = render_screen(shop_flow, "home", payload, VirtualClock(100))
    assert screen.state_of("buy_button") == "delayed"
    assert screen.refresh(500).state_of("buy_button") == "delayed"
    assert screen.refresh(800).shows("buy_button")


def test_render_error(shop_flow):
    screen = render_screen(shop_flow, "home", ResponsePayload(status_code=503), VirtualClock(42))
    assert screen.screen_id == "home:error"
    assert screen.base_screen == "home"
    assert screen.error_text == ERROR_TEXT
    assert ERROR_TEXT in screen.text_content()


# -- policy

def test_default_policy_primary_first():
    d = DefaultPolicy().rank(_screen(("go", "present"), ("detour", "present")), STEP, [], per_element_wait_ms=2000)
    assert d.ranked_actions == ("tap:go", "tap:detour", "retry", "back")


def test_default_policy_waits_while_loading():
    d = DefaultPolicy().rank(_screen(("go", "delayed"), ("detour", "present"), rendered=500), STEP, [], per_element_wait_ms=2000)
    assert d.ranked_actions == ("wait", "tap:detour", "tap:go", "retry", "back")
    late = DefaultPolicy().rank(_screen(("go", "placeholder"), rendered=2500), STEP, [], per_element_wait_ms=2000)
    assert late.ranked_actions == ("tap:go", "retry", "back")


def test_default_policy_missing_primary():
    d = DefaultPolicy().rank(_screen(("detour", "missing")), STEP, [], per_element_wait_ms=2000)
    assert d.ranked_actions == ("retry", "back")


def test_select_action_invalid_falls_back():
    assert select_action(BrokenPolicy(), _screen(), STEP, [], per_element_wait_ms=0) == FALLBACK_DECISION


def test_decision_rejects_duplicates():
    with pytest.raises(ValueError):
        PolicyDecision(ranked_actions=("wait", "wait"))


# -- cycles

def test_detect_cycle():
    assert not detect_cycle([_t("home", "wait"), _t("home", "wait")], window=12).cycle
    rep = detect_cycle([_t("home", "wait")] * 3, window=12)
    assert rep.cycle and rep.signature == ("home", "wait") and rep.repeats == 3


def test_progress_resets_cycle_count():
    history = [_t("home", "wait"), _t("home", "wait"), _t("next", "tap:go", step=1), _t("next", "wait", step=1)]
    assert not detect_cycle(history, window=12).cycle


def test_cycle_window_bounds():
    history = [_t("home", "wait"), _t("home", "wait")] + [_t(f"s{i}", "retry") for i in range(3)] + [_t("home", "wait")]
    assert not detect_cycle(history, window=4).cycle
    with pytest.raises(ValueError):
        detect_cycle(history, window=1)


# -- assertions

def test_default_classifier():
    screens = [_screen(("rating_stars", "present"), ("tip_options", "missing"))]
    assert DefaultClassifier().answer("Are the rating stars visible?", screens)
    assert not DefaultClassifier().answer("Are the tip options visible?", screens)
    assert not DefaultClassifier().answer("Is the sky blue?", screens)


def test_evaluate_assertion_abstains():
    a = Assertion(prompt="Is go shown?", predicate={"element": "go"})
    res = evaluate_assertion(AbstainingClassifier(), a, [_screen(("go", "present"))])
    assert res.abstained and res.ground_truth


# -- runner

def test_run_flow_pass(chain, shop_flow):
    result, log = run_flow(shop_flow, chain, HavocHeaders(tenancy="test"), seed=1)
    assert result.label == "pass"
    assert result.action_count == 1
    assert result.duration_ms == 870
    assert [t.to_screen for t in result.transitions] == ["done"]
    assert result.decisions[0].ranked_actions == ("tap:buy_button", "retry", "back")
    assert result.end_assertion.answer is True
    assert [m.answer for m in result.mid_assertions] == [True]
    assert len(log) == 6


def test_run_flow_retry_budget(chain, shop_flow):
    result, log = run_flow(shop_flow, chain, _test("abort(503);svc=b;all"), seed=1)
    assert result.label == "fail(end_state_not_reached)"
    assert result.action_count == 2
    assert result.duration_ms == 1633
    assert [t.action_taken for t in result.transitions] == ["retry", "retry"]
    assert transitions_chain(list(result.transitions))
    assert result.end_assertion is None
    assert len(log) == 6


def test_run_flow_degraded_still_passes(chain, shop_flow):
    result, _ = run_flow(shop_flow, chain, _test("abort(503);tier>=5;all"), seed=1)
    assert result.passed
    mid = result.mid_assertions[0]
    assert (mid.answer, mid.ground_truth) == (False, False)


def test_run_flow_deterministic(ride_min, core_trip):
    h = _test("abort(503);tier>=4;p=0.5")
    assert run_flow(core_trip, ride_min, h, seed=3) == run_flow(core_trip, ride_min, h, seed=3)


def test_core_trip_baseline(ride_min, core_trip):
    result, log = run_flow(core_trip, ride_min, HavocHeaders(tenancy="test"), seed=0)
    assert result.passed
    assert result.action_count == 5
    assert len(result.screens_mosaic) == 6
    assert {r.app_instance for r in log} == {"rider", "driver"}
    assert all(d.chosen == d.optimal for d in result.decisions)


@pytest.mark.parametrize("action", ["wait", "back", "tap:nowhere", "retry"])
def test_loop_policy_aborts(chain, shop_flow, action):
    result, _ = run_flow(shop_flow, chain, HavocHeaders(tenancy="test"), LoopPolicy(action), seed=1)
    assert result.label == "fail(loop_abort)"
    assert result.action_count <= shop_flow.max_actions


def test_wait_refreshes_join_the_mosaic(chain, shop_flow):
    result, _ = run_flow(shop_flow, chain, HavocHeaders(tenancy="test"), LoopPolicy("wait"), seed=1)
    assert "wait" in [t.action_taken for t in result.transitions]
    assert len(result.screens_mosaic) == len(result.transitions) + 1
    assert all(s.screen_id == "home" for s in result.screens_mosaic)
    stamps = [s.rendered_at_ms for s in result.screens_mosaic]
    assert stamps == sorted(stamps)


def test_client_deadline_cancels_load(chain, shop_flow):
    # the tap lands at 835 ms; the next load is cut off at the 850 ms deadline
    flow = shop_flow.model_copy(update={"overall_timeout_ms": 850})
    result, log = run_flow(flow, chain, HavocHeaders(tenancy="test"), seed=1)
    assert result.label == "fail(timeout)"
    assert result.duration_ms == 850
    assert result.action_count == 1
    assert [t.to_screen for t in result.transitions] == ["done:error"]
    assert max(r.end_ms for r in log) == 850
    assert (log[-1].start_ms, log[-1].status_code) == (835, "timed_out")


def test_deadline_during_action(chain, shop_flow):
    flow = shop_flow.model_copy(update={"overall_timeout_ms": 500})
    result, log = run_flow(flow, chain, HavocHeaders(tenancy="test"), seed=1)
    assert result.label == "fail(timeout)"
    assert result.duration_ms == 500
    assert result.action_count == 1
    assert result.transitions == ()
    assert max(r.end_ms for r in log) == 35


def test_abstaining_classifier_uses_ground_truth(chain, shop_flow):
    result, _ = run_flow(shop_flow, chain, HavocHeaders(tenancy="test"), seed=1, classifier=AbstainingClassifier())
    assert result.passed
    assert result.end_assertion.abstained
