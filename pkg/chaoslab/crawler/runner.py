from __future__ import annotations

from typing import Literal

from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator

from ..havoc import HavocHeaders
from ..settings import settings
from ..simmesh import RpcRecord, VirtualClock, execute_request, merge_app_logs
from ..topology import Topology
from .assertions import AssertionResult, DefaultClassifier, VisualClassifier, evaluate_assertion
from .cycles import detect_cycle
from .flows import FlowDefinition, tap_target
from .policy import DefaultPolicy, Policy, PolicyDecision, select_action
from .screens import ScreenState, ScreenTransition, render_screen

FailReason = Literal["end_state_not_reached", "assertion_failed", "timeout", "loop_abort"]


class DecisionRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    screen_id: str
    step_id: str
    ranked_actions: tuple[str, ...]
    chosen: str
    optimal: str


class RunResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    flow_id: str
    seed: str
    verdict: Literal["pass", "fail"]
    fail_reason: FailReason | None = None
    transitions: tuple[ScreenTransition, ...] = ()
    screens_mosaic: tuple[ScreenState, ...] = ()
    action_count: int = 0
    duration_ms: int = 0
    end_reached: bool = False
    end_assertion: AssertionResult | None = None
    mid_assertions: tuple[AssertionResult, ...] = ()
    decisions: tuple[DecisionRecord, ...] = ()

    @model_validator(mode="after")
    def _verdict_shape(self) -> "RunResult":
        if (self.verdict == "pass") != (self.fail_reason is None):
            raise ValueError("a passing run has no fail reason and a failing run needs one")
        return self

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def label(self) -> str:
        return "pass" if self.passed else f"fail({self.fail_reason})"


class _FlowRun:
    """Mutable state of one flow execution."""

    def __init__(self, flow: FlowDefinition, topology: Topology, headers: HavocHeaders, seed: int | str):
        self.flow = flow
        self.topology = topology
        self.headers = headers
        self.seed = seed
        self.clock = VirtualClock(0)
        self.deadline = flow.overall_timeout_ms
        self.step = 0
        self.best_step = 0
        self.history: list[ScreenTransition] = []
        self.screens: list[ScreenState] = []
        self.decisions: list[DecisionRecord] = []
        self.logs: dict[str, list[RpcRecord]] = {}
        self.loads: dict[str, int] = {}
        self.retries = 0

    def load(self, screen_id: str) -> ScreenState:
        spec = self.flow.screen(screen_id)
        attempt = self.loads.get(screen_id, 0)
        self.loads[screen_id] = attempt + 1
        trace, payload, log = execute_request(
            self.topology,
            spec.entry,
            self.headers,
            f"{self.seed}:{screen_id}:{attempt}",
            start_ms=self.clock.now_ms,
            deadline_ms=self.deadline,
        )
        self.clock.advance_to(trace.root.end_ms)
        app = self.topology.entry_points[spec.entry].app_instance
        self.logs.setdefault(app, []).extend(log)
        screen = render_screen(self.flow, screen_id, payload, self.clock)
        self.screens.append(screen)
        return screen

    def refresh(self, screen: ScreenState) -> ScreenState:
        new = screen.refresh(self.clock.now_ms)
        self.screens.append(new)
        return new

    def spend(self, ms: int) -> bool:
        """Advance the clock, never past the deadline; False once it is reached."""
        self.clock.advance_to(min(self.clock.now_ms + ms, self.deadline))
        return self.clock.now_ms < self.deadline

    def move(self, current: ScreenState, action: str, to: ScreenState, at_ms: int, reason: str) -> None:
        self.history.append(
            ScreenTransition(
                from_screen=current.screen_id,
                action_taken=action,
                to_screen=to.screen_id,
                at_ms=at_ms,
                policy_reason=reason,
                step_index=self.step,
            )
        )

    def merged_log(self) -> list[RpcRecord]:
        return merge_app_logs(sorted(self.logs.items()))


def _forced(decision: PolicyDecision, cycling: str) -> str:
    for a in decision.ranked_actions:
        if a != cycling:
            return a
    return "retry" if cycling != "retry" else "back"


def run_flow(
    flow: FlowDefinition,
    topology: Topology,
    headers: HavocHeaders,
    policy: Policy | None = None,
    seed: int | str = 0,
    *,
    classifier: VisualClassifier | None = None,
) -> tuple[RunResult, list[RpcRecord]]:
    policy = policy or DefaultPolicy()
    classifier = classifier or DefaultClassifier()
    run = _FlowRun(flow, topology, headers, seed)
    cost = settings.action_cost_ms

    current = run.load(flow.steps[0].screen)
    reason: FailReason | None = None
    actions = 0
    recovered = False
    force_from: str | None = None
    since = 0

    while current.screen_id != flow.end_screen:
        if run.clock.now_ms >= run.deadline:
            reason = "timeout"
            break
        if actions >= flow.max_actions:
            reason = "end_state_not_reached"
            break

        goal = flow.steps[run.step]
        decision = select_action(policy, current, goal, run.history, per_element_wait_ms=flow.per_element_wait_ms)
        action = decision.chosen
        why = decision.reason
        if force_from is not None:
            action = _forced(decision, force_from)
            why = f"cycle on {force_from}; trying {action}"
            force_from = None
        run.decisions.append(
            DecisionRecord(
                screen_id=current.screen_id,
                step_id=goal.step_id,
                ranked_actions=decision.ranked_actions,
                chosen=action,
                optimal=goal.primary_action,
            )
        )

        if action == "retry" and run.retries >= settings.max_step_retries:
            # a policy offering nothing but another retry is looping
            reason = "end_state_not_reached" if any(a != "retry" for a in decision.ranked_actions) else "loop_abort"
            break

        actions += 1
        at = run.clock.now_ms
        target = tap_target(action)
        if not run.spend(settings.wait_quantum_ms if action == "wait" else cost):
            reason = "timeout"
            break
        if target is not None:
            if target in goal.tap_elements and current.state_of(target) in ("present", "placeholder"):
                nxt = flow.next_screen(run.step)
                if run.step + 1 < len(flow.steps):
                    run.step += 1
                new = run.load(nxt)
            else:
                new = run.refresh(current)
        elif action == "wait":
            new = run.refresh(current)
        elif action == "retry":
            run.retries += 1
            new = run.load(current.base_screen)
        else:
            if run.step > 0:
                run.step -= 1
            new = run.load(flow.steps[run.step].screen)

        if run.step > run.best_step:
            run.best_step = run.step
            run.retries = 0
        run.move(current, action, new, at, why)
        current = new

        cyc = detect_cycle(run.history, since=since)
        if cyc.cycle:
            if recovered:
                logger.info("Flow {} loops on {}; aborting", flow.flow_id, cyc.signature)
                reason = "loop_abort"
                break
            recovered = True
            force_from = cyc.signature[1]
            since = len(run.history)

    end_reached = current.screen_id == flow.end_screen

    end_result = None
    if end_reached:
        end_result = evaluate_assertion(classifier, flow.end_state_assertion, run.screens)
        if reason is None:
            answer = end_result.answer
            if answer is None:
                answer = DefaultClassifier().answer(flow.end_state_assertion.prompt, flow.end_state_assertion.view(run.screens))
            if not answer:
                reason = "assertion_failed"

    mid = tuple(evaluate_assertion(classifier, a, run.screens) for a in flow.mid_state_assertions)
    result = RunResult(
        flow_id=flow.flow_id,
        seed=str(seed),
        verdict="pass" if reason is None else "fail",
        fail_reason=reason,
        transitions=tuple(run.history),
        screens_mosaic=tuple(run.screens),
        action_count=actions,
        duration_ms=run.clock.now_ms,
        end_reached=end_reached,
        end_assertion=end_result,
        mid_assertions=mid,
        decisions=tuple(run.decisions),
    )
    logger.debug("Flow {} seed={} -> {} in {} actions", flow.flow_id, seed, result.label, actions)
    return result, run.merged_log()
