from __future__ import annotations

import re
from typing import Protocol

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ClassifierUnavailable
from ..remote import RemoteEndpoint
from .flows import ACTION_PATTERN, StepSpec, tap_target
from .screens import ScreenState, ScreenTransition


class PolicyDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    ranked_actions: tuple[str, ...] = Field(min_length=1)
    reason: str = ""

    @model_validator(mode="after")
    def _unique(self) -> "PolicyDecision":
        if len(set(self.ranked_actions)) != len(self.ranked_actions):
            raise ValueError("ranked actions must be duplicate-free")
        for a in self.ranked_actions:
            if not re.match(ACTION_PATTERN, a):
                raise ValueError(f"unknown action {a!r}")
        return self

    @property
    def chosen(self) -> str:
        return self.ranked_actions[0]


FALLBACK_DECISION = PolicyDecision(ranked_actions=("retry",), reason="no usable action")


class Policy(Protocol):
    name: str

    def rank(
        self,
        screen: ScreenState,
        goal: StepSpec,
        history: list[ScreenTransition],
        *,
        per_element_wait_ms: int,
    ) -> PolicyDecision: ...


class DefaultPolicy:
    """Primary when visible, wait while it loads, then detour, then recover."""

    name = "default"

    def rank(
        self,
        screen: ScreenState,
        goal: StepSpec,
        history: list[ScreenTransition],
        *,
        per_element_wait_ms: int,
    ) -> PolicyDecision:
        ranked: list[str] = []
        reasons: list[str] = []

        def add(action: str, why: str) -> None:
            if action not in ranked:
                ranked.append(action)
                reasons.append(why)

        primary = goal.primary_action
        target = tap_target(primary)
        state = screen.state_of(target) if target else "present"
        loading = state in ("delayed", "placeholder")

        if state == "present":
            add(primary, f"{target or primary} is visible")
        if loading and screen.rendered_at_ms - screen.loaded_at_ms < per_element_wait_ms:
            add("wait", f"{target} is still loading")
        for alt in goal.alternate_actions:
            alt_target = tap_target(alt)
            if alt_target is None or screen.state_of(alt_target) == "present":
                add(alt, f"alternate route {alt}")
        if loading:
            add(primary, f"{target} shown as {state}")
        add("retry", "reload the screen")
        add("back", "go back a step")
        return PolicyDecision(ranked_actions=tuple(ranked), reason=reasons[0])


class RemotePolicy:
    """Asks an external ranker; any failure falls back to the default policy."""

    name = "external"

    def __init__(self, base_url: str, *, fallback: Policy | None = None, timeout_s: float | None = None):
        self.endpoint = RemoteEndpoint(base_url, timeout_s=timeout_s)
        self.fallback = fallback or DefaultPolicy()
        self.fallbacks = 0

    def rank(
        self,
        screen: ScreenState,
        goal: StepSpec,
        history: list[ScreenTransition],
        *,
        per_element_wait_ms: int,
    ) -> PolicyDecision:
        payload = {
            "screen": screen.model_dump(mode="json"),
            "goal": goal.model_dump(mode="json"),
            "history": [t.model_dump(mode="json") for t in history],
            "per_element_wait_ms": per_element_wait_ms,
        }
        try:
            ranked = self.endpoint.call("/policy/rank", payload, "ranked_actions")
            return PolicyDecision(ranked_actions=tuple(ranked), reason="external policy")
        except (ClassifierUnavailable, ValidationError, TypeError) as e:
            self.fallbacks += 1
            logger.warning("External policy unusable ({}); using {}", e, self.fallback.name)
            return self.fallback.rank(screen, goal, history, per_element_wait_ms=per_element_wait_ms)


def select_action(
    policy: Policy,
    screen: ScreenState,
    goal: StepSpec,
    history: list[ScreenTransition],
    *,
    per_element_wait_ms: int,
) -> PolicyDecision:
    try:
        decision = policy.rank(screen, goal, history, per_element_wait_ms=per_element_wait_ms)
    except ValidationError as e:
        logger.warning("Policy {} produced an invalid decision: {}", getattr(policy, "name", policy), e)
        return FALLBACK_DECISION
    return decision or FALLBACK_DECISION
