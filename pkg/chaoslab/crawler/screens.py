from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict

from ..simmesh import ResponsePayload, VirtualClock
from ..topology import DegradationMarker
from .flows import FlowDefinition

ERROR_TEXT = "Something went wrong. Please try again."
PLACEHOLDER_TEXT = "Calculating..."

ElementStatus = Literal["present", "placeholder", "delayed", "missing"]

# higher wins when two markers hit the same element
_SEVERITY = {"delayed": 1, "placeholder": 2, "missing": 3}


class ElementState(BaseModel):
    model_config = ConfigDict(frozen=True)

    element_id: str
    state: ElementStatus = "present"
    until_ms: int | None = None
    text: str = ""


class ScreenState(BaseModel):
    model_config = ConfigDict(frozen=True)

    screen_id: str
    elements: tuple[ElementState, ...] = ()
    rendered_at_ms: int = 0
    # completion time of the backing request; waiting is measured from here
    loaded_at_ms: int = 0
    required_elements: tuple[str, ...] = ()
    error_text: str | None = None

    def element(self, element_id: str) -> ElementState | None:
        for e in self.elements:
            if e.element_id == element_id:
                return e
        return None

    def state_of(self, element_id: str) -> ElementStatus:
        e = self.element(element_id)
        return e.state if e else "missing"

    def shows(self, element_id: str) -> bool:
        return self.state_of(element_id) == "present"

    @property
    def is_error(self) -> bool:
        return self.error_text is not None

    @property
    def base_screen(self) -> str:
        return self.screen_id.split(":", 1)[0]

    def text_content(self) -> str:
        parts = [self.error_text or ""]
        parts.extend(e.text for e in self.elements if e.text)
        return " ".join(p for p in parts if p)

    def refresh(self, now_ms: int) -> "ScreenState":
        """Delayed elements whose time has come turn present."""
        elements = tuple(
            e.model_copy(update={"state": "present", "until_ms": None, "text": ""})
            if e.state == "delayed" and e.until_ms is not None and now_ms >= e.until_ms
            else e
            for e in self.elements
        )
        return self.model_copy(update={"elements": elements, "rendered_at_ms": now_ms})

    def summary(self) -> dict[str, str]:
        return {e.element_id: e.state for e in self.elements}


def error_screen(screen_id: str, required: tuple[str, ...], now_ms: int) -> ScreenState:
    return ScreenState(
        screen_id=f"{screen_id}:error",
        elements=(
            ElementState(element_id="error_text", text=ERROR_TEXT),
            ElementState(element_id="retry_button"),
        ),
        rendered_at_ms=now_ms,
        loaded_at_ms=now_ms,
        required_elements=required,
        error_text=ERROR_TEXT,
    )


def _marker_index(markers: frozenset[DegradationMarker]) -> dict[str, DegradationMarker]:
    out: dict[str, DegradationMarker] = {}
    for m in sorted(markers, key=lambda x: (x.element_id, x.effect, x.delay_ms)):
        cur = out.get(m.element_id)
        if cur is None or (_SEVERITY[m.effect], m.delay_ms) > (_SEVERITY[cur.effect], cur.delay_ms):
            out[m.element_id] = m
    return out


def render_screen(
    flow: FlowDefinition,
    screen_id: str,
    payload: ResponsePayload,
    clock: VirtualClock,
    *,
    loaded_at_ms: int | None = None,
) -> ScreenState:
    spec = flow.screen(screen_id)
    now = clock.now_ms
    loaded = now if loaded_at_ms is None else loaded_at_ms
    if not payload.ok:
        return error_screen(screen_id, spec.required, now)

    markers = _marker_index(payload.degradation_markers)
    elements = []
    for el in spec.elements:
        m = markers.get(el)
        if m is None:
            elements.append(ElementState(element_id=el))
        elif m.effect == "missing":
            elements.append(ElementState(element_id=el, state="missing"))
        elif m.effect == "placeholder":
            elements.append(ElementState(element_id=el, state="placeholder", text=PLACEHOLDER_TEXT))
        else:
            elements.append(ElementState(element_id=el, state="delayed", until_ms=loaded + m.delay_ms, text=PLACEHOLDER_TEXT))
    screen = ScreenState(
        screen_id=screen_id,
        elements=tuple(elements),
        rendered_at_ms=now,
        loaded_at_ms=loaded,
        required_elements=spec.required,
    )
    return screen.refresh(now)


class ScreenTransition(BaseModel):
    model_config = ConfigDict(frozen=True)

    from_screen: str
    action_taken: str
    to_screen: str
    at_ms: int
    policy_reason: str = ""
    # goal step the run is on after this transition
    step_index: int = 0


def transitions_chain(transitions: list[ScreenTransition]) -> bool:
    return all(a.to_screen == b.from_screen for a, b in zip(transitions, transitions[1:]))
