from __future__ import annotations

import re
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError
from ..havoc import FaultSpec
from ..settings import settings

if TYPE_CHECKING:
    from .screens import ScreenState

ACTION_PATTERN = r"^(tap:[A-Za-z0-9_\-]+|wait|retry|back)$"


def tap_target(action: str) -> str | None:
    return action[4:] if action.startswith("tap:") else None


class ScreenSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    screen_id: str
    # entry point id (topology) whose response backs this screen
    entry: str
    elements: tuple[str, ...] = Field(min_length=1)
    required: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _required_subset(self) -> "ScreenSpec":
        extra = set(self.required) - set(self.elements)
        if extra:
            raise ValueError(f"screen {self.screen_id!r}: required elements not on screen: {sorted(extra)}")
        return self


class StepSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    step_id: str
    goal: str
    screen: str
    # the author's known-correct action; precision@k is scored against it
    primary_action: str = Field(pattern=ACTION_PATTERN)
    alternate_actions: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _actions(self) -> "StepSpec":
        for a in self.alternate_actions:
            if not re.match(ACTION_PATTERN, a):
                raise ValueError(f"step {self.step_id!r}: bad alternate action {a!r}")
        if self.primary_action in self.alternate_actions:
            raise ValueError(f"step {self.step_id!r}: primary action repeated as alternate")
        return self

    @property
    def tap_elements(self) -> set[str]:
        return {t for t in (tap_target(a) for a in (self.primary_action, *self.alternate_actions)) if t}


class ElementPredicate(BaseModel):
    model_config = ConfigDict(frozen=True)

    element: str
    expect: Literal["present", "absent"] = "present"


class Assertion(BaseModel):
    model_config = ConfigDict(frozen=True)

    prompt: str
    target: Literal["end_state", "mosaic"] = "end_state"
    predicate: ElementPredicate

    def view(self, screens: list["ScreenState"]) -> list["ScreenState"]:
        if self.target == "end_state":
            return screens[-1:]
        return list(screens)

    def ground_truth(self, screens: list["ScreenState"]) -> bool:
        shown = any(s.shows(self.predicate.element) for s in self.view(screens))
        return shown if self.predicate.expect == "present" else not shown


class FlowDefinition(BaseModel):
    model_config = ConfigDict(frozen=True)

    flow_id: str
    description: str = ""
    screens: tuple[ScreenSpec, ...] = Field(min_length=1)
    steps: tuple[StepSpec, ...] = Field(min_length=1)
    end_screen: str
    end_state_assertion: Assertion
    mid_state_assertions: tuple[Assertion, ...] = ()
    fault_configuration: tuple[FaultSpec, ...] = ()
    keywords: tuple[str, ...] = ()
    overall_timeout_ms: int = Field(default=120_000, ge=1)
    per_element_wait_ms: int = Field(default=2_000, ge=0)
    max_actions: int = Field(default_factory=lambda: settings.max_actions, ge=1)

    @model_validator(mode="after")
    def _references(self) -> "FlowDefinition":
        ids = [s.screen_id for s in self.screens]
        if len(set(ids)) != len(ids):
            raise ValueError(f"flow {self.flow_id!r}: duplicate screen id")
        for step in self.steps:
            if step.screen not in ids:
                raise ValueError(f"flow {self.flow_id!r}: step {step.step_id!r} uses unknown screen {step.screen!r}")
            spec = self.screen(step.screen)
            missing = step.tap_elements - set(spec.elements)
            if missing:
                raise ValueError(f"flow {self.flow_id!r}: step {step.step_id!r} taps elements not on {step.screen!r}: {sorted(missing)}")
        if self.end_screen not in ids:
            raise ValueError(f"flow {self.flow_id!r}: end screen {self.end_screen!r} is not defined")
        if self.end_state_assertion.target != "end_state":
            raise ValueError(f"flow {self.flow_id!r}: end_state_assertion must target end_state")
        pred = self.end_state_assertion.predicate
        if pred.expect == "present" and pred.element not in self.screen(self.end_screen).elements:
            raise ValueError(f"flow {self.flow_id!r}: end assertion element {pred.element!r} is not on {self.end_screen!r}")
        return self

    def screen(self, screen_id: str) -> ScreenSpec:
        for s in self.screens:
            if s.screen_id == screen_id:
                return s
        raise KeyError(screen_id)

    def next_screen(self, step_index: int) -> str:
        """Screen reached by completing step `step_index`."""
        if step_index + 1 < len(self.steps):
            return self.steps[step_index + 1].screen
        return self.end_screen

    def entry_points(self) -> list[str]:
        return sorted({s.entry for s in self.screens})


def load_flow(path: str | Path) -> FlowDefinition:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"flow file not found: {p}", entity=str(p))
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
        flow = FlowDefinition.model_validate(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed flow file {p}: {e}", entity=str(p)) from e
    except ValidationError as e:
        raise ConfigError(f"invalid flow file {p}: {e.errors()[0].get('msg')}", entity=str(p)) from e
    logger.debug("Loaded flow {} ({} steps)", flow.flow_id, len(flow.steps))
    return flow
