from __future__ import annotations

import re
from typing import Literal, Protocol

from loguru import logger
from pydantic import BaseModel, ConfigDict

from ..crawler.screens import ScreenState
from ..errors import ClassifierUnavailable
from ..remote import RemoteEndpoint

ERROR_PATTERNS = [
    re.compile(p, re.IGNORECASE)
    for p in (r"something went wrong", r"try again", r"unable to", r"\bfailed\b", r"\berror\b")
]


class ErrorFinding(BaseModel):
    model_config = ConfigDict(frozen=True)

    screen_id: str
    at_ms: int
    method: Literal["regex", "classifier"]
    evidence: str


class ErrorDetection(BaseModel):
    model_config = ConfigDict(frozen=True)

    findings: tuple[ErrorFinding, ...] = ()
    # classifier phase was skipped because the classifier was unavailable
    degraded: bool = False

    @property
    def first_at_ms(self) -> int | None:
        return self.findings[0].at_ms if self.findings else None


class ScreenInspector(Protocol):
    name: str

    def inspect(self, screen: ScreenState) -> str | None:
        """Evidence text when the screen looks broken, else None."""


class RequiredElementsInspector:
    """Flags screens whose required elements did not render."""

    name = "required-elements"

    def inspect(self, screen: ScreenState) -> str | None:
        missing = [el for el in screen.required_elements if screen.state_of(el) == "missing"]
        if missing:
            return "missing required: " + ", ".join(missing)
        return None


class RemoteInspector:
    name = "external"

    def __init__(self, base_url: str, *, timeout_s: float | None = None):
        self.endpoint = RemoteEndpoint(base_url, timeout_s=timeout_s)

    def inspect(self, screen: ScreenState) -> str | None:
        verdict = self.endpoint.call("/classifier/detect", {"screen": screen.model_dump(mode="json")}, "error")
        if verdict is True:
            return "classifier: error screen"
        return None


def regex_hit(text: str) -> str | None:
    for pat in ERROR_PATTERNS:
        m = pat.search(text)
        if m:
            return m.group(0)
    return None


def detect_errors(screens: list[ScreenState], inspector: ScreenInspector | None = None) -> ErrorDetection:
    inspector = inspector or RequiredElementsInspector()
    findings: list[ErrorFinding] = []
    degraded = False
    for screen in screens:
        phrase = regex_hit(screen.text_content())
        if phrase:
            findings.append(ErrorFinding(screen_id=screen.screen_id, at_ms=screen.rendered_at_ms, method="regex", evidence=phrase))
            continue
        if degraded:
            continue
        try:
            evidence = inspector.inspect(screen)
        except ClassifierUnavailable as e:
            logger.warning("Screen inspector {} unavailable, regex only from here: {}", inspector.name, e)
            degraded = True
            continue
        if evidence:
            findings.append(ErrorFinding(screen_id=screen.screen_id, at_ms=screen.rendered_at_ms, method="classifier", evidence=evidence))
    findings.sort(key=lambda f: f.at_ms)
    return ErrorDetection(findings=tuple(findings), degraded=degraded)
