from __future__ import annotations

from typing import Protocol

from loguru import logger
from pydantic import BaseModel, ConfigDict

from ..errors import ClassifierUnavailable
from ..normalize import token_set
from ..remote import RemoteEndpoint
from .flows import Assertion
from .screens import ScreenState


class AssertionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    prompt: str
    target: str
    # None when the classifier abstained
    answer: bool | None
    ground_truth: bool

    @property
    def abstained(self) -> bool:
        return self.answer is None


class VisualClassifier(Protocol):
    name: str

    def answer(self, prompt: str, screens: list[ScreenState]) -> bool: ...


class DefaultClassifier:
    """Answers from screen content: elements named by the question must all be visible."""

    name = "default"

    def answer(self, prompt: str, screens: list[ScreenState]) -> bool:
        words = token_set(prompt)
        asked = {
            e.element_id
            for s in screens
            for e in s.elements
            if token_set(e.element_id) and token_set(e.element_id) <= words
        }
        if not asked:
            return False
        return all(any(s.shows(el) for s in screens) for el in asked)


class RemoteClassifier:
    name = "external"

    def __init__(self, base_url: str, *, timeout_s: float | None = None):
        self.endpoint = RemoteEndpoint(base_url, timeout_s=timeout_s)

    def answer(self, prompt: str, screens: list[ScreenState]) -> bool:
        value = self.endpoint.call(
            "/classifier/answer",
            {"prompt": prompt, "screens": [s.model_dump(mode="json") for s in screens]},
            "answer",
        )
        if not isinstance(value, bool):
            raise ClassifierUnavailable(f"non-boolean answer {value!r}")
        return value


def evaluate_assertion(classifier: VisualClassifier, assertion: Assertion, screens: list[ScreenState]) -> AssertionResult:
    view = assertion.view(screens)
    try:
        answer: bool | None = classifier.answer(assertion.prompt, view)
    except ClassifierUnavailable as e:
        logger.warning("Classifier abstained on {!r}: {}", assertion.prompt, e)
        answer = None
    return AssertionResult(
        prompt=assertion.prompt,
        target=assertion.target,
        answer=answer,
        ground_truth=assertion.ground_truth(screens),
    )
