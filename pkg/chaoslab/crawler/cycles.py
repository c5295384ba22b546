from __future__ import annotations

from collections import Counter

from pydantic import BaseModel, ConfigDict

from ..settings import settings
from .screens import ScreenTransition


class CycleReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    cycle: bool = False
    signature: tuple[str, str] | None = None
    repeats: int = 0


NO_CYCLE = CycleReport()


def detect_cycle(
    history: list[ScreenTransition],
    window: int | None = None,
    *,
    repeats: int | None = None,
    since: int = 0,
) -> CycleReport:
    """A (screen, action) pair seen `repeats` times in the last `window` transitions with no progress.

    Progress is a transition that moves the run to a step further than any
    reached before; counting restarts at the latest one. Transitions before
    index `since` are ignored for counting but still establish progress.
    """
    window = settings.cycle_window if window is None else window
    repeats = settings.cycle_repeats if repeats is None else repeats
    if window < 2:
        raise ValueError("cycle window must be at least 2")

    best = -1
    last_progress = 0
    for i, t in enumerate(history):
        if t.step_index > best:
            best = t.step_index
            last_progress = i

    start = max(len(history) - window, last_progress, since)
    counts = Counter((t.from_screen, t.action_taken) for t in history[start:])
    if not counts:
        return NO_CYCLE
    # most repeated pair; the latest one wins ties
    order = {pair: i for i, pair in enumerate((t.from_screen, t.action_taken) for t in history[start:])}
    pair, n = max(counts.items(), key=lambda kv: (kv[1], order[kv[0]]))
    if n >= repeats:
        return CycleReport(cycle=True, signature=pair, repeats=n)
    return NO_CYCLE
