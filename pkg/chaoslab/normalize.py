from __future__ import annotations

import re

_ws = re.compile(r"\s+")
_split = re.compile(r"[^a-z0-9]+")


def norm_text(s: str) -> str:
    return _ws.sub(" ", (s or "").strip().lower())


def tokens(s: str) -> list[str]:
    """Lowercase word tokens; `_`, `-`, `/` and `.` all separate words."""
    return [t for t in _split.split(norm_text(s)) if t]


def token_set(s: str) -> set[str]:
    return set(tokens(s))


def dedupe_preserve(items: list[str]) -> list[str]:
    return list(dict.fromkeys(items))
