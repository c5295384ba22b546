from __future__ import annotations

from typing import Any

import requests

from .settings import settings

USER_AGENT = "chaoslab/0.1"


def post_json(url: str, payload: dict[str, Any], *, timeout_s: float | None = None) -> Any:
    resp = requests.post(
        url,
        json=payload,
        headers={"User-Agent": USER_AGENT},
        timeout=settings.external_timeout_s if timeout_s is None else timeout_s,
    )
    resp.raise_for_status()
    return resp.json()
