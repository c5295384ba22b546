from __future__ import annotations

from typing import Any

import requests
from loguru import logger

from .errors import ClassifierUnavailable
from .http import post_json
from .settings import settings


class RemoteEndpoint:
    """Synchronous JSON peer (policy or classifier) with a hard per-call timeout.

    Transport failures, HTTP errors and malformed bodies all surface as
    ClassifierUnavailable; callers decide how to fall back. `calls` counts
    attempts so a run can report how often the peer was consulted.
    """

    def __init__(self, base_url: str, *, timeout_s: float | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = settings.external_timeout_s if timeout_s is None else timeout_s
        self.calls = 0
        self.failures = 0

    def call(self, route: str, payload: dict[str, Any], expect: str) -> Any:
        url = f"{self.base_url}{route}"
        self.calls += 1
        try:
            data = post_json(url, payload, timeout_s=self.timeout_s)
        except (requests.RequestException, ValueError) as e:
            self.failures += 1
            logger.warning("External call {} failed: {}", url, e)
            raise ClassifierUnavailable(f"{url}: {e}", entity=url) from e
        if not isinstance(data, dict) or expect not in data:
            self.failures += 1
            logger.warning("External call {} returned no {!r}: {}", url, expect, str(data)[:200])
            raise ClassifierUnavailable(f"{url}: response missing {expect!r}", entity=url)
        return data[expect]
