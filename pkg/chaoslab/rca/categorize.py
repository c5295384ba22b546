from __future__ import annotations

from typing import Protocol

from loguru import logger
from rapidfuzz import fuzz

from ..errors import ClassifierUnavailable, ConfigError
from ..normalize import dedupe_preserve, tokens
from ..remote import RemoteEndpoint
from ..topology import Relevance, RelevanceLookup, Topology

CATEGORIES: tuple[Relevance, ...] = ("direct", "indirect", "supporting", "unrelated")

# vocabulary for the keyword rules
UNRELATED_WORDS = {
    "ads", "advert", "banner", "promo", "promotions", "loyalty", "badge", "rewards",
    "marketing", "survey", "recommendations", "news", "social", "referral",
}
SUPPORTING_WORDS = {
    "auth", "session", "users", "user", "profile", "config", "flags", "experiments",
    "locale", "settings", "identity", "token", "geo", "maps",
}
FUZZY_THRESHOLD = 85


class Categorizer(Protocol):
    name: str

    def categorize(self, callee: str, path: str, flow_id: str) -> Relevance: ...


class OracleCategorizer:
    """Ground-truth relevance tags from the topology."""

    name = "oracle"

    def __init__(self, lookup: RelevanceLookup):
        self.lookup = lookup

    def categorize(self, callee: str, path: str, flow_id: str) -> Relevance:
        return self.lookup.category(callee, path, flow_id) or "unrelated"


class KeywordCategorizer:
    """Path-token rules: a token resembling a flow keyword means direct."""

    name = "degraded"

    def __init__(self, keywords: dict[str, list[str]] | None = None):
        self.keywords = {k: dedupe_preserve([w.lower() for w in v]) for k, v in (keywords or {}).items()}

    def flow_words(self, flow_id: str) -> list[str]:
        return dedupe_preserve(self.keywords.get(flow_id, []) + tokens(flow_id))

    def categorize(self, callee: str, path: str, flow_id: str) -> Relevance:
        words = tokens(f"{callee} {path}")
        vocab = self.flow_words(flow_id)
        for w in words:
            if any(fuzz.ratio(w, k) >= FUZZY_THRESHOLD for k in vocab):
                return "direct"
        if any(w in UNRELATED_WORDS for w in words):
            return "unrelated"
        if any(w in SUPPORTING_WORDS for w in words):
            return "supporting"
        return "indirect"


class RemoteCategorizer:
    name = "external"

    def __init__(self, base_url: str, *, timeout_s: float | None = None):
        self.endpoint = RemoteEndpoint(base_url, timeout_s=timeout_s)

    def categorize(self, callee: str, path: str, flow_id: str) -> Relevance:
        return self.endpoint.call("/classifier/categorize", {"callee": callee, "path": path, "flow_id": flow_id}, "category")


def categorize_endpoint(classifier: Categorizer, endpoint: tuple[str, str], flow_id: str) -> Relevance:
    callee, path = endpoint
    try:
        category = classifier.categorize(callee, path, flow_id)
    except ClassifierUnavailable as e:
        logger.warning("Categorizer {} failed for {}{}; using supporting: {}", classifier.name, callee, path, e)
        return "supporting"
    if category not in CATEGORIES:
        logger.warning("Categorizer {} returned {!r} for {}{}; using supporting", classifier.name, category, callee, path)
        return "supporting"
    return category


def build_categorizer(
    mode: str,
    topology: Topology,
    *,
    keywords: dict[str, list[str]] | None = None,
    url: str | None = None,
) -> Categorizer:
    if mode == "oracle":
        return OracleCategorizer(topology.relevance_lookup())
    if mode == "degraded":
        return KeywordCategorizer(keywords)
    if mode == "external":
        if not url:
            raise ConfigError("external classifier mode needs a classifier URL (CHAOSLAB_CLASSIFIER_URL)")
        return RemoteCategorizer(url)
    raise ConfigError(f"unknown classifier mode {mode!r}", entity=mode)
