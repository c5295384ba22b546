from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="CHAOSLAB_", env_file=".env", extra="ignore")

    # run archives (one directory per run) + the sqlite catalog indexing them
    archive_root: Path = Path("data/archives")
    catalog_name: str = "catalog.db"

    # oracle: topology relevance tags; degraded: keyword rules; external: HTTP peer
    classifier_mode: Literal["oracle", "degraded", "external"] = "oracle"
    # Provide via env: CHAOSLAB_CLASSIFIER_URL / CHAOSLAB_POLICY_URL
    classifier_url: str | None = None
    policy_url: str | None = None
    external_timeout_s: float = 5.0

    # orchestration
    workers: int = 4

    # crawler
    max_actions: int = 40
    action_cost_ms: int = 800
    wait_quantum_ms: int = 500
    max_step_retries: int = 2
    cycle_window: int = 12
    cycle_repeats: int = 3

    # mesh defaults
    timeout_multiplier: int = 4
    entry_timeout_ms: int = 30_000

    # rca
    ticket_top_k: int = 5

    log_level: str = "INFO"


settings = Settings()
