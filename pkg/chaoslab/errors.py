from __future__ import annotations


class ChaosLabError(Exception):
    """Base error; `code` is the machine-readable token printed by the CLI."""

    code = "chaoslab"

    def __init__(self, message: str, *, entity: str | None = None):
        super().__init__(message)
        self.entity = entity


class ConfigError(ChaosLabError):
    code = "config"


class TopologyParseError(ChaosLabError):
    code = "topology_parse"


class TopologyValidationError(ChaosLabError):
    code = "topology_invalid"


class PlantError(ChaosLabError):
    code = "plant"


class HeaderDecodeError(ChaosLabError):
    code = "header_decode"


class UnknownEntryPointError(ChaosLabError):
    code = "unknown_entry"


class DuplicateAppLogError(ChaosLabError):
    code = "duplicate_app_log"


class BaselineMismatchError(ChaosLabError):
    code = "baseline_mismatch"


class MetricError(ChaosLabError):
    code = "metric"


class ScenarioError(ChaosLabError):
    code = "scenario"


class ArchiveError(ChaosLabError):
    code = "archive"


class ClassifierUnavailable(ChaosLabError):
    code = "classifier_unavailable"
