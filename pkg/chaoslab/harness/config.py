from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, Field, ValidationError

from ..errors import ConfigError
from ..havoc import FaultSpec
from ..topology import EdgeRef


class FaultTemplate(BaseModel):
    name: str
    faults: list[FaultSpec] = Field(default_factory=list)
    # replace the target with the scenario's planted edge: abort(503) on ep=<callee>:<endpoint>
    target_violation: bool = False
    description: str = ""


class HarnessConfig(BaseModel):
    name: str = "harness"
    master_seed: int = 0
    workers: int | None = None
    classifier_mode: Literal["oracle", "degraded", "external"] | None = None
    # topology name -> topology file
    topologies: dict[str, str] = Field(min_length=1)
    flows: list[str] = Field(min_length=1)
    fault_templates: str | list[FaultTemplate]
    # subset of template names to use (default: all)
    templates: list[str] | None = None
    variants: list[str] = Field(default_factory=lambda: ["default"])
    repeat_count: int = Field(default=1, ge=1)
    plant_violation: bool = False
    # only draw planted edges whose callee sits on this tier
    plant_tier: int | None = Field(default=None, ge=0, le=5)
    # fixed planted edges instead of drawing one
    planted: list[EdgeRef] = Field(default_factory=list)
    archive_root: str | None = None

    # set by the loader
    base_dir: Path = Path(".")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if p.is_absolute() or p.exists():
            return p
        return self.base_dir / p


def load_fault_templates(path: str | Path) -> list[FaultTemplate]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"fault template file not found: {p}", entity=str(p))
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        return [FaultTemplate.model_validate(t) for t in raw.get("templates", [])]
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed fault template file {p}: {e}", entity=str(p)) from e
    except ValidationError as e:
        raise ConfigError(f"invalid fault template in {p}: {e.errors()[0].get('msg')}", entity=str(p)) from e


def fault_templates(cfg: HarnessConfig) -> list[FaultTemplate]:
    templates = cfg.fault_templates if isinstance(cfg.fault_templates, list) else load_fault_templates(cfg.resolve(cfg.fault_templates))
    if cfg.templates is not None:
        by_name = {t.name: t for t in templates}
        unknown = [n for n in cfg.templates if n not in by_name]
        if unknown:
            raise ConfigError(f"unknown fault templates: {', '.join(unknown)}", entity=unknown[0])
        templates = [by_name[n] for n in cfg.templates]
    return templates


def load_harness_config(path: str | Path) -> HarnessConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}", entity=str(p))
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        cfg = HarnessConfig.model_validate(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {p}: {e}", entity=str(p)) from e
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(x) for x in err.get("loc", ()))
        raise ConfigError(f"invalid config {p}: {loc}: {err.get('msg')}", entity=str(p)) from e
    # harness configs sit in configs/; the paths they name are relative to the repo root
    return cfg.model_copy(update={"base_dir": p.resolve().parent.parent})
