from __future__ import annotations

import hashlib
import random
from pathlib import Path

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..crawler.flows import load_flow
from ..errors import ConfigError, ScenarioError
from ..havoc import Abort, FaultSpec, Scope, TargetSelector
from ..topology import EdgeRef, exposable_edges, load_topology_file
from .config import HarnessConfig, fault_templates


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario_id: str
    topology: str
    topology_path: str
    flow: str
    flow_path: str
    template: str
    variant: str = "default"
    faults: tuple[FaultSpec, ...] = ()
    planted_violations: tuple[EdgeRef, ...] = ()
    seed: int
    repeat_count: int = Field(default=1, ge=1)

    def repeat_seed(self, repeat: int) -> int:
        return self.seed if repeat == 0 else derive_seed(self.seed, "repeat", repeat)


def derive_seed(*parts: object) -> int:
    h = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).hexdigest()
    return int(h[:12], 16)


def count_scenarios(n_flows: int, n_templates: int, n_variants: int = 1, n_topologies: int = 1) -> int:
    return n_flows * n_templates * n_variants * n_topologies


def violation_fault(edge: EdgeRef) -> FaultSpec:
    return FaultSpec(
        kind=Abort(status_code=503),
        selector=TargetSelector.by_endpoint((edge.callee, edge.endpoint)),
        scope=Scope(),
    )


def generate_scenarios(cfg: HarnessConfig) -> list[Scenario]:
    templates = fault_templates(cfg)
    n = count_scenarios(len(cfg.flows), len(templates), len(cfg.variants), len(cfg.topologies))
    if n == 0:
        raise ScenarioError("empty cross-product: need at least one flow, template, variant and topology")

    flows = [(path, load_flow(cfg.resolve(path))) for path in cfg.flows]
    out: list[Scenario] = []
    for topo_name, topo_path in sorted(cfg.topologies.items()):
        topology = load_topology_file(cfg.resolve(topo_path))
        for flow_path, flow in flows:
            candidates = exposable_edges(topology, flow.entry_points())
            if cfg.plant_tier is not None:
                candidates = [e for e in candidates if topology.services[e.callee].tier == cfg.plant_tier]
            for template in templates:
                for variant in cfg.variants:
                    seed = derive_seed(cfg.master_seed, topo_name, flow.flow_id, template.name, variant)
                    planted: tuple[EdgeRef, ...] = tuple(cfg.planted)
                    if not planted and (cfg.plant_violation or template.target_violation):
                        if not candidates:
                            raise ScenarioError(
                                f"no exposable non_critical edge for flow {flow.flow_id} on {topo_name}",
                                entity=flow.flow_id,
                            )
                        planted = (random.Random(f"{seed}/plant").choice(candidates),)
                    faults = list(template.faults)
                    if template.target_violation:
                        if not planted:
                            raise ScenarioError(f"template {template.name} targets a violation but none is planted", entity=template.name)
                        faults = [violation_fault(e) for e in planted] + faults
                    out.append(
                        Scenario(
                            scenario_id=f"{topo_name}.{flow.flow_id}.{template.name}.{variant}",
                            topology=topo_name,
                            topology_path=str(cfg.resolve(topo_path)),
                            flow=flow.flow_id,
                            flow_path=str(cfg.resolve(flow_path)),
                            template=template.name,
                            variant=variant,
                            faults=tuple(faults),
                            planted_violations=planted,
                            seed=seed,
                            repeat_count=cfg.repeat_count,
                        )
                    )
    logger.info("Generated {} scenarios from {}", len(out), cfg.name)
    return out


def dump_scenarios(scenarios: list[Scenario]) -> str:
    docs = []
    for s in scenarios:
        d = s.model_dump(mode="json")
        d["faults"] = [f.encode() for f in s.faults]
        d["planted_violations"] = [list(e) for e in s.planted_violations]
        docs.append(d)
    return yaml.safe_dump({"scenarios": docs}, sort_keys=False)


def load_scenarios(path: str | Path) -> list[Scenario]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"scenario file not found: {p}", entity=str(p))
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        return [Scenario.model_validate(s) for s in raw.get("scenarios", [])]
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed scenario file {p}: {e}", entity=str(p)) from e
    except ValidationError as e:
        raise ConfigError(f"invalid scenario in {p}: {e.errors()[0].get('msg')}", entity=str(p)) from e
