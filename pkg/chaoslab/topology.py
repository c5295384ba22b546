from __future__ import annotations

import re
from collections import deque
from pathlib import Path
from typing import Annotated, Any, Iterator, Literal, NamedTuple

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import PlantError, TopologyParseError, TopologyValidationError
from .settings import settings

Tier = Annotated[int, Field(ge=0, le=5)]
Relevance = Literal["direct", "indirect", "supporting", "unrelated"]
Criticality = Literal["critical", "non_critical"]
AppInstance = Literal["rider", "driver", "eats", "none"]

# names and paths travel inside havoc headers, so they must stay clear of the
# grammar's separators (, ; | : =)
NAME_PATTERN = r"^[A-Za-z0-9_.\-]+$"
PATH_PATTERN = r"^/[A-Za-z0-9_./\-]*$"

_MARKER_RE = re.compile(r"^(?P<element>[A-Za-z0-9_\-]+):(?:(?P<simple>missing|placeholder)|delayed\((?P<ms>\d+)\))$")


class DegradationMarker(BaseModel):
    """A UI element a fallback response renders degraded: `discount_banner:missing`."""

    model_config = ConfigDict(frozen=True)

    element_id: str
    effect: Literal["missing", "placeholder", "delayed"]
    delay_ms: int = Field(default=0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, value: Any) -> Any:
        if not isinstance(value, str):
            return value
        m = _MARKER_RE.match(value.strip())
        if not m:
            raise ValueError(f"malformed degradation marker {value!r}")
        if m.group("ms") is not None:
            return {"element_id": m.group("element"), "effect": "delayed", "delay_ms": int(m.group("ms"))}
        return {"element_id": m.group("element"), "effect": m.group("simple")}

    @model_validator(mode="after")
    def _delay_needs_ms(self) -> "DegradationMarker":
        if self.effect == "delayed" and self.delay_ms < 1:
            raise ValueError(f"delayed marker for {self.element_id!r} needs a positive delay")
        return self

    def __str__(self) -> str:
        if self.effect == "delayed":
            return f"{self.element_id}:delayed({self.delay_ms})"
        return f"{self.element_id}:{self.effect}"


class EndpointSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str = Field(pattern=PATH_PATTERN)
    # flow id -> relevance of this endpoint to that flow (ground truth)
    relevance_tags: dict[str, Relevance] = Field(default_factory=dict)
    baseline_failure_weight: float = Field(default=0.0, ge=0.0, le=1.0)


class DependencyEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    callee: str = Field(pattern=NAME_PATTERN)
    endpoint: str = Field(pattern=PATH_PATTERN)
    declared_criticality: Criticality
    actual_criticality: Criticality
    timeout_budget_ms: int = Field(ge=1)
    fallback_payload: DegradationMarker | None = None

    @model_validator(mode="before")
    @classmethod
    def _actual_defaults_to_declared(cls, value: Any) -> Any:
        if isinstance(value, dict) and value.get("actual_criticality") is None:
            value = dict(value)
            value["actual_criticality"] = value.get("declared_criticality")
        return value

    @model_validator(mode="after")
    def _non_critical_needs_fallback(self) -> "DependencyEdge":
        if self.declared_criticality == "non_critical" and self.fallback_payload is None:
            raise ValueError(f"non_critical edge to {self.callee}{self.endpoint} has no fallback_payload")
        return self

    @property
    def is_violation(self) -> bool:
        return self.declared_criticality == "non_critical" and self.actual_criticality == "critical"


class CallStage(BaseModel):
    model_config = ConfigDict(frozen=True)

    parallel_calls: tuple[DependencyEdge, ...] = Field(min_length=1)


class ServiceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(pattern=NAME_PATTERN)
    tier: Tier
    base_latency_ms: int = Field(ge=1)
    jitter_ms: int = Field(default=0, ge=0)
    endpoints: tuple[EndpointSpec, ...] = ()
    call_plan: tuple[CallStage, ...] = ()

    def endpoint(self, path: str) -> EndpointSpec | None:
        for ep in self.endpoints:
            if ep.path == path:
                return ep
        return None


class EntryPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    service: str
    endpoint: str
    app_instance: AppInstance = "none"
    timeout_budget_ms: int = Field(default_factory=lambda: settings.entry_timeout_ms, ge=1)


class EdgeRef(NamedTuple):
    caller: str
    callee: str
    endpoint: str

    def __str__(self) -> str:
        return f"{self.caller}->{self.callee}{self.endpoint}"


class Topology(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "topology"
    services: dict[str, ServiceSpec]
    entry_points: dict[str, EntryPoint] = Field(default_factory=dict)

    def service(self, name: str) -> ServiceSpec:
        try:
            return self.services[name]
        except KeyError:
            raise TopologyValidationError(f"unknown service {name!r}", entity=name) from None

    def edges(self) -> Iterator[tuple[str, int, DependencyEdge]]:
        for caller in sorted(self.services):
            for idx, stage in enumerate(self.services[caller].call_plan):
                for edge in stage.parallel_calls:
                    yield caller, idx, edge

    def edge(self, ref: EdgeRef) -> DependencyEdge | None:
        svc = self.services.get(ref.caller)
        if svc is None:
            return None
        for stage in svc.call_plan:
            for edge in stage.parallel_calls:
                if edge.callee == ref.callee and edge.endpoint == ref.endpoint:
                    return edge
        return None

    def violations(self) -> list[EdgeRef]:
        return [EdgeRef(caller, e.callee, e.endpoint) for caller, _, e in self.edges() if e.is_violation]

    def relevance_lookup(self, *, enabled: bool = True) -> "RelevanceLookup":
        return RelevanceLookup(self, enabled=enabled)


class RelevanceLookup:
    """Restricted read access to relevance tags; disabled lookups answer nothing."""

    def __init__(self, topology: Topology, *, enabled: bool = True):
        self._topology = topology
        self.enabled = enabled

    def category(self, callee: str, path: str, flow_id: str) -> Relevance | None:
        if not self.enabled:
            return None
        svc = self._topology.services.get(callee)
        ep = svc.endpoint(path) if svc else None
        if ep is None:
            return None
        return ep.relevance_tags.get(flow_id)


# ---------------------------
# Loading / dumping
# ---------------------------

def _first_error(err: ValidationError) -> str:
    e = err.errors()[0]
    loc = ".".join(str(x) for x in e.get("loc", ()))
    return f"{loc}: {e.get('msg')}" if loc else str(e.get("msg"))


def _find_cycle(graph: dict[str, list[str]]) -> list[str] | None:
    white, grey, black = 0, 1, 2
    color = {n: white for n in graph}
    stack_path: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = grey
        stack_path.append(node)
        for nxt in graph.get(node, []):
            if color.get(nxt, white) == grey:
                return stack_path[stack_path.index(nxt):] + [nxt]
            if color.get(nxt, white) == white:
                found = visit(nxt)
                if found:
                    return found
        stack_path.pop()
        color[node] = black
        return None

    for node in sorted(graph):
        if color[node] == white:
            found = visit(node)
            if found:
                return found
    return None


def build_topology(doc: dict[str, Any]) -> Topology:
    if not isinstance(doc, dict):
        raise TopologyParseError("topology document must be a mapping")
    for section in ("services", "edges", "entry_points"):
        if section not in doc:
            raise TopologyParseError(f"missing section {section!r}", entity=section)

    raw_services = doc.get("services") or []
    raw_edges = doc.get("edges") or []
    raw_entries = doc.get("entry_points") or {}
    if not isinstance(raw_services, list) or not isinstance(raw_edges, list) or not isinstance(raw_entries, dict):
        raise TopologyParseError("services/edges must be lists and entry_points a mapping")

    bare: dict[str, ServiceSpec] = {}
    for item in raw_services:
        if not isinstance(item, dict):
            raise TopologyParseError(f"service entry is not a mapping: {item!r}")
        if item.get("call_plan"):
            raise TopologyParseError(f"service {item.get('name')!r}: calls belong in the edges section", entity=str(item.get("name")))
        try:
            svc = ServiceSpec.model_validate(item)
        except ValidationError as e:
            raise TopologyValidationError(f"service {item.get('name')!r}: {_first_error(e)}", entity=str(item.get("name"))) from e
        if svc.name in bare:
            raise TopologyValidationError(f"duplicate service {svc.name!r}", entity=svc.name)
        if len({ep.path for ep in svc.endpoints}) != len(svc.endpoints):
            raise TopologyValidationError(f"service {svc.name!r} declares an endpoint twice", entity=svc.name)
        bare[svc.name] = svc

    stages: dict[str, dict[int, list[DependencyEdge]]] = {}
    for item in raw_edges:
        if not isinstance(item, dict):
            raise TopologyParseError(f"edge entry is not a mapping: {item!r}")
        item = dict(item)
        caller = item.pop("caller", None)
        stage = item.pop("stage", 0)
        if caller not in bare:
            raise TopologyValidationError(f"edge caller {caller!r} is not a service", entity=str(caller))
        callee = item.get("callee")
        if callee not in bare:
            raise TopologyValidationError(f"edge {caller}->{callee} references missing service {callee!r}", entity=str(callee))
        if bare[callee].endpoint(str(item.get("endpoint"))) is None:
            raise TopologyValidationError(f"edge {caller}->{callee} references missing endpoint {callee}:{item.get('endpoint')}", entity=f"{callee}:{item.get('endpoint')}")
        if item.get("timeout_budget_ms") is None:
            item["timeout_budget_ms"] = settings.timeout_multiplier * bare[callee].base_latency_ms
        try:
            edge = DependencyEdge.model_validate(item)
        except ValidationError as e:
            raise TopologyValidationError(f"edge {caller}->{callee}{item.get('endpoint')}: {_first_error(e)}", entity=f"{caller}->{callee}") from e
        if not isinstance(stage, int) or stage < 0:
            raise TopologyValidationError(f"edge {caller}->{callee}: stage must be a non-negative integer", entity=f"{caller}->{callee}")
        per_caller = stages.setdefault(caller, {})
        for existing in per_caller.values():
            if any(x.callee == edge.callee and x.endpoint == edge.endpoint for x in existing):
                raise TopologyValidationError(f"duplicate edge {caller}->{callee}{edge.endpoint}", entity=f"{caller}->{callee}")
        per_caller.setdefault(stage, []).append(edge)

    services: dict[str, ServiceSpec] = {}
    for name, svc in bare.items():
        plan = tuple(CallStage(parallel_calls=tuple(edges)) for _, edges in sorted(stages.get(name, {}).items()))
        services[name] = svc.model_copy(update={"call_plan": plan})

    entries: dict[str, EntryPoint] = {}
    for entry_id, raw in raw_entries.items():
        try:
            ep = EntryPoint.model_validate(raw)
        except ValidationError as e:
            raise TopologyValidationError(f"entry point {entry_id!r}: {_first_error(e)}", entity=str(entry_id)) from e
        if ep.service not in services:
            raise TopologyValidationError(f"entry point {entry_id!r} references missing service {ep.service!r}", entity=ep.service)
        if services[ep.service].endpoint(ep.endpoint) is None:
            raise TopologyValidationError(f"entry point {entry_id!r} references missing endpoint {ep.service}:{ep.endpoint}", entity=f"{ep.service}:{ep.endpoint}")
        entries[str(entry_id)] = ep

    graph = {name: sorted({e.callee for st in svc.call_plan for e in st.parallel_calls}) for name, svc in services.items()}
    cycle = _find_cycle(graph)
    if cycle:
        text = " -> ".join(cycle)
        raise TopologyValidationError(f"call graph has a cycle: {text}", entity=text)

    topo = Topology(name=str(doc.get("name") or "topology"), services=services, entry_points=entries)
    overruns = budget_overruns(topo)
    if overruns:
        entity, message = overruns[0]
        raise TopologyValidationError(message, entity=entity)
    logger.debug("Loaded topology {}: {} services, {} entry points", topo.name, len(services), len(entries))
    return topo


def load_topology(source: str) -> Topology:
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as e:
        raise TopologyParseError(f"malformed topology document: {e}") from e
    return build_topology(doc)


def load_topology_file(path: str | Path) -> Topology:
    p = Path(path)
    if not p.exists():
        raise TopologyParseError(f"topology file not found: {p}", entity=str(p))
    return load_topology(p.read_text(encoding="utf-8"))


def topology_document(topology: Topology) -> dict[str, Any]:
    services = []
    edges = []
    for name in sorted(topology.services):
        svc = topology.services[name]
        services.append({
            "name": svc.name,
            "tier": svc.tier,
            "base_latency_ms": svc.base_latency_ms,
            "jitter_ms": svc.jitter_ms,
            "endpoints": [
                {
                    "path": ep.path,
                    "relevance_tags": dict(ep.relevance_tags),
                    "baseline_failure_weight": ep.baseline_failure_weight,
                }
                for ep in svc.endpoints
            ],
        })
        for idx, stage in enumerate(svc.call_plan):
            for e in stage.parallel_calls:
                row: dict[str, Any] = {
                    "caller": name,
                    "stage": idx,
                    "callee": e.callee,
                    "endpoint": e.endpoint,
                    "declared_criticality": e.declared_criticality,
                    "actual_criticality": e.actual_criticality,
                    "timeout_budget_ms": e.timeout_budget_ms,
                }
                if e.fallback_payload is not None:
                    row["fallback_payload"] = str(e.fallback_payload)
                edges.append(row)
    entries = {k: v.model_dump() for k, v in sorted(topology.entry_points.items())}
    return {"name": topology.name, "services": services, "edges": edges, "entry_points": entries}


def dump_topology(topology: Topology) -> str:
    return yaml.safe_dump(topology_document(topology), sort_keys=False)


# ---------------------------
# Operations
# ---------------------------

def plant_violation(topology: Topology, edge: EdgeRef | tuple[str, str, str]) -> Topology:
    ref = EdgeRef(*edge)
    current = topology.edge(ref)
    if current is None:
        raise PlantError(f"unknown edge {ref}", entity=str(ref))
    if current.declared_criticality == "critical":
        raise PlantError(f"edge {ref} is declared critical; a violation needs a non_critical declaration", entity=str(ref))
    if current.actual_criticality == "critical":
        return topology

    caller = topology.services[ref.caller]
    plan = []
    for stage in caller.call_plan:
        calls = tuple(
            e.model_copy(update={"actual_criticality": "critical"}) if (e.callee, e.endpoint) == (ref.callee, ref.endpoint) else e
            for e in stage.parallel_calls
        )
        plan.append(stage.model_copy(update={"parallel_calls": calls}))
    services = dict(topology.services)
    services[ref.caller] = caller.model_copy(update={"call_plan": tuple(plan)})
    logger.info("Planted dependency violation on {} ({})", ref, topology.name)
    return topology.model_copy(update={"services": services})


_OPS = {">=": ">=", "≥": ">=", "<=": "<=", "≤": "<=", "==": "==", "!=": "!=", ">": ">", "<": "<"}
_NEGATE = {">=": "<", "<": ">=", "<=": ">", ">": "<=", "==": "!=", "!=": "=="}
_PRED_RE = re.compile(r"^\s*tier\s*(>=|<=|==|!=|≥|≤|>|<)\s*(\d+)\s*$")


class TierPredicate(BaseModel):
    model_config = ConfigDict(frozen=True)

    op: Literal[">=", "<=", "==", "!=", ">", "<"]
    value: int

    @classmethod
    def parse(cls, text: str) -> "TierPredicate":
        m = _PRED_RE.match(text)
        if not m:
            raise ValueError(f"unsupported tier predicate {text!r} (expected e.g. 'tier >= 2')")
        return cls(op=_OPS[m.group(1)], value=int(m.group(2)))

    def __call__(self, tier: int) -> bool:
        v = self.value
        return {
            ">=": tier >= v,
            "<=": tier <= v,
            "==": tier == v,
            "!=": tier != v,
            ">": tier > v,
            "<": tier < v,
        }[self.op]

    def negate(self) -> "TierPredicate":
        return TierPredicate(op=_NEGATE[self.op], value=self.value)

    def __str__(self) -> str:
        return f"tier {self.op} {self.value}"


def tier_services(topology: Topology, selector: TierPredicate | str) -> set[str]:
    pred = TierPredicate.parse(selector) if isinstance(selector, str) else selector
    return {name for name, svc in topology.services.items() if pred(svc.tier)}


def critical_closure(topology: Topology, entry_ids: list[str] | None = None) -> set[str]:
    """Services reached from the entries over actual-critical calls only."""
    ids = entry_ids if entry_ids is not None else sorted(topology.entry_points)
    start = {topology.entry_points[i].service for i in ids if i in topology.entry_points}
    reached = set(start)
    queue = deque(sorted(start))
    while queue:
        name = queue.popleft()
        for stage in topology.services[name].call_plan:
            for e in stage.parallel_calls:
                if e.actual_criticality == "critical" and e.callee not in reached:
                    reached.add(e.callee)
                    queue.append(e.callee)
    return reached


def exposable_edges(topology: Topology, entry_ids: list[str] | None = None) -> list[EdgeRef]:
    """Declared non-critical edges whose caller is reached from the entries over actual-critical calls."""
    reached = critical_closure(topology, entry_ids)
    out = [
        EdgeRef(caller, e.callee, e.endpoint)
        for caller, _, e in topology.edges()
        if caller in reached and e.declared_criticality == "non_critical" and e.actual_criticality == "non_critical"
    ]
    return sorted(out)


def worst_case_ms(topology: Topology) -> dict[str, int]:
    """Longest each service can run while every fault stays behind non-critical calls.

    A non-critical call is charged its full timeout budget; a critical call its callee's
    worst case, capped at the budget.
    """
    memo: dict[str, int] = {}

    def visit(name: str) -> int:
        if name not in memo:
            svc = topology.services[name]
            total = svc.base_latency_ms + svc.jitter_ms
            for stage in svc.call_plan:
                total += max(
                    min(visit(e.callee), e.timeout_budget_ms) if e.actual_criticality == "critical" else e.timeout_budget_ms
                    for e in stage.parallel_calls
                )
            memo[name] = total
        return memo[name]

    for name in sorted(topology.services):
        visit(name)
    return memo


def budget_overruns(topology: Topology) -> list[tuple[str, str]]:
    """(entity, message) for every critical call or entry point whose budget a worst case can exceed."""
    worst = worst_case_ms(topology)
    out = []
    for caller, _, e in topology.edges():
        if e.actual_criticality == "critical" and worst[e.callee] > e.timeout_budget_ms:
            out.append((
                f"{caller}->{e.callee}",
                f"critical edge {caller}->{e.callee}{e.endpoint}: callee can take {worst[e.callee]} ms "
                f"with its non-critical calls at budget, over the {e.timeout_budget_ms} ms budget",
            ))
    for entry_id, ep in sorted(topology.entry_points.items()):
        if worst[ep.service] > ep.timeout_budget_ms:
            out.append((
                entry_id,
                f"entry point {entry_id!r}: {ep.service} can take {worst[ep.service]} ms, "
                f"over the {ep.timeout_budget_ms} ms budget",
            ))
    return out
