from __future__ import annotations

import hashlib
import random
from typing import Literal

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DuplicateAppLogError, UnknownEntryPointError
from .havoc import HavocHeaders, apply_fault
from .topology import AppInstance, DegradationMarker, Topology

TIMED_OUT = "timed_out"
Status = int | Literal["timed_out"]


def is_failure(status: Status) -> bool:
    return status == TIMED_OUT or not 200 <= int(status) < 300


def status_class(status: Status) -> Literal["5xx", "4xx", "2xx"]:
    """Timeouts count as server errors."""
    if status == TIMED_OUT or int(status) >= 500:
        return "5xx"
    if int(status) >= 400:
        return "4xx"
    return "2xx"


class VirtualClock:
    def __init__(self, now_ms: int = 0):
        self.now_ms = now_ms

    def advance(self, ms: int) -> int:
        self.now_ms += max(0, ms)
        return self.now_ms

    def advance_to(self, t_ms: int) -> int:
        self.now_ms = max(self.now_ms, t_ms)
        return self.now_ms


class RpcRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    caller: str
    callee: str
    endpoint: str
    start_ms: int = Field(ge=0)
    end_ms: int = Field(ge=0)
    status_code: Status
    injected: bool = False
    degraded: bool = False
    app_instance: AppInstance = "none"
    span_id: str = ""
    parent_span_id: str | None = None

    @model_validator(mode="after")
    def _ordered(self) -> "RpcRecord":
        if self.end_ms < self.start_ms:
            raise ValueError(f"record {self.caller}->{self.callee} ends before it starts")
        return self

    @property
    def failed(self) -> bool:
        return is_failure(self.status_code)

    @property
    def status_class(self) -> str:
        return status_class(self.status_code)


class TraceTree(BaseModel):
    model_config = ConfigDict(frozen=True)

    root: RpcRecord
    children: tuple["TraceTree", ...] = ()

    def walk(self):
        yield self.root
        for c in self.children:
            yield from c.walk()


TraceTree.model_rebuild()


class ResponsePayload(BaseModel):
    model_config = ConfigDict(frozen=True)

    status_code: Status
    degradation_markers: frozenset[DegradationMarker] = frozenset()

    @model_validator(mode="after")
    def _failures_carry_no_markers(self) -> "ResponsePayload":
        if is_failure(self.status_code) and self.degradation_markers:
            raise ValueError("a failed response cannot carry degradation markers")
        return self

    @property
    def ok(self) -> bool:
        return not is_failure(self.status_code)


def rng_stream(seed: int | str, purpose: str, path: str) -> random.Random:
    # string seeds hash deterministically, so each call path owns a stable stream
    return random.Random(f"{seed}/{purpose}/{path}")


def span_id_for(path: str) -> str:
    return hashlib.sha256(path.encode("utf-8")).hexdigest()[:16]


class _Run:
    """One request's execution state; not shared between requests."""

    def __init__(self, topology: Topology, headers: HavocHeaders, seed: int | str, app: AppInstance):
        self.topology = topology
        self.headers = headers
        self.seed = seed
        self.app = app

    def call(
        self,
        caller: str,
        callee: str,
        endpoint: str,
        budget_ms: int,
        start: int,
        path: str,
        parent_span: str | None,
    ) -> tuple[TraceTree, frozenset[DegradationMarker]]:
        svc = self.topology.service(callee)
        span = span_id_for(f"{self.seed}/{path}")

        def record(status: Status, end: int, *, injected: bool = False, degraded: bool = False) -> RpcRecord:
            return RpcRecord(
                caller=caller,
                callee=callee,
                endpoint=endpoint,
                start_ms=start,
                end_ms=end,
                status_code=status,
                injected=injected,
                degraded=degraded,
                app_instance=self.app,
                span_id=span,
                parent_span_id=parent_span,
            )

        fault = apply_fault(self.headers, svc, endpoint, rng_stream(self.seed, "fault", path))
        if fault.effect == "aborted":
            return TraceTree(root=record(fault.status_code, start + 1, injected=True)), frozenset()
        if fault.effect == "timed_out":
            return TraceTree(root=record(TIMED_OUT, start + budget_ms, injected=True)), frozenset()
        extra = fault.extra_ms or 0
        injected = fault.effect == "delayed"

        ep = svc.endpoint(endpoint)
        weight = ep.baseline_failure_weight if ep else 0.0
        children: list[TraceTree] = []
        markers: set[DegradationMarker] = set()
        degraded = False

        if weight > 0 and rng_stream(self.seed, "organic", path).random() < weight:
            status: Status = 503
            t = start + svc.base_latency_ms
        else:
            status = 200
            jitter = rng_stream(self.seed, "jitter", path).randint(0, svc.jitter_ms) if svc.jitter_ms else 0
            t = start + svc.base_latency_ms + jitter
            for idx, stage in enumerate(svc.call_plan):
                stage_end = t
                critical_failure = False
                for edge in stage.parallel_calls:
                    child, child_markers = self.call(
                        callee,
                        edge.callee,
                        edge.endpoint,
                        edge.timeout_budget_ms,
                        t,
                        f"{path}/{idx}:{edge.callee}{edge.endpoint}",
                        span,
                    )
                    children.append(child)
                    stage_end = max(stage_end, child.root.end_ms)
                    if not child.root.failed:
                        markers |= child_markers
                    elif edge.actual_criticality == "critical":
                        critical_failure = True
                    else:
                        degraded = True
                        if edge.fallback_payload is not None:
                            markers.add(edge.fallback_payload)
                t = stage_end
                if critical_failure:
                    # remaining stages never run
                    status = 500
                    markers.clear()
                    break

        end = t + extra
        if end - start > budget_ms:
            deadline = start + budget_ms
            # calls still running at the deadline are cancelled
            kept = tuple(ch for ch in children if ch.root.end_ms <= deadline)
            return TraceTree(root=record(TIMED_OUT, deadline, injected=injected), children=kept), frozenset()

        rec = record(status, end, injected=injected, degraded=degraded)
        return TraceTree(root=rec, children=tuple(children)), frozenset() if rec.failed else frozenset(markers)


def execute_request(
    topology: Topology,
    flow_entry: str,
    headers: HavocHeaders,
    seed: int | str,
    *,
    start_ms: int = 0,
    deadline_ms: int | None = None,
) -> tuple[TraceTree, ResponsePayload, list[RpcRecord]]:
    """Run one request from an entry point.

    `deadline_ms` is the client's own cut-off; the entry call times out there when it
    falls before the entry budget runs out.
    """
    entry = topology.entry_points.get(flow_entry)
    if entry is None:
        raise UnknownEntryPointError(f"unknown entry point {flow_entry!r}", entity=flow_entry)
    budget = entry.timeout_budget_ms
    if deadline_ms is not None:
        if deadline_ms <= start_ms:
            raise ValueError(f"deadline {deadline_ms} ms is not after the start at {start_ms} ms")
        budget = min(budget, deadline_ms - start_ms)

    run = _Run(topology, headers, seed, entry.app_instance)
    caller = f"{entry.app_instance}-app" if entry.app_instance != "none" else "client"
    trace, markers = run.call(caller, entry.service, entry.endpoint, budget, start_ms, flow_entry, None)
    payload = ResponsePayload(status_code=trace.root.status_code, degradation_markers=markers)
    log = trace_to_log(trace)
    logger.debug("Executed {} seed={} -> {} ({} rpcs)", flow_entry, seed, trace.root.status_code, len(log))
    return trace, payload, log


def trace_to_log(trace: TraceTree) -> list[RpcRecord]:
    return sorted(trace.walk(), key=lambda r: (r.start_ms, r.caller, r.callee))


def merge_app_logs(logs: list[tuple[str, list[RpcRecord]]]) -> list[RpcRecord]:
    seen: set[str] = set()
    merged: list[RpcRecord] = []
    for app, records in logs:
        if app in seen:
            raise DuplicateAppLogError(f"app instance {app!r} supplied twice", entity=app)
        seen.add(app)
        merged.extend(records)
    return sorted(merged, key=lambda r: (r.start_ms, r.app_instance))
