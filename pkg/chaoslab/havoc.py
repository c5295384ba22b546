from __future__ import annotations

import random
import re
from typing import Annotated, Any, Iterable, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import HeaderDecodeError
from .topology import ServiceSpec, Tier

Tenancy = Literal["production", "test"]

TENANCY_HEADER = "x-havoc-tenancy"
RUN_HEADER = "x-havoc-run"
FAULTS_HEADER = "x-havoc-faults"


class Abort(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["abort"] = "abort"
    status_code: int = Field(ge=400, le=599)

    def encode(self) -> str:
        return f"abort({self.status_code})"


class Timeout(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["timeout"] = "timeout"

    def encode(self) -> str:
        return "timeout"


class Latency(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["latency"] = "latency"
    extra_ms: int = Field(ge=1)

    def encode(self) -> str:
        return f"latency({self.extra_ms})"


FaultKind = Annotated[Union[Abort, Timeout, Latency], Field(discriminator="kind")]


class TargetSelector(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["by_services", "by_tier_at_least", "by_endpoint"]
    services: frozenset[str] = frozenset()
    tier: Tier | None = None
    endpoints: frozenset[tuple[str, str]] = frozenset()

    @model_validator(mode="after")
    def _non_empty(self) -> "TargetSelector":
        if self.mode == "by_services" and not self.services:
            raise ValueError("by_services selector needs at least one service")
        if self.mode == "by_tier_at_least" and self.tier is None:
            raise ValueError("by_tier_at_least selector needs a tier")
        if self.mode == "by_endpoint" and not self.endpoints:
            raise ValueError("by_endpoint selector needs at least one endpoint")
        return self

    @classmethod
    def by_services(cls, *names: str) -> "TargetSelector":
        return cls(mode="by_services", services=frozenset(names))

    @classmethod
    def by_tier_at_least(cls, tier: int) -> "TargetSelector":
        return cls(mode="by_tier_at_least", tier=tier)

    @classmethod
    def by_endpoint(cls, *pairs: tuple[str, str]) -> "TargetSelector":
        return cls(mode="by_endpoint", endpoints=frozenset(pairs))

    def encode(self) -> str:
        if self.mode == "by_tier_at_least":
            return f"tier>={self.tier}"
        if self.mode == "by_services":
            return "svc=" + "|".join(sorted(self.services))
        return "ep=" + "|".join(f"{svc}:{path}" for svc, path in sorted(self.endpoints))


class Scope(BaseModel):
    """`probability=None` means every matching request."""

    model_config = ConfigDict(frozen=True)

    probability: float | None = Field(default=None, gt=0.0, le=1.0)

    def encode(self) -> str:
        return "all" if self.probability is None else f"p={self.probability!r}"


class FaultSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FaultKind
    selector: TargetSelector
    scope: Scope = Scope()

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, value: Any) -> Any:
        # config files write faults in header grammar
        if isinstance(value, str):
            try:
                spec = parse_fault(value)
            except HeaderDecodeError as e:
                raise ValueError(str(e)) from e
            return {"kind": spec.kind, "selector": spec.selector, "scope": spec.scope}
        return value

    def encode(self) -> str:
        return f"{self.kind.encode()};{self.selector.encode()};{self.scope.encode()}"

    def __str__(self) -> str:
        return self.encode()


class HavocHeaders(BaseModel):
    model_config = ConfigDict(frozen=True)

    tenancy: Tenancy = "production"
    faults: tuple[FaultSpec, ...] = ()
    run_id: str = ""


class FaultOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    applied: bool = False
    effect: Literal["aborted", "timed_out", "delayed", "none"] = "none"
    status_code: int | None = None
    extra_ms: int | None = None

    @model_validator(mode="after")
    def _applied_iff_effect(self) -> "FaultOutcome":
        if self.applied != (self.effect != "none"):
            raise ValueError("applied must be true exactly when an effect is present")
        return self


NO_FAULT = FaultOutcome()


# ---------------------------
# Grammar
# ---------------------------

_KIND_RE = re.compile(r"^(?:abort\((?P<code>\d+)\)|(?P<timeout>timeout)|latency\((?P<ms>\d+)\))$")
_TIER_RE = re.compile(r"^tier>=(?P<tier>\d+)$")
_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")
_PATH_RE = re.compile(r"^/[A-Za-z0-9_./\-]*$")
_P_RE = re.compile(r"^p=(?P<p>[0-9.eE+\-]+)$")


def _parse_kind(text: str, clause: str) -> dict[str, Any]:
    m = _KIND_RE.match(text)
    if not m:
        raise HeaderDecodeError(f"unknown fault kind {text!r} in clause {clause!r}", entity=clause)
    if m.group("timeout"):
        return {"kind": "timeout"}
    if m.group("code") is not None:
        code = int(m.group("code"))
        if not 400 <= code <= 599:
            raise HeaderDecodeError(f"abort status {code} out of range 400..599 in clause {clause!r}", entity=clause)
        return {"kind": "abort", "status_code": code}
    ms = int(m.group("ms"))
    if ms < 1:
        raise HeaderDecodeError(f"latency must be at least 1 ms in clause {clause!r}", entity=clause)
    return {"kind": "latency", "extra_ms": ms}


def _parse_target(text: str, clause: str) -> TargetSelector:
    m = _TIER_RE.match(text)
    if m:
        tier = int(m.group("tier"))
        if tier > 5:
            raise HeaderDecodeError(f"tier {tier} out of range 0..5 in clause {clause!r}", entity=clause)
        return TargetSelector.by_tier_at_least(tier)
    if text.startswith("svc="):
        names = text[4:].split("|")
        if not names or any(not _NAME_RE.match(n) for n in names):
            raise HeaderDecodeError(f"malformed service list in clause {clause!r}", entity=clause)
        return TargetSelector.by_services(*names)
    if text.startswith("ep="):
        pairs = []
        for item in text[3:].split("|"):
            svc, sep, path = item.partition(":")
            if not sep or not _NAME_RE.match(svc) or not _PATH_RE.match(path):
                raise HeaderDecodeError(f"malformed endpoint {item!r} in clause {clause!r}", entity=clause)
            pairs.append((svc, path))
        return TargetSelector.by_endpoint(*pairs)
    raise HeaderDecodeError(f"unknown target {text!r} in clause {clause!r}", entity=clause)


def _parse_scope(text: str, clause: str) -> Scope:
    if text == "all":
        return Scope()
    m = _P_RE.match(text)
    if not m:
        raise HeaderDecodeError(f"unknown scope {text!r} in clause {clause!r}", entity=clause)
    try:
        p = float(m.group("p"))
    except ValueError:
        raise HeaderDecodeError(f"bad probability in clause {clause!r}", entity=clause) from None
    if not 0.0 < p <= 1.0:
        raise HeaderDecodeError(f"probability {p} outside (0, 1] in clause {clause!r}", entity=clause)
    return Scope(probability=p)


def parse_fault(clause: str) -> FaultSpec:
    text = clause.strip()
    parts = text.split(";")
    if len(parts) != 3:
        raise HeaderDecodeError(f"fault clause {clause!r} needs kind;target;scope", entity=clause)
    kind, target, scope = (p.strip() for p in parts)
    try:
        return FaultSpec(
            kind=_parse_kind(kind, clause),
            selector=_parse_target(target, clause),
            scope=_parse_scope(scope, clause),
        )
    except ValidationError as e:
        raise HeaderDecodeError(f"invalid fault clause {clause!r}: {e.errors()[0].get('msg')}", entity=clause) from e


def encode_faults(faults: Iterable[FaultSpec]) -> str:
    return ",".join(f.encode() for f in faults)


def encode_headers(h: HavocHeaders) -> list[tuple[str, str]]:
    return [
        (TENANCY_HEADER, h.tenancy),
        (RUN_HEADER, h.run_id),
        (FAULTS_HEADER, encode_faults(h.faults)),
    ]


def decode_headers(raw: Iterable[tuple[str, str]]) -> HavocHeaders:
    values: dict[str, str] = {}
    for key, value in raw:
        k = key.strip().lower()
        if k in (TENANCY_HEADER, RUN_HEADER, FAULTS_HEADER):
            values[k] = value

    tenancy: Tenancy = "test" if values.get(TENANCY_HEADER, "").strip().lower() == "test" else "production"
    faults_text = values.get(FAULTS_HEADER, "").strip()
    faults = tuple(parse_fault(c) for c in faults_text.split(",")) if faults_text else ()
    return HavocHeaders(tenancy=tenancy, faults=faults, run_id=values.get(RUN_HEADER, ""))


# ---------------------------
# Matching / injection
# ---------------------------

def selector_matches(s: TargetSelector, callee: ServiceSpec, endpoint: str) -> bool:
    if s.mode == "by_tier_at_least":
        return s.tier is not None and callee.tier >= s.tier
    if s.mode == "by_services":
        return callee.name in s.services
    return (callee.name, endpoint) in s.endpoints


def _outcome(kind: Abort | Timeout | Latency) -> FaultOutcome:
    if isinstance(kind, Abort):
        return FaultOutcome(applied=True, effect="aborted", status_code=kind.status_code)
    if isinstance(kind, Latency):
        return FaultOutcome(applied=True, effect="delayed", extra_ms=kind.extra_ms)
    return FaultOutcome(applied=True, effect="timed_out")


def apply_fault(h: HavocHeaders, callee: ServiceSpec, endpoint: str, rng: random.Random) -> FaultOutcome:
    """Outcome of the first matching fault whose scope fires; production traffic is never touched."""
    if h.tenancy != "test":
        return NO_FAULT
    draw: float | None = None
    for fault in h.faults:
        if not selector_matches(fault.selector, callee, endpoint):
            continue
        p = fault.scope.probability
        if p is not None and p < 1.0:
            # one uniform per attempt, shared by every probabilistic fault
            if draw is None:
                draw = rng.random()
            if draw >= p:
                continue
        return _outcome(fault.kind)
    return NO_FAULT
