from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict

from ..crawler.runner import RunResult
from ..errors import BaselineMismatchError
from ..settings import settings
from ..simmesh import TIMED_OUT, RpcRecord
from ..topology import Topology
from .detect import ErrorFinding
from .scoring import CausalRanking, ScoredRequest, ScoreWeights
from .traces import RootCause

Comparison = Literal["resilience_risk", "environmental", "inconclusive"]
TicketStatus = Literal["action_required", "no_action", "inconclusive"]
IssueClass = Literal["dependency_violation", "timeout_misconfiguration", "fallback_gap", "unclassified"]
Severity = Literal["blocking", "degraded"]


class Ticket(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_id: str
    flow_id: str
    verdict: str
    comparison: Comparison
    status: TicketStatus
    issue_class: IssueClass
    severity: Severity
    owner: str | None = None
    causes: tuple[ScoredRequest, ...] = ()
    root_causes: tuple[RootCause, ...] = ()
    findings: tuple[ErrorFinding, ...] = ()
    transitions: tuple[str, ...] = ()
    narrative: str = ""
    weights: ScoreWeights = ScoreWeights()


def compare_with_baseline(chaos: RunResult, baseline: RunResult | None) -> Comparison | None:
    """None means the chaos run passed and there is nothing to report."""
    if baseline is not None and baseline.flow_id != chaos.flow_id:
        raise BaselineMismatchError(
            f"chaos run is {chaos.flow_id!r} but baseline is {baseline.flow_id!r}", entity=baseline.flow_id
        )
    if chaos.passed:
        return None
    if baseline is None:
        return "inconclusive"
    return "resilience_risk" if baseline.passed else "environmental"


def classify_issue(cause: RootCause | None, merged_log: list[RpcRecord], topology: Topology) -> IssueClass:
    entries = [r for r in merged_log if r.parent_span_id is None]
    if entries and not any(r.failed for r in entries):
        return "fallback_gap"
    if cause is None:
        return "unclassified"
    if cause.cause.status_code == TIMED_OUT:
        return "timeout_misconfiguration"
    for caller, _, edge in topology.edges():
        if (caller, edge.callee, edge.endpoint) == (cause.cause.caller, cause.cause.callee, cause.cause.endpoint):
            return "dependency_violation" if edge.declared_criticality == "non_critical" else "unclassified"
    return "unclassified"


def _severity(result: RunResult) -> Severity:
    return "degraded" if result.fail_reason == "assertion_failed" else "blocking"


def emit_ticket(
    run_id: str,
    chaos: RunResult,
    ranking: CausalRanking,
    root_causes: list[RootCause],
    findings: list[ErrorFinding] | tuple[ErrorFinding, ...],
    comparison: Comparison,
    merged_log: list[RpcRecord],
    topology: Topology,
    *,
    weights: ScoreWeights | None = None,
    top_k: int | None = None,
) -> Ticket:
    k = top_k or settings.ticket_top_k
    causes = ranking.top(k)
    top_root = root_causes[0] if root_causes else None
    if comparison == "environmental":
        status: TicketStatus = "no_action"
    elif comparison == "inconclusive" or not causes:
        status = "inconclusive"
    else:
        status = "action_required"
    owner = top_root.cause.callee if status == "action_required" and top_root else None
    issue = classify_issue(top_root, merged_log, topology) if status == "action_required" else "unclassified"

    if status == "action_required":
        narrative = (
            f"Flow {chaos.flow_id} ended {chaos.label} under fault injection while the paired baseline passed. "
            f"Most likely cause: {top_root.cause.callee}{top_root.cause.endpoint} "
            f"returned {top_root.cause.status_code} (score {top_root.cause.score:.4f}) via {' -> '.join(top_root.chain)}."
        )
    elif status == "no_action":
        narrative = f"Flow {chaos.flow_id} also failed without faults; treated as environmental noise."
    else:
        narrative = f"Flow {chaos.flow_id} ended {chaos.label} but no cause could be attributed."

    return Ticket(
        run_id=run_id,
        flow_id=chaos.flow_id,
        verdict=chaos.label,
        comparison=comparison,
        status=status,
        issue_class=issue,
        severity=_severity(chaos),
        owner=owner,
        causes=tuple(causes),
        root_causes=tuple(root_causes[:k]),
        findings=tuple(findings),
        transitions=tuple(f"{t.at_ms}ms {t.from_screen} --{t.action_taken}--> {t.to_screen}" for t in chaos.transitions),
        narrative=narrative,
        weights=weights or ScoreWeights(),
    )


def render_ticket(ticket: Ticket) -> str:
    lines = [
        f"# Resilience ticket: {ticket.flow_id} ({ticket.run_id})",
        "",
        "## Summary",
        "",
        f"- verdict: {ticket.verdict}",
        f"- baseline comparison: {ticket.comparison}",
        f"- status: {ticket.status}",
        f"- issue class: {ticket.issue_class}",
        f"- severity: {ticket.severity}",
        f"- owner: {ticket.owner or '-'}",
        "",
        ticket.narrative,
        "",
        "## Ranked causes",
        "",
        "| rank | callee | endpoint | status | score | f_status | 1-nfr | f_tier | f_category |",
        "|---:|---|---|---|---:|---:|---:|---:|---:|",
    ]
    for i, c in enumerate(ticket.causes, start=1):
        comp = c.components
        flag = " **top**" if i == 1 and ticket.status == "action_required" else ""
        lines.append(
            f"| {i}{flag} | {c.callee} | {c.endpoint} | {c.status_code} | {c.score:.6f} | "
            f"{comp.f_status} | {comp.one_minus_nfr:.6f} | {comp.f_tier} | {comp.f_category} |"
        )
    lines += ["", "## Root causes", ""]
    lines += [f"{i}. {rc.cause.callee}{rc.cause.endpoint} ({rc.cause.status_code}) via {' -> '.join(rc.chain)}"
              for i, rc in enumerate(ticket.root_causes, start=1)] or ["- none"]
    lines += ["", "## Error findings", ""]
    lines += [f"- {f.at_ms}ms {f.screen_id} [{f.method}] {f.evidence}" for f in ticket.findings] or ["- none"]
    lines += ["", "## Transitions", ""]
    lines += [f"- {t}" for t in ticket.transitions] or ["- none"]
    w = ticket.weights
    lines += [
        "",
        "## Weights",
        "",
        f"- f_status: {w.f_status}",
        f"- f_tier: {w.f_tier}",
        f"- f_category: {w.f_category}",
        "",
    ]
    return "\n".join(lines)
