from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..simmesh import RpcRecord
from .scoring import CausalRanking, CausalScorer, ScoredRequest


class RootCause(BaseModel):
    model_config = ConfigDict(frozen=True)

    cause: ScoredRequest
    # callees from the ranked request down to the cause
    chain: tuple[str, ...]
    ranked_from: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.cause.callee, self.cause.endpoint)


def children_index(merged_log: list[RpcRecord]) -> dict[str, list[RpcRecord]]:
    index: dict[str, list[RpcRecord]] = {}
    for r in merged_log:
        if r.parent_span_id:
            index.setdefault(r.parent_span_id, []).append(r)
    return index


def analyze_traces(ranking: CausalRanking, merged_log: list[RpcRecord], scorer: CausalScorer) -> list[RootCause]:
    """Follow each ranked failure down its failed descendants to the deepest one.

    Successful ranked requests stand for themselves. Causes are deduplicated
    by (callee, endpoint) and keep ranking order.
    """
    by_span = {r.span_id: r for r in merged_log if r.span_id}
    index = children_index(merged_log)
    out: list[RootCause] = []
    seen: set[tuple[str, str]] = set()

    for entry in ranking.entries:
        record = by_span.get(entry.span_id)
        cause = entry
        chain = [entry.callee]
        if record is not None and record.failed:
            current = record
            while True:
                failed = [c for c in index.get(current.span_id, []) if c.failed]
                if not failed:
                    break
                scored = sorted((scorer.score(c) for c in failed), key=lambda s: s.sort_key)
                cause = scored[0]
                chain.append(cause.callee)
                current = by_span[cause.span_id]
        rc = RootCause(cause=cause, chain=tuple(chain), ranked_from=f"{entry.callee}{entry.endpoint}")
        if rc.key in seen:
            continue
        seen.add(rc.key)
        out.append(rc)
    return out
