from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..simmesh import RpcRecord, Status, status_class
from ..topology import Relevance, Topology
from .baseline import BaselineStats
from .categorize import Categorizer, categorize_endpoint
from .detect import ErrorFinding


class ScoreWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    f_status: dict[str, float] = Field(default_factory=lambda: {"5xx": 1.0, "4xx": 0.5, "2xx": 0.2})
    f_tier: dict[int, float] = Field(default_factory=lambda: {0: 1.0, 1: 0.9, 2: 0.7, 3: 0.4, 4: 0.1, 5: 0.1})
    f_category: dict[str, float] = Field(
        default_factory=lambda: {"direct": 3.0, "indirect": 2.0, "supporting": 1.2, "unrelated": 0.3}
    )


DEFAULT_WEIGHTS = ScoreWeights()


class ScoreComponents(BaseModel):
    model_config = ConfigDict(frozen=True)

    f_status: float
    one_minus_nfr: float
    f_tier: float
    f_category: float

    @property
    def product(self) -> float:
        return self.f_status * self.one_minus_nfr * self.f_tier * self.f_category


class ScoredRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    caller: str
    callee: str
    endpoint: str
    status_code: Status
    status_class: str
    start_ms: int
    span_id: str = ""
    tier: int
    category: Relevance
    score: float
    components: ScoreComponents

    @property
    def sort_key(self) -> tuple:
        return (-self.score, -self.components.f_status, self.start_ms, self.callee, self.endpoint)


class CausalRanking(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: tuple[ScoredRequest, ...] = ()
    # no error finding bounded the candidate window
    inconclusive: bool = False

    def top(self, k: int) -> list[ScoredRequest]:
        return list(self.entries[:k])


def score_request(
    r: RpcRecord,
    stats: BaselineStats,
    tier: int,
    category: Relevance,
    weights: ScoreWeights = DEFAULT_WEIGHTS,
) -> ScoredRequest:
    cls = status_class(r.status_code)
    components = ScoreComponents(
        f_status=weights.f_status[cls],
        one_minus_nfr=1.0 - stats.nfr(r.callee, r.endpoint),
        f_tier=weights.f_tier[tier],
        f_category=weights.f_category[category],
    )
    return ScoredRequest(
        caller=r.caller,
        callee=r.callee,
        endpoint=r.endpoint,
        status_code=r.status_code,
        status_class=cls,
        start_ms=r.start_ms,
        span_id=r.span_id,
        tier=tier,
        category=category,
        score=components.product,
        components=components,
    )


class CausalScorer:
    """Scores records of one run; categories are looked up once per endpoint."""

    def __init__(
        self,
        stats: BaselineStats,
        topology: Topology,
        categorizer: Categorizer,
        flow_id: str,
        weights: ScoreWeights = DEFAULT_WEIGHTS,
    ):
        self.stats = stats
        self.topology = topology
        self.categorizer = categorizer
        self.flow_id = flow_id
        self.weights = weights
        self._categories: dict[tuple[str, str], Relevance] = {}

    def category(self, callee: str, endpoint: str) -> Relevance:
        key = (callee, endpoint)
        if key not in self._categories:
            self._categories[key] = categorize_endpoint(self.categorizer, key, self.flow_id)
        return self._categories[key]

    def score(self, r: RpcRecord) -> ScoredRequest:
        tier = self.topology.service(r.callee).tier
        return score_request(r, self.stats, tier, self.category(r.callee, r.endpoint), self.weights)

    def rank(self, merged_log: list[RpcRecord], findings: list[ErrorFinding] | tuple[ErrorFinding, ...], *, run_failed: bool = True) -> CausalRanking:
        if not merged_log:
            return CausalRanking()
        if findings:
            cutoff = min(f.at_ms for f in findings)
            candidates = [r for r in merged_log if r.start_ms <= cutoff]
            inconclusive = False
        else:
            candidates = list(merged_log)
            inconclusive = run_failed

        best: dict[tuple[str, str, str], ScoredRequest] = {}
        for r in candidates:
            s = self.score(r)
            key = (s.callee, s.endpoint, s.status_class)
            cur = best.get(key)
            if cur is None or (s.score, -s.start_ms) > (cur.score, -cur.start_ms):
                best[key] = s
        entries = sorted(best.values(), key=lambda s: s.sort_key)
        return CausalRanking(entries=tuple(entries), inconclusive=inconclusive)


def rank_causes(
    merged_log: list[RpcRecord],
    findings: list[ErrorFinding] | tuple[ErrorFinding, ...],
    stats: BaselineStats,
    topology: Topology,
    classifier: Categorizer,
    weights: ScoreWeights = DEFAULT_WEIGHTS,
    *,
    flow_id: str,
    run_failed: bool = True,
) -> CausalRanking:
    scorer = CausalScorer(stats, topology, classifier, flow_id, weights)
    return scorer.rank(merged_log, findings, run_failed=run_failed)
