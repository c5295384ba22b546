from __future__ import annotations

from loguru import logger
from pydantic import BaseModel, ConfigDict

from ..crawler.runner import RunResult
from ..simmesh import RpcRecord
from ..topology import Topology
from .baseline import BaselineStats
from .categorize import Categorizer
from .detect import ErrorDetection, ScreenInspector, detect_errors
from .scoring import DEFAULT_WEIGHTS, CausalRanking, CausalScorer, ScoreWeights
from .traces import RootCause, analyze_traces


class RcaReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    detection: ErrorDetection
    ranking: CausalRanking
    root_causes: tuple[RootCause, ...]


def analyze_run(
    result: RunResult,
    merged_log: list[RpcRecord],
    topology: Topology,
    stats: BaselineStats,
    categorizer: Categorizer,
    *,
    inspector: ScreenInspector | None = None,
    weights: ScoreWeights = DEFAULT_WEIGHTS,
) -> RcaReport:
    """Error detection, causal ranking, then trace analysis for one run."""
    detection = detect_errors(list(result.screens_mosaic), inspector)
    scorer = CausalScorer(stats, topology, categorizer, result.flow_id, weights)
    ranking = scorer.rank(merged_log, detection.findings, run_failed=not result.passed)
    causes = analyze_traces(ranking, merged_log, scorer)
    logger.debug(
        "RCA {}: {} findings, {} candidates, top cause {}",
        result.flow_id,
        len(detection.findings),
        len(ranking.entries),
        causes[0].key if causes else None,
    )
    return RcaReport(detection=detection, ranking=ranking, root_causes=tuple(causes))
