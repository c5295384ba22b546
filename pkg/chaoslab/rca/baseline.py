from __future__ import annotations

from collections.abc import Iterable

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from ..crawler.runner import RunResult
from ..simmesh import RpcRecord

UNSEEN_PRIOR = 0.5


def pattern_key(callee: str, endpoint: str) -> str:
    return f"{callee} {endpoint}"


class PatternStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    failures: int = Field(default=0, ge=0)
    total: int = Field(default=0, ge=0)
    # fixed rate, bypassing the estimator
    rate: float | None = Field(default=None, ge=0.0, le=1.0)

    @property
    def normal_failure_rate(self) -> float:
        if self.rate is not None:
            return self.rate
        return (self.failures + 1) / (self.total + 2)


class BaselineStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    patterns: dict[str, PatternStats] = Field(default_factory=dict)
    runs_observed: int = 0
    low_confidence: bool = False

    def nfr(self, callee: str, endpoint: str) -> float:
        p = self.patterns.get(pattern_key(callee, endpoint))
        return p.normal_failure_rate if p else UNSEEN_PRIOR

    @classmethod
    def from_rates(cls, rates: dict[tuple[str, str], float]) -> "BaselineStats":
        return cls(patterns={pattern_key(c, e): PatternStats(rate=r) for (c, e), r in rates.items()}, runs_observed=0)


def compute_baseline_stats(baseline_logs: Iterable[tuple[RunResult, list[RpcRecord]]]) -> BaselineStats:
    counts: dict[str, list[int]] = {}
    runs = 0
    skipped = 0
    for result, records in baseline_logs:
        if not result.passed:
            skipped += 1
            continue
        runs += 1
        for r in records:
            c = counts.setdefault(pattern_key(r.callee, r.endpoint), [0, 0])
            c[1] += 1
            if r.failed:
                c[0] += 1
    if runs == 0:
        logger.warning("No passing baseline runs ({} failing); every pattern uses the {} prior", skipped, UNSEEN_PRIOR)
    patterns = {k: PatternStats(failures=f, total=t) for k, (f, t) in sorted(counts.items())}
    return BaselineStats(patterns=patterns, runs_observed=runs, low_confidence=runs == 0)
