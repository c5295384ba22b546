from __future__ import annotations

import math
from collections.abc import Hashable, Sequence
from fractions import Fraction

from pydantic import BaseModel, ConfigDict, Field

from ..errors import MetricError

DEFAULT_KS = (1, 2, 3, 5)


def precision_at_k(
    decisions: Sequence[tuple[Sequence[Hashable], Hashable]],
    ks: Sequence[int] = DEFAULT_KS,
) -> dict[int, float]:
    """Fraction of decisions whose ground truth is among the first k ranked items."""
    if not decisions:
        raise MetricError("precision@k is undefined for zero decisions")
    if any(k < 1 for k in ks):
        raise MetricError(f"k must be positive, got {list(ks)}")
    n = len(decisions)
    out = {}
    for k in ks:
        hits = sum(1 for ranked, truth in decisions if truth in list(ranked)[:k])
        out[k] = hits / n
    return out


def percentile(values: Sequence[int | float], pct: int | float) -> int | float:
    """Nearest rank: the ceil(pct/100 * n)-th smallest value (1-indexed)."""
    if not values:
        raise MetricError("percentile of an empty list")
    ordered = sorted(values)
    rank = math.ceil(Fraction(pct) / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


def latency_percentiles(durations: Sequence[int | float]) -> tuple[int | float, int | float, int | float]:
    if not durations:
        raise MetricError("no durations to summarize")
    return percentile(durations, 50), percentile(durations, 95), percentile(durations, 99)


class ConfusionMatrix(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0
    abstained: int = 0

    @property
    def rows(self) -> list[list[float]]:
        """Rows are actual (positive, negative), columns predicted (positive, negative)."""
        pos = self.tp + self.fn
        neg = self.fp + self.tn
        return [
            [self.tp / pos, self.fn / pos] if pos else [0.0, 0.0],
            [self.fp / neg, self.tn / neg] if neg else [0.0, 0.0],
        ]


def vqa_confusion(pairs: Sequence[tuple[bool | None, bool]]) -> ConfusionMatrix:
    if not pairs:
        raise MetricError("confusion matrix of zero assertions")
    tp = fn = fp = tn = abstained = 0
    for answer, truth in pairs:
        if answer is None:
            abstained += 1
        elif truth and answer:
            tp += 1
        elif truth:
            fn += 1
        elif answer:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn, abstained=abstained)


def pass_rate(verdicts: Sequence[bool]) -> float:
    if not verdicts:
        raise MetricError("pass rate of zero runs")
    return sum(1 for v in verdicts if v) / len(verdicts)


class MetricSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    action_precision_at: dict[int, float] = Field(default_factory=dict)
    rca_precision_at: dict[int, float] = Field(default_factory=dict)
    # same decisions scored on the stored formula ranking, before trace attribution
    ranking_precision_at: dict[int, float] = Field(default_factory=dict)
    pass_rate: float | None = None
    pass_rate_by_template: dict[str, float] = Field(default_factory=dict)
    latency_p50: int | float | None = None
    latency_p95: int | float | None = None
    latency_p99: int | float | None = None
    latency_by_template: dict[str, tuple[int | float, int | float, int | float]] = Field(default_factory=dict)
    vqa_confusion: ConfusionMatrix | None = None
    runs: int = 0
    tickets: int = 0
