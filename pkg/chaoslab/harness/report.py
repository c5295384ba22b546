from __future__ import annotations

from collections import defaultdict
from pathlib import Path

from loguru import logger
from sqlalchemy import select

from .. import models
from ..db import catalog_url, get_sessionmaker
from ..errors import ArchiveError, MetricError
from .archive import RunArchive, list_archives, load_archive, read_ranking
from .metrics import DEFAULT_KS, MetricSet, latency_percentiles, pass_rate, precision_at_k, vqa_confusion

# published RCA precision@k on a production corpus, shown next to ours
REFERENCE_RCA = {1: 0.50, 3: 0.71, 5: 0.88}

BASELINE_ROW = "baseline"


def load_archive_set(root: str | Path) -> list[RunArchive]:
    """Archives under root, through the catalog when one exists."""
    base = Path(root)
    if not base.is_dir():
        raise ArchiveError(f"no archives found in {base}", entity=str(base))
    catalog = Path(catalog_url(base).removeprefix("sqlite:///"))
    if catalog.exists():
        SessionLocal = get_sessionmaker(base)
        with SessionLocal() as session:
            rows = session.scalars(
                select(models.RunArchiveRow).order_by(
                    models.RunArchiveRow.scenario_id, models.RunArchiveRow.repeat, models.RunArchiveRow.role
                )
            ).all()
            paths = [r.path for r in rows]
        archives = [load_archive(p) for p in paths]
    else:
        archives = list_archives(base)
    if not archives:
        raise ArchiveError(f"no archives found in {base}", entity=str(base))
    logger.info("Loaded {} archives from {}", len(archives), base)
    return archives


def _row(a: RunArchive) -> str:
    return BASELINE_ROW if a.role == "baseline" else a.template


def rca_decisions(archives: list[RunArchive]) -> list[tuple[list[tuple[str, str]], tuple[str, str]]]:
    """(attributed root causes, planted edge) for every failing chaos run with a planted violation."""
    out = []
    for a in archives:
        if a.role != "chaos" or a.passed or not a.planted:
            continue
        truth = (a.planted[0].callee, a.planted[0].endpoint)
        out.append(([tuple(k) for k in a.root_causes], truth))
    return out


def ranking_decisions(archives: list[RunArchive]) -> list[tuple[list[tuple[str, str]], tuple[str, str]]]:
    """(distinct callee endpoints in ranking.tsv order, planted edge) for the runs rca_decisions covers."""
    out = []
    for a in archives:
        if a.role != "chaos" or a.passed or not a.planted:
            continue
        truth = (a.planted[0].callee, a.planted[0].endpoint)
        ranked = list(dict.fromkeys((r["callee"], r["endpoint"]) for r in read_ranking(a)))
        out.append((ranked, truth))
    return out


def compute_metrics(archives: list[RunArchive], ks: tuple[int, ...] = DEFAULT_KS) -> MetricSet:
    if not archives:
        raise ArchiveError("no archives found")

    decisions = [d for a in archives for d in a.decisions]
    action_p = precision_at_k(decisions, ks) if decisions else {}

    rca = rca_decisions(archives)
    rca_p = precision_at_k(rca, ks) if rca else {}
    ranking = ranking_decisions(archives)
    ranking_p = precision_at_k(ranking, ks) if ranking else {}

    by_row: dict[str, list[RunArchive]] = defaultdict(list)
    for a in archives:
        by_row[_row(a)].append(a)

    assertions = [p for a in archives for p in a.assertions]
    try:
        confusion = vqa_confusion(assertions)
    except MetricError:
        confusion = None

    p50, p95, p99 = latency_percentiles([a.duration_ms for a in archives])
    chaos = [a for a in archives if a.role == "chaos"]
    return MetricSet(
        action_precision_at=action_p,
        rca_precision_at=rca_p,
        ranking_precision_at=ranking_p,
        pass_rate=pass_rate([a.passed for a in chaos]) if chaos else None,
        pass_rate_by_template={k: pass_rate([a.passed for a in v]) for k, v in sorted(by_row.items())},
        latency_p50=p50,
        latency_p95=p95,
        latency_p99=p99,
        latency_by_template={k: latency_percentiles([a.duration_ms for a in v]) for k, v in sorted(by_row.items())},
        vqa_confusion=confusion,
        runs=len(archives),
        tickets=sum(1 for a in chaos if a.ticket_status is not None),
    )


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.5f}"


def action_precision_by_row(archives: list[RunArchive], ks: tuple[int, ...] = DEFAULT_KS) -> dict[str, dict[int, float]]:
    rows: dict[str, list] = defaultdict(list)
    for a in archives:
        rows[_row(a)].extend(a.decisions)
    return {k: precision_at_k(v, ks) for k, v in sorted(rows.items()) if v}


def render_report(archives: list[RunArchive], metrics: MetricSet, ks: tuple[int, ...] = DEFAULT_KS) -> str:
    lines = ["# Chaos evaluation", ""]
    lines.append(f"- Runs: **{metrics.runs}**")
    lines.append(f"- Tickets: **{metrics.tickets}**")
    lines.append(f"- Chaos pass rate: **{_fmt(metrics.pass_rate)}**")
    lines.append("")

    lines.append("## Action precision@k")
    lines.append("")
    lines.append("| Faults | " + " | ".join(f"p@{k}" for k in ks) + " |")
    lines.append("|---|" + "---:|" * len(ks))
    for row, p in action_precision_by_row(archives, ks).items():
        lines.append(f"| {row} | " + " | ".join(_fmt(p[k]) for k in ks) + " |")
    lines.append("")

    lines.append("## Latency (virtual ms)")
    lines.append("")
    lines.append("| Faults | P50 | P95 | P99 |")
    lines.append("|---|---:|---:|---:|")
    for row, (p50, p95, p99) in metrics.latency_by_template.items():
        lines.append(f"| {row} | {p50} | {p95} | {p99} |")
    lines.append("")

    lines.append("## Assertion confusion matrix")
    lines.append("")
    if metrics.vqa_confusion is None:
        lines.append("No assertions evaluated.")
    else:
        (tp, fn), (fp, tn) = metrics.vqa_confusion.rows
        lines.append("| Actual \\ Predicted | Positive | Negative |")
        lines.append("|---|---:|---:|")
        lines.append(f"| Positive | {_fmt(tp)} | {_fmt(fn)} |")
        lines.append(f"| Negative | {_fmt(fp)} | {_fmt(tn)} |")
        if metrics.vqa_confusion.abstained:
            lines.append("")
            lines.append(f"Abstained: {metrics.vqa_confusion.abstained}")
    lines.append("")

    lines.append("## RCA precision@k")
    lines.append("")
    lines.append("| Corpus | " + " | ".join(f"p@{k}" for k in ks) + " |")
    lines.append("|---|" + "---:|" * len(ks))
    if metrics.rca_precision_at:
        lines.append("| this run | " + " | ".join(_fmt(metrics.rca_precision_at[k]) for k in ks) + " |")
    if metrics.ranking_precision_at:
        lines.append("| formula ranking | " + " | ".join(_fmt(metrics.ranking_precision_at[k]) for k in ks) + " |")
    lines.append("| reference | " + " | ".join(_fmt(REFERENCE_RCA.get(k)) for k in ks) + " |")
    lines.append("")

    lines.append("## Pass rate")
    lines.append("")
    lines.append("| Faults | Runs | Pass rate |")
    lines.append("|---|---:|---:|")
    counts: dict[str, int] = defaultdict(int)
    for a in archives:
        counts[_row(a)] += 1
    for row, rate in metrics.pass_rate_by_template.items():
        lines.append(f"| {row} | {counts[row]} | {_fmt(rate)} |")
    lines.append("")
    return "\n".join(lines)


def metric_lines(metrics: MetricSet) -> list[str]:
    out = [f"metric runs value={metrics.runs}", f"metric tickets value={metrics.tickets}"]
    for k, v in metrics.action_precision_at.items():
        out.append(f"metric action_precision k={k} value={v!r}")
    for k, v in metrics.rca_precision_at.items():
        out.append(f"metric rca_precision k={k} value={v!r}")
    for k, v in metrics.ranking_precision_at.items():
        out.append(f"metric ranking_precision k={k} value={v!r}")
    if metrics.pass_rate is not None:
        out.append(f"metric pass_rate value={metrics.pass_rate!r}")
    for t, v in metrics.pass_rate_by_template.items():
        out.append(f"metric pass_rate template={t} value={v!r}")
    for t, (p50, p95, p99) in metrics.latency_by_template.items():
        out.append(f"metric latency template={t} p50={p50} p95={p95} p99={p99}")
    if metrics.vqa_confusion is not None:
        c = metrics.vqa_confusion
        out.append(f"metric vqa_confusion tp={c.tp} fn={c.fn} fp={c.fp} tn={c.tn} abstained={c.abstained}")
    return out


def write_report(archive_root: str | Path, outdir: str | Path) -> MetricSet:
    archives = load_archive_set(archive_root)
    metrics = compute_metrics(archives)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(render_report(archives, metrics), encoding="utf-8")
    (out / "metrics.txt").write_text("\n".join(metric_lines(metrics)) + "\n", encoding="utf-8")
    logger.info("Wrote report for {} runs to {}", metrics.runs, out)
    return metrics
