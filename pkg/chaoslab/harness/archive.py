from __future__ import annotations

import json
import uuid
from pathlib import Path
from typing import Any, Literal

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from sqlalchemy.orm import Session

from .. import models
from ..crawler.runner import RunResult
from ..errors import ArchiveError
from ..havoc import HavocHeaders, encode_headers
from ..rca.pipeline import RcaReport
from ..rca.scoring import CausalRanking
from ..rca.tickets import Ticket, render_ticket
from ..runlog import sha256_bytes, sha256_file, write_runlog
from ..simmesh import RpcRecord
from ..topology import EdgeRef
from .scenarios import Scenario

RUNLOG = "runlog.jsonl"
RANKING = "ranking.tsv"
ROOTCAUSES = "rootcauses.tsv"
TICKET = "ticket.md"
MANIFEST = "archive.json"

RANKING_HEADER = "rank\tcallee\tendpoint\tstatus\tscore\tf_status\tone_minus_nfr\tf_tier\tf_category"


class RunArchive(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_id: str
    scenario_id: str
    role: Literal["baseline", "chaos"]
    repeat: int = 0
    topology: str
    topology_path: str = ""
    flow_id: str
    flow_path: str = ""
    template: str
    variant: str
    seed: str
    verdict: str
    fail_reason: str | None = None
    duration_ms: int
    action_count: int
    path: str
    digests: dict[str, str]
    comparison: str | None = None
    ticket_status: str | None = None
    planted: list[EdgeRef] = Field(default_factory=list)
    root_causes: list[tuple[str, str]] = Field(default_factory=list)
    # (ranked actions, optimal action) per policy decision
    decisions: list[tuple[list[str], str]] = Field(default_factory=list)
    # (answer or None, ground truth) per evaluated assertion
    assertions: list[tuple[bool | None, bool]] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def digest(self) -> str:
        """Content digest of the run; the run id is not part of it."""
        text = "\n".join(f"{k}:{self.digests[k]}" for k in sorted(self.digests))
        return sha256_bytes(text.encode("utf-8"))


def new_run_id(scenario_id: str, role: str, repeat: int) -> str:
    return f"{scenario_id}.r{repeat}.{role}.{uuid.uuid4().hex[:8]}"


def havoc_run_tag(scenario_id: str, role: str, repeat: int) -> str:
    return f"{scenario_id}/r{repeat}/{role}"


def ranking_tsv(ranking: CausalRanking | None) -> str:
    lines = [RANKING_HEADER]
    for i, e in enumerate(ranking.entries if ranking else (), start=1):
        c = e.components
        lines.append(
            "\t".join(
                [str(i), e.callee, e.endpoint, str(e.status_code), repr(e.score),
                 repr(c.f_status), repr(c.one_minus_nfr), repr(c.f_tier), repr(c.f_category)]
            )
        )
    return "\n".join(lines) + "\n"


def parse_ranking_tsv(text: str) -> list[dict[str, Any]]:
    rows = []
    for line in text.splitlines()[1:]:
        if not line.strip():
            continue
        rank, callee, endpoint, status, score, fs, nfr, ft, fc = line.split("\t")
        rows.append({
            "rank": int(rank),
            "callee": callee,
            "endpoint": endpoint,
            "status": status,
            "score": float(score),
            "components": (float(fs), float(nfr), float(ft), float(fc)),
        })
    return rows


def rootcauses_tsv(report: RcaReport | None) -> str:
    lines = ["rank\tcallee\tendpoint\tstatus\tscore\tchain"]
    for i, rc in enumerate(report.root_causes if report else (), start=1):
        lines.append("\t".join([str(i), rc.cause.callee, rc.cause.endpoint, str(rc.cause.status_code), repr(rc.cause.score), ">".join(rc.chain)]))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> str:
    data = text.encode("utf-8")
    path.write_bytes(data)
    return sha256_bytes(data)


def write_archive(
    root: str | Path,
    *,
    scenario: Scenario,
    role: Literal["baseline", "chaos"],
    repeat: int,
    seed: int,
    headers: HavocHeaders,
    result: RunResult,
    merged_log: list[RpcRecord],
    report: RcaReport | None = None,
    ticket: Ticket | None = None,
    comparison: str | None = None,
    run_id: str | None = None,
) -> RunArchive:
    run_id = run_id or new_run_id(scenario.scenario_id, role, repeat)
    run_dir = Path(root) / run_id
    try:
        run_dir.mkdir(parents=True, exist_ok=False)
        meta = {
            "scenario_id": scenario.scenario_id,
            "role": role,
            "repeat": repeat,
            "seed": seed,
            "topology": scenario.topology,
            "template": scenario.template,
            "variant": scenario.variant,
            "headers": encode_headers(headers),
            "planted": [list(e) for e in scenario.planted_violations],
        }
        digests = {
            "runlog": write_runlog(run_dir / RUNLOG, result, merged_log, meta),
            "ranking": _write(run_dir / RANKING, ranking_tsv(report.ranking if report else None)),
        }
        _write(run_dir / ROOTCAUSES, rootcauses_tsv(report))
        if ticket is not None:
            _write(run_dir / TICKET, render_ticket(ticket))

        archive = RunArchive(
            run_id=run_id,
            scenario_id=scenario.scenario_id,
            role=role,
            repeat=repeat,
            topology=scenario.topology,
            topology_path=scenario.topology_path,
            flow_id=result.flow_id,
            flow_path=scenario.flow_path,
            template=scenario.template,
            variant=scenario.variant,
            seed=str(seed),
            verdict=result.verdict,
            fail_reason=result.fail_reason,
            duration_ms=result.duration_ms,
            action_count=result.action_count,
            path=str(run_dir),
            digests=digests,
            comparison=comparison,
            ticket_status=ticket.status if ticket else None,
            planted=list(scenario.planted_violations),
            root_causes=[rc.key for rc in report.root_causes] if report else [],
            decisions=[(list(d.ranked_actions), d.optimal) for d in result.decisions],
            assertions=[(a.answer, a.ground_truth) for a in result.mid_assertions],
        )
        _write(run_dir / MANIFEST, json.dumps(archive.model_dump(mode="json"), indent=2, sort_keys=True))
    except OSError as e:
        raise ArchiveError(f"failed to persist archive {run_dir}: {e}", entity=str(run_dir)) from e
    logger.info("Stored run {} ({}) -> {}", run_id, result.label, run_dir)
    return archive


def load_archive(run_dir: str | Path) -> RunArchive:
    p = Path(run_dir) / MANIFEST
    if not p.exists():
        raise ArchiveError(f"no {MANIFEST} in {run_dir}", entity=str(run_dir))
    try:
        return RunArchive.model_validate_json(p.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ArchiveError(f"corrupt archive manifest {p}: {e.errors()[0].get('msg')}", entity=str(p)) from e


def checked_file(archive: RunArchive, name: str, filename: str) -> Path:
    """Path of an archived file whose bytes still match the digest recorded at write time."""
    p = Path(archive.path) / filename
    if not p.exists():
        raise ArchiveError(f"missing {filename} in {archive.path}", entity=str(p))
    if sha256_file(p) != archive.digests.get(name):
        raise ArchiveError(f"{filename} in {archive.path} does not match its recorded digest", entity=str(p))
    return p


def read_ranking(archive: RunArchive) -> list[dict[str, Any]]:
    return parse_ranking_tsv(checked_file(archive, "ranking", RANKING).read_text(encoding="utf-8"))


def list_archives(root: str | Path) -> list[RunArchive]:
    base = Path(root)
    if not base.is_dir():
        return []
    return [load_archive(d) for d in sorted(base.iterdir()) if (d / MANIFEST).exists()]


def register_archive(session: Session, archive: RunArchive, ticket: Ticket | None = None) -> models.RunArchiveRow:
    row = models.RunArchiveRow(
        run_id=archive.run_id,
        scenario_id=archive.scenario_id,
        role=archive.role,
        repeat=archive.repeat,
        topology=archive.topology,
        flow_id=archive.flow_id,
        template=archive.template,
        variant=archive.variant,
        seed=archive.seed,
        verdict=archive.verdict,
        fail_reason=archive.fail_reason,
        duration_ms=archive.duration_ms,
        action_count=archive.action_count,
        digest=archive.digest,
        path=archive.path,
        meta={"comparison": archive.comparison, "planted": [list(e) for e in archive.planted]},
    )
    if ticket is not None:
        top = ticket.root_causes[0].cause if ticket.root_causes else None
        row.ticket = models.TicketRow(
            comparison=ticket.comparison,
            status=ticket.status,
            issue_class=ticket.issue_class,
            severity=ticket.severity,
            owner=ticket.owner,
            top_callee=top.callee if top else None,
            top_endpoint=top.endpoint if top else None,
        )
    session.add(row)
    return row
