from __future__ import annotations

from contextlib import asynccontextmanager

from fastapi import Depends, FastAPI, HTTPException
from pydantic import BaseModel, Field
from sqlalchemy import select
from sqlalchemy.orm import Session

from . import models
from .crawler.assertions import DefaultClassifier
from .crawler.flows import StepSpec
from .crawler.policy import DefaultPolicy
from .crawler.screens import ScreenState, ScreenTransition
from .db import get_sessionmaker, init_db
from .rca.categorize import KeywordCategorizer
from .rca.detect import RequiredElementsInspector, regex_hit


@asynccontextmanager
async def lifespan(_app: FastAPI):
    init_db()
    yield


app = FastAPI(title="chaoslab", version="0.1", lifespan=lifespan)

_policy = DefaultPolicy()
_classifier = DefaultClassifier()
_inspector = RequiredElementsInspector()


def get_db():
    SessionLocal = get_sessionmaker()
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


class RankRequest(BaseModel):
    screen: ScreenState
    goal: StepSpec
    history: list[ScreenTransition] = Field(default_factory=list)
    per_element_wait_ms: int = 2000


class AnswerRequest(BaseModel):
    prompt: str
    screens: list[ScreenState]


class DetectRequest(BaseModel):
    screen: ScreenState


class CategorizeRequest(BaseModel):
    callee: str
    path: str
    flow_id: str
    keywords: list[str] = Field(default_factory=list)


@app.post("/policy/rank")
def rank(req: RankRequest):
    decision = _policy.rank(req.screen, req.goal, req.history, per_element_wait_ms=req.per_element_wait_ms)
    return {"ranked_actions": list(decision.ranked_actions), "reason": decision.reason}


@app.post("/classifier/answer")
def answer(req: AnswerRequest):
    return {"answer": _classifier.answer(req.prompt, req.screens)}


@app.post("/classifier/detect")
def detect(req: DetectRequest):
    reason = regex_hit(req.screen.text_content()) or _inspector.inspect(req.screen)
    return {"error": reason is not None, "reason": reason}


@app.post("/classifier/categorize")
def categorize(req: CategorizeRequest):
    categorizer = KeywordCategorizer({req.flow_id: req.keywords})
    return {"category": categorizer.categorize(req.callee, req.path, req.flow_id)}


def _run_row(r: models.RunArchiveRow) -> dict:
    return {
        "run_id": r.run_id,
        "scenario_id": r.scenario_id,
        "role": r.role,
        "repeat": r.repeat,
        "flow_id": r.flow_id,
        "template": r.template,
        "seed": r.seed,
        "verdict": r.verdict,
        "fail_reason": r.fail_reason,
        "duration_ms": r.duration_ms,
        "digest": r.digest,
    }


@app.get("/runs")
def list_runs(flow_id: str | None = None, role: str | None = None, db: Session = Depends(get_db)):
    q = select(models.RunArchiveRow).order_by(models.RunArchiveRow.scenario_id, models.RunArchiveRow.repeat, models.RunArchiveRow.role)
    if flow_id:
        q = q.where(models.RunArchiveRow.flow_id == flow_id)
    if role:
        q = q.where(models.RunArchiveRow.role == role)
    return [_run_row(r) for r in db.execute(q).scalars().all()]


@app.get("/runs/{run_id}")
def get_run(run_id: str, db: Session = Depends(get_db)):
    row = db.get(models.RunArchiveRow, run_id)
    if not row:
        raise HTTPException(status_code=404, detail="run not found")
    out = _run_row(row) | {"path": row.path, "meta": row.meta}
    if row.ticket:
        t = row.ticket
        out["ticket"] = {
            "comparison": t.comparison,
            "status": t.status,
            "issue_class": t.issue_class,
            "severity": t.severity,
            "owner": t.owner,
            "top_cause": f"{t.top_callee}{t.top_endpoint}" if t.top_callee else None,
        }
    return out
