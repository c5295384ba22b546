from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError

from .crawler.runner import RunResult
from .crawler.screens import ScreenState, ScreenTransition
from .errors import ArchiveError
from .simmesh import RpcRecord

# one JSON object per line, tagged by "kind"
RUN, RPC, TRANSITION, SCREEN = "run", "rpc", "transition", "screen"


class RunLog(BaseModel):
    model_config = ConfigDict(frozen=True)

    meta: dict[str, Any]
    result: RunResult
    records: tuple[RpcRecord, ...]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def _line(kind: str, obj: dict[str, Any]) -> str:
    return json.dumps({"kind": kind, **obj}, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_runlog(result: RunResult, records: list[RpcRecord], meta: dict[str, Any] | None = None) -> str:
    head = result.model_dump(mode="json", exclude={"transitions", "screens_mosaic"})
    head["meta"] = dict(meta or {})
    lines = [_line(RUN, head)]
    lines += [_line(RPC, r.model_dump(mode="json")) for r in records]
    lines += [_line(TRANSITION, t.model_dump(mode="json")) for t in result.transitions]
    lines += [_line(SCREEN, s.model_dump(mode="json")) for s in result.screens_mosaic]
    return "\n".join(lines) + "\n"


def parse_runlog(text: str) -> RunLog:
    head: dict[str, Any] | None = None
    records, transitions, screens = [], [], []
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            kind = obj.pop("kind")
            if kind == RUN:
                head = obj
            elif kind == RPC:
                records.append(RpcRecord.model_validate(obj))
            elif kind == TRANSITION:
                transitions.append(ScreenTransition.model_validate(obj))
            elif kind == SCREEN:
                screens.append(ScreenState.model_validate(obj))
            else:
                logger.warning("Skipping unknown run log line kind {!r} at line {}", kind, n)
        except (ValueError, KeyError, ValidationError) as e:
            raise ArchiveError(f"malformed run log line {n}: {e}", entity=str(n)) from e
    if head is None:
        raise ArchiveError("run log has no run line")
    meta = head.pop("meta", {})
    try:
        result = RunResult.model_validate({**head, "transitions": transitions, "screens_mosaic": screens})
    except ValidationError as e:
        raise ArchiveError(f"run line does not describe a run: {e.errors()[0].get('msg')}") from e
    return RunLog(meta=meta, result=result, records=tuple(records))


def write_runlog(path: str | Path, result: RunResult, records: list[RpcRecord], meta: dict[str, Any] | None = None) -> str:
    data = dump_runlog(result, records, meta).encode("utf-8")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    return sha256_bytes(data)


def read_runlog(path: str | Path) -> RunLog:
    p = Path(path)
    if not p.exists():
        raise ArchiveError(f"run log not found: {p}", entity=str(p))
    return parse_runlog(p.read_text(encoding="utf-8"))
