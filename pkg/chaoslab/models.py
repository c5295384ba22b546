from __future__ import annotations

import datetime as dt
from typing import Optional

from sqlalchemy import DateTime, ForeignKey, Integer, String, Text
from sqlalchemy.orm import Mapped, mapped_column, relationship
from sqlalchemy.types import JSON

from .db import Base


class RunArchiveRow(Base):
    __tablename__ = "run_archives"

    run_id: Mapped[str] = mapped_column(String(255), primary_key=True)
    scenario_id: Mapped[str] = mapped_column(String(255), index=True, nullable=False)
    role: Mapped[str] = mapped_column(String(16), nullable=False)
    repeat: Mapped[int] = mapped_column(Integer, default=0, nullable=False)

    topology: Mapped[str] = mapped_column(String(128), nullable=False)
    flow_id: Mapped[str] = mapped_column(String(128), index=True, nullable=False)
    template: Mapped[str] = mapped_column(String(128), nullable=False)
    variant: Mapped[str] = mapped_column(String(128), nullable=False)
    seed: Mapped[str] = mapped_column(String(64), nullable=False)

    verdict: Mapped[str] = mapped_column(String(16), nullable=False)
    fail_reason: Mapped[str | None] = mapped_column(String(64), nullable=True)
    duration_ms: Mapped[int] = mapped_column(Integer, nullable=False)
    action_count: Mapped[int] = mapped_column(Integer, nullable=False)

    digest: Mapped[str] = mapped_column(String(64), index=True, nullable=False)
    path: Mapped[str] = mapped_column(Text, nullable=False)
    meta: Mapped[dict] = mapped_column(JSON, default=dict, nullable=False)

    created_at: Mapped[dt.datetime] = mapped_column(DateTime, default=lambda: dt.datetime.now(dt.timezone.utc), nullable=False)

    ticket: Mapped[Optional["TicketRow"]] = relationship(back_populates="run", cascade="all, delete-orphan", uselist=False)


class TicketRow(Base):
    __tablename__ = "tickets"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    run_id: Mapped[str] = mapped_column(String(255), ForeignKey("run_archives.run_id"), index=True, nullable=False)

    comparison: Mapped[str] = mapped_column(String(32), nullable=False)
    status: Mapped[str] = mapped_column(String(32), nullable=False)
    issue_class: Mapped[str] = mapped_column(String(32), nullable=False)
    severity: Mapped[str] = mapped_column(String(16), nullable=False)
    owner: Mapped[str | None] = mapped_column(String(128), nullable=True)
    top_callee: Mapped[str | None] = mapped_column(String(128), nullable=True)
    top_endpoint: Mapped[str | None] = mapped_column(String(255), nullable=True)

    run: Mapped[RunArchiveRow] = relationship(back_populates="ticket")
