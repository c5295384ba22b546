from __future__ import annotations

from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeBase, sessionmaker

from .settings import settings


class Base(DeclarativeBase):
    pass


# one catalog per archive root
_engines: dict[str, Engine] = {}
_sessionmakers: dict[str, sessionmaker] = {}


def catalog_url(archive_root: str | Path | None = None) -> str:
    root = Path(archive_root) if archive_root is not None else settings.archive_root
    return f"sqlite:///{root / settings.catalog_name}"


def get_engine(archive_root: str | Path | None = None) -> Engine:
    url = catalog_url(archive_root)
    if url not in _engines:
        Path(url.removeprefix("sqlite:///")).parent.mkdir(parents=True, exist_ok=True)
        _engines[url] = create_engine(url, future=True)
    return _engines[url]


def get_sessionmaker(archive_root: str | Path | None = None) -> sessionmaker:
    url = catalog_url(archive_root)
    if url not in _sessionmakers:
        _sessionmakers[url] = sessionmaker(bind=get_engine(archive_root), autoflush=False, autocommit=False, future=True)
    return _sessionmakers[url]


def init_db(archive_root: str | Path | None = None) -> None:
    # import models so metadata is populated
    from . import models  # noqa: F401

    Base.metadata.create_all(bind=get_engine(archive_root))
