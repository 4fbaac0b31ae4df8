"""Durable record store over SQLAlchemy Core.

One table per record family, with the record body serialized as JSON next to
the columns that are queried or indexed. The embedded engine (sqlite, the
default) keeps the whole service self-contained; any server database URL works
through the same code path. The only guarantee managers may rely on is
per-record serializability — compare-and-set on execution status is the
primitive that makes concurrent status transitions safe. A store-level mutex
provides that serializability uniformly across engines (sqlite's in-memory
mode cannot take concurrent transactions on its single shared connection).
"""
from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from typing import Any, Iterator, Optional

from sqlalchemy import (
    Column,
    Float,
    MetaData,
    String,
    Table,
    Text,
    create_engine,
    delete,
    select,
    update,
)
from sqlalchemy.engine import Connection, Engine
from sqlalchemy.pool import StaticPool

from .errors import NotFound


class StaleWrite(Exception):
    """Compare-and-set found a different stored status than expected."""

    def __init__(self, uuid: str, expected: str, actual: Optional[str]):
        super().__init__(f"execution {uuid}: expected status {expected}, found {actual}")
        self.uuid = uuid
        self.expected = expected
        self.actual = actual


_metadata = MetaData()

_executions = Table(
    "executions",
    _metadata,
    Column("uuid", String(36), primary_key=True),
    Column("kind", String(16), nullable=False),
    Column("context_ref", String(255), nullable=False, index=True),
    Column("submitter_ref", String(255), nullable=False, index=True),
    Column("status", String(16), nullable=False, index=True),
    Column("submitted_at", Float, nullable=False, index=True),
    Column("body", Text, nullable=False),
)

_experiments = Table(
    "experiments",
    _metadata,
    Column("owner", String(255), primary_key=True),
    Column("name", String(255), primary_key=True),
    Column("context_ref", String(255), nullable=False),
    Column("created_at", Float, nullable=False),
    Column("body", Text, nullable=False),
)

_contexts = Table(
    "contexts",
    _metadata,
    Column("slug", String(255), primary_key=True),
    Column("body", Text, nullable=False),
)

_api_keys = Table(
    "api_keys",
    _metadata,
    Column("token", String(255), primary_key=True),
    Column("body", Text, nullable=False),
)

_quotas = Table(
    "quota_definitions",
    _metadata,
    Column("scope", String(16), primary_key=True),  # "user" | "context"
    Column("name", String(255), primary_key=True),
    Column("body", Text, nullable=False),
)

_TABLES = {
    "executions": _executions,
    "experiments": _experiments,
    "contexts": _contexts,
    "api_keys": _api_keys,
    "quota_definitions": _quotas,
}


class Store:
    """Record families: executions, experiments, contexts, api-keys, quotas."""

    def __init__(self, url: str = "sqlite://"):
        kwargs: dict[str, Any] = {"future": True}
        if url.startswith("sqlite"):
            kwargs["connect_args"] = {"check_same_thread": False, "timeout": 30}
            if url in ("sqlite://", "sqlite:///:memory:"):
                # A single shared connection, or every thread sees its own db.
                kwargs["poolclass"] = StaticPool
        self._engine: Engine = create_engine(url, **kwargs)
        self._url = url
        self._mutex = threading.RLock()
        _metadata.create_all(self._engine)

    def close(self) -> None:
        self._engine.dispose()

    @contextmanager
    def _begin(self) -> Iterator[Connection]:
        with self._mutex, self._engine.begin() as conn:
            yield conn

    @contextmanager
    def _connect(self) -> Iterator[Connection]:
        with self._mutex, self._engine.connect() as conn:
            yield conn

    @contextmanager
    def transaction(self) -> Iterator[Connection]:
        """All writes issued on the yielded connection commit or roll back together."""
        with self._begin() as conn:
            yield conn

    # -- executions ---------------------------------------------------------

    def put_execution(
        self,
        uuid: str,
        kind: str,
        context_ref: str,
        submitter_ref: str,
        status: str,
        submitted_at: float,
        body: dict[str, Any],
        conn: Optional[Connection] = None,
    ) -> None:
        stmt = _executions.insert().values(
            uuid=uuid,
            kind=kind,
            context_ref=context_ref,
            submitter_ref=submitter_ref,
            status=status,
            submitted_at=submitted_at,
            body=json.dumps(body),
        )
        self._execute(stmt, conn)

    def get_execution(self, uuid: str) -> dict[str, Any]:
        with self._connect() as conn:
            row = conn.execute(
                select(_executions.c.body).where(_executions.c.uuid == uuid)
            ).first()
        if row is None:
            raise NotFound(f"execution {uuid} not found")
        return json.loads(row[0])

    def cas_execution(
        self, uuid: str, expected_status: str, new_status: str, body: dict[str, Any]
    ) -> None:
        """Replace the record iff its stored status still equals expected_status."""
        stmt = (
            update(_executions)
            .where(_executions.c.uuid == uuid, _executions.c.status == expected_status)
            .values(status=new_status, body=json.dumps(body))
        )
        with self._begin() as conn:
            result = conn.execute(stmt)
            if result.rowcount == 1:
                return
            row = conn.execute(
                select(_executions.c.status).where(_executions.c.uuid == uuid)
            ).first()
        if row is None:
            raise NotFound(f"execution {uuid} not found")
        raise StaleWrite(uuid, expected_status, row[0])

    def list_executions(
        self,
        context_ref: Optional[str] = None,
        status: Optional[str] = None,
        kind: Optional[str] = None,
    ) -> list[dict[str, Any]]:
        """Bodies sorted by submitted_at descending (newest first)."""
        stmt = select(_executions.c.body).order_by(
            _executions.c.submitted_at.desc(), _executions.c.uuid
        )
        if context_ref is not None:
            stmt = stmt.where(_executions.c.context_ref == context_ref)
        if status is not None:
            stmt = stmt.where(_executions.c.status == status)
        if kind is not None:
            stmt = stmt.where(_executions.c.kind == kind)
        with self._connect() as conn:
            rows = conn.execute(stmt).all()
        return [json.loads(r[0]) for r in rows]

    # -- experiments --------------------------------------------------------

    def put_experiment(
        self,
        owner: str,
        name: str,
        context_ref: str,
        created_at: float,
        body: dict[str, Any],
        replace: bool = False,
    ) -> None:
        payload = json.dumps(body)
        with self._begin() as conn:
            if replace:
                result = conn.execute(
                    update(_experiments)
                    .where(_experiments.c.owner == owner, _experiments.c.name == name)
                    .values(body=payload)
                )
                if result.rowcount == 0:
                    raise NotFound(f"experiment {owner}/{name} not found")
            else:
                conn.execute(
                    _experiments.insert().values(
                        owner=owner,
                        name=name,
                        context_ref=context_ref,
                        created_at=created_at,
                        body=payload,
                    )
                )

    def get_experiment(self, owner: str, name: str) -> dict[str, Any]:
        with self._connect() as conn:
            row = conn.execute(
                select(_experiments.c.body).where(
                    _experiments.c.owner == owner, _experiments.c.name == name
                )
            ).first()
        if row is None:
            raise NotFound(f"experiment {owner}/{name} not found")
        return json.loads(row[0])

    def has_experiment(self, owner: str, name: str) -> bool:
        with self._connect() as conn:
            row = conn.execute(
                select(_experiments.c.owner).where(
                    _experiments.c.owner == owner, _experiments.c.name == name
                )
            ).first()
        return row is not None

    def list_experiments(self) -> list[dict[str, Any]]:
        stmt = select(_experiments.c.body).order_by(
            _experiments.c.created_at.desc(), _experiments.c.owner, _experiments.c.name
        )
        with self._connect() as conn:
            rows = conn.execute(stmt).all()
        return [json.loads(r[0]) for r in rows]

    def delete_experiment(self, owner: str, name: str) -> None:
        with self._begin() as conn:
            result = conn.execute(
                delete(_experiments).where(
                    _experiments.c.owner == owner, _experiments.c.name == name
                )
            )
        if result.rowcount == 0:
            raise NotFound(f"experiment {owner}/{name} not found")

    # -- contexts -----------------------------------------------------------

    def put_context(self, slug: str, body: dict[str, Any]) -> None:
        with self._begin() as conn:
            conn.execute(delete(_contexts).where(_contexts.c.slug == slug))
            conn.execute(_contexts.insert().values(slug=slug, body=json.dumps(body)))

    def get_context(self, slug: str) -> dict[str, Any]:
        with self._connect() as conn:
            row = conn.execute(select(_contexts.c.body).where(_contexts.c.slug == slug)).first()
        if row is None:
            raise NotFound(f"context {slug} not found")
        return json.loads(row[0])

    def list_contexts(self) -> list[dict[str, Any]]:
        with self._connect() as conn:
            rows = conn.execute(select(_contexts.c.body).order_by(_contexts.c.slug)).all()
        return [json.loads(r[0]) for r in rows]

    # -- api keys -----------------------------------------------------------

    def put_api_key(self, token: str, body: dict[str, Any]) -> None:
        with self._begin() as conn:
            conn.execute(delete(_api_keys).where(_api_keys.c.token == token))
            conn.execute(_api_keys.insert().values(token=token, body=json.dumps(body)))

    def get_api_key(self, token: str) -> dict[str, Any]:
        with self._connect() as conn:
            row = conn.execute(select(_api_keys.c.body).where(_api_keys.c.token == token)).first()
        if row is None:
            raise NotFound("api key not found")
        return json.loads(row[0])

    # -- quota definitions ----------------------------------------------------

    def put_quota(self, scope: str, name: str, body: dict[str, Any]) -> None:
        with self._begin() as conn:
            conn.execute(
                delete(_quotas).where(_quotas.c.scope == scope, _quotas.c.name == name)
            )
            conn.execute(
                _quotas.insert().values(scope=scope, name=name, body=json.dumps(body))
            )

    def get_quota(self, scope: str, name: str) -> Optional[dict[str, Any]]:
        with self._connect() as conn:
            row = conn.execute(
                select(_quotas.c.body).where(_quotas.c.scope == scope, _quotas.c.name == name)
            ).first()
        return json.loads(row[0]) if row is not None else None

    # -- test support ---------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        """Full dump of every table; used by tests to prove GETs mutate nothing."""
        out: dict[str, Any] = {}
        with self._connect() as conn:
            for name, table in _TABLES.items():
                rows = conn.execute(select(table).order_by(*table.primary_key.columns)).all()
                out[name] = [tuple(row) for row in rows]
        return out

    def _execute(self, stmt: Any, conn: Optional[Connection]) -> Any:
        if conn is not None:
            return conn.execute(stmt)
        with self._begin() as own:
            return own.execute(stmt)
