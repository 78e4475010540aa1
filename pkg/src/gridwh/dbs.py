"""Grid data service: one relational backend behind a standard surface.

Every service exposes the same four methods — createSession, execute,
describe, ping — regardless of the vendor dialect underneath.  execute runs
the full mediation pipeline on every call: the canonical grammar is parsed,
translated into this service's dialect, and handed to a backend that accepts
only that dialect.  Sessions are leases with a TTL; ping needs neither
session nor token so it can serve as a probe target.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .registry import DatasetEntry, ServiceDescriptor, SERVICE_KEY_RE
from .sql import get_dialect, parse, parse_query, translate
from .tables import Column, ResultSet, Table, TableStore, execute_canonical, load_table
from .wire import Endpoint, FaultError, Handler, MethodCall, Value

DEFAULT_SESSION_TTL_SECONDS = 600

# The standardized operation set, with wire-level signatures for describe.
OPERATION_SIGNATURES: dict[str, list[tuple[str, str]]] = {
    "createSession": [("token", "string")],
    "describe": [],
    "execute": [("sql", "string")],
    "ping": [],
}


@dataclass(frozen=True)
class SessionHandle:
    """Lease on a service instance; expired handles are rejected everywhere."""

    session_id: str
    service_key: str
    created_at: float
    ttl_seconds: int = DEFAULT_SESSION_TTL_SECONDS

    def to_value(self) -> dict[str, Value]:
        return {
            "sessionId": self.session_id,
            "serviceKey": self.service_key,
            "createdAt": self.created_at,
            "ttlSeconds": self.ttl_seconds,
        }

    @classmethod
    def from_value(cls, value: Value) -> "SessionHandle":
        if not isinstance(value, dict) or not isinstance(value.get("sessionId"), str):
            raise FaultError("parse-error", "malformed session handle")
        return cls(
            session_id=value["sessionId"],
            service_key=value.get("serviceKey", ""),
            created_at=value.get("createdAt", 0.0),
            ttl_seconds=value.get("ttlSeconds", DEFAULT_SESSION_TTL_SECONDS),
        )


class SessionTable:
    """Session leases for one service; create/validate/expire are atomic.

    Session ids embed the owning service key ahead of 128 bits of randomness,
    so a handle presented to the wrong service is recognizably foreign
    (access-denied) rather than merely unknown (session-expired).
    """

    def __init__(
        self,
        service_key: str,
        clock: Callable[[], float] = time.time,
        ttl_seconds: int = DEFAULT_SESSION_TTL_SECONDS,
    ):
        self._service_key = service_key
        self._clock = clock
        self._ttl = ttl_seconds
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionHandle] = {}

    def create(self) -> SessionHandle:
        handle = SessionHandle(
            session_id=f"{self._service_key}.{secrets.token_hex(16)}",
            service_key=self._service_key,
            created_at=self._clock(),
            ttl_seconds=self._ttl,
        )
        with self._lock:
            self._sessions[handle.session_id] = handle
        return handle

    def check(self, session_id: str | None) -> SessionHandle:
        if not session_id:
            raise FaultError("session-expired", "no session supplied")
        owner = session_id.split(".", 1)[0]
        if "." in session_id and owner != self._service_key:
            raise FaultError(
                "access-denied",
                f"session belongs to service {owner!r}, not {self._service_key!r}",
            )
        now = self._clock()
        with self._lock:
            handle = self._sessions.get(session_id)
            if handle is not None and now > handle.created_at + handle.ttl_seconds:
                del self._sessions[session_id]
                handle = None
        if handle is None:
            raise FaultError("session-expired", "session is unknown or expired")
        return handle


@dataclass
class TableSpec:
    name: str
    schema: list[Column]
    csv: str


@dataclass
class DbsConfig:
    """Service configuration, loadable from the JSON config file format."""

    service_key: str
    host: str
    port: int
    dialect: str
    tables: list[TableSpec] = field(default_factory=list)
    auth_required: bool = False
    access_token: str | None = None
    registry_url: str | None = None
    auto_publish: bool = False
    injected_delay_ms: int = 0
    provider_name: str = ""
    description: str = ""

    @classmethod
    def from_value(cls, value: Value, base_dir: Path | None = None) -> "DbsConfig":
        if not isinstance(value, dict):
            raise FaultError("bad-request", "service config must be a map")
        listen = value.get("listen", "")
        host, _, port_text = str(listen).rpartition(":")
        if not host or not port_text.isdigit():
            raise FaultError("bad-request", f"config listen must be host:port, got {listen!r}")
        tables = []
        for entry in value.get("tables", []):
            schema = [Column.from_value(col) for col in entry.get("schema", [])]
            csv_path = entry.get("csv", "")
            if base_dir is not None and not Path(csv_path).is_absolute():
                csv_path = str(base_dir / csv_path)
            tables.append(TableSpec(name=entry.get("name", ""), schema=schema, csv=csv_path))
        config = cls(
            service_key=value.get("serviceKey", ""),
            host=host,
            port=int(port_text),
            dialect=value.get("dialect", ""),
            tables=tables,
            auth_required=bool(value.get("authRequired", False)),
            access_token=value.get("accessToken"),
            registry_url=value.get("registryUrl"),
            auto_publish=bool(value.get("autoPublish", False)),
            injected_delay_ms=int(value.get("injectedDelayMs", 0)),
            provider_name=value.get("providerName", ""),
            description=value.get("description", ""),
        )
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "DbsConfig":
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_value(raw, base_dir=path.parent)

    def validate(self) -> None:
        if not SERVICE_KEY_RE.fullmatch(self.service_key or ""):
            raise FaultError("bad-request", f"invalid serviceKey: {self.service_key!r}")
        get_dialect(self.dialect)
        if not self.tables:
            raise FaultError("bad-request", "service config must declare at least one table")
        if self.auth_required and not self.access_token:
            raise FaultError("bad-request", "authRequired service needs an accessToken")


class DeskBackend:
    """Built-in backend: parses ONLY its own dialect, then runs the engine.

    Adapters for real external engines implement the same `execute` contract;
    this seam is where a vendor driver would plug in.
    """

    def __init__(self, dialect: str, store: TableStore):
        self.dialect = get_dialect(dialect)
        self._store = store

    def execute(self, dialect_text: str) -> ResultSet:
        query = parse(dialect_text, self.dialect)
        return execute_canonical(query, self._store)


class DbsService:
    """One database service instance: table store, sessions, dispatch surface."""

    def __init__(
        self,
        config: DbsConfig,
        clock: Callable[[], float] = time.time,
        backend: DeskBackend | None = None,
    ):
        config.validate()
        self.config = config
        self._clock = clock
        self.store = TableStore(
            load_table(spec.csv, spec.schema, spec.name) for spec in config.tables
        )
        self.backend = backend or DeskBackend(config.dialect, self.store)
        self.sessions = SessionTable(config.service_key, clock)
        self.endpoint: Endpoint | None = None  # set once served

    @property
    def service_key(self) -> str:
        return self.config.service_key

    def create_session(self, token: str | None) -> SessionHandle:
        if self.config.auth_required and token != self.config.access_token:
            raise FaultError("access-denied", "access token does not match")
        return self.sessions.create()

    def execute(self, session_id: str | None, query_text: str) -> ResultSet:
        self.sessions.check(session_id)
        query = parse_query(query_text)
        dialect_text = translate(query, self.config.dialect)
        return self.backend.execute(dialect_text)

    def describe(self) -> dict[str, Value]:
        operations = [
            {
                "name": name,
                "params": [{"name": p, "type": t} for p, t in OPERATION_SIGNATURES[name]],
            }
            for name in sorted(OPERATION_SIGNATURES)
        ]
        return {"descriptor": self.descriptor().to_value(), "operations": operations}

    def ping(self) -> dict[str, Value]:
        return {"pong": self._clock()}

    def descriptor(self, endpoint: Endpoint | None = None) -> ServiceDescriptor:
        endpoint = endpoint or self.endpoint
        if endpoint is None:
            # Not yet bound to a port: advertise the configured address.
            endpoint = Endpoint.of(self.config.host, self.config.port)
        datasets = tuple(
            DatasetEntry(name=name, approx_rows=len(self.store.get(name).rows))
            for name in self.store.names()
        )
        return ServiceDescriptor(
            service_key=self.config.service_key,
            provider_name=self.config.provider_name or self.config.service_key,
            description=self.config.description,
            endpoint=endpoint,
            datasets=datasets,
            dialect=self.config.dialect,
            operations=tuple(sorted(OPERATION_SIGNATURES)),
            auth_required=self.config.auth_required,
            published_at=int(self._clock()),
        )

    def handlers(self) -> dict[str, Handler]:
        """Dispatch table; ping skips the routing guard so probes stay cheap."""

        def guard(call: MethodCall) -> None:
            if call.service != self.service_key:
                raise FaultError(
                    "unknown-service",
                    f"this endpoint serves {self.service_key!r}, not {call.service!r}",
                )

        def do_create_session(call: MethodCall) -> Value:
            guard(call)
            token = call.params.get("token", call.token)
            if token is not None and not isinstance(token, str):
                raise FaultError("bad-request", "token must be a string or null")
            return self.create_session(token).to_value()

        def do_execute(call: MethodCall) -> Value:
            guard(call)
            sql = call.params.get("sql")
            if not isinstance(sql, str):
                raise FaultError("bad-request", "execute requires an sql param")
            return self.execute(call.session, sql).to_value()

        def do_describe(call: MethodCall) -> Value:
            guard(call)
            return self.describe()

        def do_ping(call: MethodCall) -> Value:
            return self.ping()

        return {
            "createSession": do_create_session,
            "execute": do_execute,
            "describe": do_describe,
            "ping": do_ping,
        }
