"""Service registry: publish / find / deregister over a document store.

Each registered service is one JSON document `<serviceKey>.json` under the
store directory, written atomically (temp file + rename).  The in-memory map
mirrors the set of valid documents; mutations are serialized, finds filter a
consistent snapshot.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .transport import invoke
from .wire import (
    REGISTRY_SERVICE,
    Endpoint,
    Fault,
    FaultError,
    Handler,
    MethodCall,
    MethodResult,
    Value,
)

log = logging.getLogger(__name__)

SERVICE_KEY_RE = re.compile(r"[a-z0-9-]{1,64}\Z")
UDDI_VERSION = "2.00"


@dataclass(frozen=True)
class DatasetEntry:
    """One dataset offered by a service, with an optional size hint."""

    name: str
    approx_rows: int | None = None

    def validate(self) -> None:
        if not self.name or any(ch.isspace() for ch in self.name):
            raise FaultError("bad-request", f"invalid dataset name: {self.name!r}")
        if self.approx_rows is not None and (
            isinstance(self.approx_rows, bool)
            or not isinstance(self.approx_rows, int)
            or self.approx_rows < 0
        ):
            raise FaultError("bad-request", f"approxRows must be a nonnegative integer")

    def to_value(self) -> dict[str, Value]:
        return {"name": self.name, "approxRows": self.approx_rows}

    @classmethod
    def from_value(cls, value: Value) -> "DatasetEntry":
        if not isinstance(value, dict) or not isinstance(value.get("name"), str):
            raise FaultError("bad-request", "dataset entry must be a map with a name")
        entry = cls(name=value["name"], approx_rows=value.get("approxRows"))
        entry.validate()
        return entry


@dataclass(frozen=True)
class ServiceDescriptor:
    """Registry record for one database service (WSDL/UDDI analog)."""

    service_key: str
    provider_name: str
    description: str
    endpoint: Endpoint
    datasets: tuple[DatasetEntry, ...]
    dialect: str
    operations: tuple[str, ...]
    auth_required: bool
    published_at: int = 0

    def validate(self) -> None:
        if not isinstance(self.service_key, str) or not SERVICE_KEY_RE.fullmatch(self.service_key):
            raise FaultError("bad-request", f"invalid serviceKey: {self.service_key!r}")
        if not self.datasets:
            raise FaultError("bad-request", "descriptor must list at least one dataset")
        names = [entry.name for entry in self.datasets]
        if len(set(names)) != len(names):
            raise FaultError("bad-request", "dataset names must be unique in a descriptor")
        for entry in self.datasets:
            entry.validate()
        for text_field in (self.provider_name, self.description, self.dialect):
            if not isinstance(text_field, str):
                raise FaultError("bad-request", "descriptor text fields must be strings")
        if not isinstance(self.auth_required, bool):
            raise FaultError("bad-request", "authRequired must be a boolean")
        if isinstance(self.published_at, bool) or not isinstance(self.published_at, int) or self.published_at < 0:
            raise FaultError("bad-request", "publishedAt must be a nonnegative integer")

    def dataset_names(self) -> tuple[str, ...]:
        return tuple(entry.name for entry in self.datasets)

    def to_value(self) -> dict[str, Value]:
        return {
            "serviceKey": self.service_key,
            "providerName": self.provider_name,
            "description": self.description,
            "endpoint": self.endpoint.url,
            "datasets": [entry.to_value() for entry in self.datasets],
            "dialect": self.dialect,
            "operations": list(self.operations),
            "authRequired": self.auth_required,
            "publishedAt": self.published_at,
        }

    @classmethod
    def from_value(cls, value: Value) -> "ServiceDescriptor":
        if not isinstance(value, dict):
            raise FaultError("bad-request", "descriptor must be a map")
        endpoint_url = value.get("endpoint")
        if not isinstance(endpoint_url, str):
            raise FaultError("bad-request", "descriptor endpoint must be a url string")
        datasets = value.get("datasets")
        if not isinstance(datasets, list):
            raise FaultError("bad-request", "descriptor datasets must be a list")
        operations = value.get("operations", [])
        if not isinstance(operations, list) or not all(isinstance(op, str) for op in operations):
            raise FaultError("bad-request", "descriptor operations must be a list of strings")
        descriptor = cls(
            service_key=value.get("serviceKey", ""),
            provider_name=value.get("providerName", ""),
            description=value.get("description", ""),
            endpoint=Endpoint(endpoint_url),
            datasets=tuple(DatasetEntry.from_value(entry) for entry in datasets),
            dialect=value.get("dialect", ""),
            operations=tuple(operations),
            auth_required=value.get("authRequired", False),
            published_at=value.get("publishedAt", 0),
        )
        descriptor.validate()
        return descriptor


@dataclass(frozen=True)
class FindQuery:
    """Registry lookup: dataset name (trailing `*` = prefix) and/or exact key."""

    dataset_name: str | None = None
    service_key: str | None = None

    def validate(self) -> None:
        if self.dataset_name is None and self.service_key is None:
            raise FaultError("bad-request", "find query must name a dataset or a serviceKey")
        if self.dataset_name is not None:
            if not isinstance(self.dataset_name, str) or not self.dataset_name:
                raise FaultError("bad-request", "datasetName must be a nonempty string")
            if "*" in self.dataset_name[:-1]:
                raise FaultError("bad-request", "`*` is only permitted as the final character")
        if self.service_key is not None and not isinstance(self.service_key, str):
            raise FaultError("bad-request", "serviceKey must be a string")

    def matches(self, descriptor: ServiceDescriptor) -> bool:
        if self.service_key is not None and descriptor.service_key != self.service_key:
            return False
        if self.dataset_name is not None:
            names = descriptor.dataset_names()
            if self.dataset_name.endswith("*"):
                prefix = self.dataset_name[:-1]
                if not any(name.startswith(prefix) for name in names):
                    return False
            elif self.dataset_name not in names:
                return False
        return True

    def to_value(self) -> dict[str, Value]:
        return {"datasetName": self.dataset_name, "serviceKey": self.service_key}

    @classmethod
    def from_value(cls, value: Value) -> "FindQuery":
        if not isinstance(value, dict):
            raise FaultError("bad-request", "find query must be a map")
        query = cls(dataset_name=value.get("datasetName"), service_key=value.get("serviceKey"))
        query.validate()
        return query


class Registry:
    """Registry state: in-memory record map plus its document store directory."""

    def __init__(self, store_path: str | Path, admin_token: str, clock: Callable[[], float] = time.time):
        self.store_path = Path(store_path)
        self.admin_token = admin_token
        self._clock = clock
        self._lock = threading.RLock()
        self.records: dict[str, ServiceDescriptor] = {}
        self._load()

    def _load(self) -> None:
        if not self.store_path.is_dir():
            raise OSError(f"registry store is not a directory: {self.store_path}")
        for doc_path in sorted(self.store_path.glob("*.json")):
            try:
                raw = json.loads(doc_path.read_text(encoding="utf-8"))
                descriptor = ServiceDescriptor.from_value(raw)
            except (OSError, ValueError, FaultError) as exc:
                log.warning("skipping corrupt registry document %s: %s", doc_path.name, exc)
                continue
            if descriptor.service_key != doc_path.stem:
                log.warning(
                    "skipping registry document %s: key %r does not match filename",
                    doc_path.name,
                    descriptor.service_key,
                )
                continue
            self.records[descriptor.service_key] = descriptor

    def _document_path(self, service_key: str) -> Path:
        return self.store_path / f"{service_key}.json"

    def _persist(self, descriptor: ServiceDescriptor) -> None:
        payload = json.dumps(descriptor.to_value(), indent=2)
        fd, tmp_name = tempfile.mkstemp(
            dir=self.store_path, prefix=f".{descriptor.service_key}.", suffix=".tmp"
        )
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(payload)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, self._document_path(descriptor.service_key))
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise

    def _check_token(self, token: str | None) -> None:
        if token != self.admin_token:
            raise FaultError("access-denied", "admin token does not match")

    def publish(self, descriptor: ServiceDescriptor, admin_token: str | None) -> str:
        """Upsert a descriptor; the record is durable before this returns."""
        with self._lock:
            self._check_token(admin_token)
            descriptor.validate()
            stamped = ServiceDescriptor(
                service_key=descriptor.service_key,
                provider_name=descriptor.provider_name,
                description=descriptor.description,
                endpoint=descriptor.endpoint,
                datasets=descriptor.datasets,
                dialect=descriptor.dialect,
                operations=descriptor.operations,
                auth_required=descriptor.auth_required,
                published_at=int(self._clock()),
            )
            self._persist(stamped)
            self.records[stamped.service_key] = stamped
            return stamped.service_key

    def find(self, query: FindQuery) -> list[ServiceDescriptor]:
        query.validate()
        with self._lock:
            snapshot = list(self.records.values())
        matched = [descriptor for descriptor in snapshot if query.matches(descriptor)]
        matched.sort(key=lambda descriptor: descriptor.service_key)
        return matched

    def deregister(self, service_key: str, admin_token: str | None) -> dict[str, Value]:
        with self._lock:
            self._check_token(admin_token)
            if service_key not in self.records:
                raise FaultError(
                    "unknown-service", f"no such serviceKey: {service_key!r}", {"serviceKey": service_key}
                )
            doc = self._document_path(service_key)
            if doc.exists():
                doc.unlink()
            del self.records[service_key]
            return {"removed": service_key}

    def info(self) -> dict[str, Value]:
        with self._lock:
            return {"uddiVersion": UDDI_VERSION, "serviceCount": len(self.records)}

    def handlers(self) -> dict[str, Handler]:
        """Dispatch table for serving this registry over the wire."""

        def guard(call: MethodCall) -> None:
            if call.service != REGISTRY_SERVICE:
                raise FaultError(
                    "unknown-service", f"this endpoint serves {REGISTRY_SERVICE!r}, not {call.service!r}"
                )

        def do_publish(call: MethodCall) -> Value:
            guard(call)
            if "descriptor" not in call.params:
                raise FaultError("bad-request", "publish requires a descriptor param")
            descriptor = ServiceDescriptor.from_value(call.params["descriptor"])
            token = call.params.get("token", call.token)
            return self.publish(descriptor, token)

        def do_find(call: MethodCall) -> Value:
            guard(call)
            if "query" not in call.params:
                raise FaultError("bad-request", "find requires a query param")
            query = FindQuery.from_value(call.params["query"])
            return [descriptor.to_value() for descriptor in self.find(query)]

        def do_deregister(call: MethodCall) -> Value:
            guard(call)
            service_key = call.params.get("serviceKey")
            if not isinstance(service_key, str) or not service_key:
                raise FaultError("bad-request", "deregister requires a serviceKey param")
            token = call.params.get("token", call.token)
            return self.deregister(service_key, token)

        def do_info(call: MethodCall) -> Value:
            guard(call)
            return self.info()

        return {"publish": do_publish, "find": do_find, "deregister": do_deregister, "info": do_info}


def open_repository(path: str | Path, admin_token: str) -> Registry:
    """Load every valid `<serviceKey>.json` document; corrupt ones are skipped."""
    return Registry(path, admin_token)


def _registry_call(
    registry_url: Endpoint, method: str, params: dict[str, Value], timeout_ms: int
) -> Value:
    call = MethodCall(id=uuid.uuid4().hex, service=REGISTRY_SERVICE, method=method, params=params)
    outcome = invoke(registry_url, call, timeout_ms)
    if isinstance(outcome, Fault):
        raise FaultError.from_fault(outcome)
    assert isinstance(outcome, MethodResult)
    return outcome.result


def remote_publish(
    registry_url: Endpoint,
    descriptor: ServiceDescriptor,
    admin_token: str,
    timeout_ms: int = 5000,
) -> str:
    result = _registry_call(
        registry_url,
        "publish",
        {"descriptor": descriptor.to_value(), "token": admin_token},
        timeout_ms,
    )
    if not isinstance(result, str):
        raise FaultError("parse-error", "publish did not return a serviceKey")
    return result


def remote_find(
    registry_url: Endpoint, query: FindQuery, timeout_ms: int = 5000
) -> list[ServiceDescriptor]:
    result = _registry_call(registry_url, "find", {"query": query.to_value()}, timeout_ms)
    if not isinstance(result, list):
        raise FaultError("parse-error", "find did not return a list")
    return [ServiceDescriptor.from_value(item) for item in result]


def remote_deregister(
    registry_url: Endpoint, service_key: str, admin_token: str, timeout_ms: int = 5000
) -> Value:
    return _registry_call(
        registry_url, "deregister", {"serviceKey": service_key, "token": admin_token}, timeout_ms
    )


def remote_info(registry_url: Endpoint, timeout_ms: int = 5000) -> Value:
    return _registry_call(registry_url, "info", {}, timeout_ms)
