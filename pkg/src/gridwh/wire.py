"""Envelope RPC protocol.

A client stub marshals a method call into a JSON envelope; the server tie
unmarshals it, dispatches to a handler, and answers with a result or fault
envelope.  Marshalling is canonical: schema keys appear in schema order,
payload map keys are sorted, and no insignificant whitespace is emitted, so
equal inputs always produce byte-identical envelopes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping
from urllib.parse import urlsplit

log = logging.getLogger(__name__)

# Payload values: str | int | float | bool | None | list | dict[str, Value]
Value = Any

MAX_ENVELOPE_BYTES = 16 * 1024 * 1024
MAX_VALUE_DEPTH = 32
_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1

FAULT_CODES = frozenset(
    {
        "bad-request",
        "parse-error",
        "unknown-method",
        "unknown-service",
        "unknown-dataset",
        "access-denied",
        "session-expired",
        "dialect-unsupported",
        "backend-failure",
        "unreachable",
        "timeout",
        "registry-unavailable",
    }
)

REGISTRY_SERVICE = "registry"


@dataclass(frozen=True)
class Fault:
    """Application-level failure carried inside a response envelope."""

    code: str
    message: str
    detail: dict[str, Value] | None = None


class FaultError(Exception):
    """Raisable wrapper around a Fault for in-process control flow."""

    def __init__(self, code: str, message: str, detail: dict[str, Value] | None = None):
        super().__init__(f"{code}: {message}")
        self.fault = Fault(code, message, detail)

    @classmethod
    def from_fault(cls, fault: Fault) -> "FaultError":
        return cls(fault.code, fault.message, fault.detail)


@dataclass
class MethodCall:
    """One method invocation addressed to a service key (or "registry")."""

    id: str
    service: str
    method: str
    params: dict[str, Value] = field(default_factory=dict)
    session: str | None = None
    token: str | None = None


@dataclass
class MethodResult:
    id: str
    result: Value


@dataclass(frozen=True)
class Endpoint:
    """Network address of an envelope RPC service: http://host:port/rpc."""

    url: str

    def __post_init__(self) -> None:
        parts = urlsplit(self.url)
        try:
            port = parts.port
        except ValueError:
            port = None
        if (
            parts.scheme != "http"
            or not parts.hostname
            or port is None
            or not 1 <= port <= 65535
            or parts.path != "/rpc"
            or parts.query
            or parts.fragment
        ):
            raise FaultError("bad-request", f"invalid endpoint url: {self.url!r}")

    @property
    def host(self) -> str:
        return urlsplit(self.url).hostname or ""

    @property
    def port(self) -> int:
        return urlsplit(self.url).port or 0

    @classmethod
    def of(cls, host: str, port: int) -> "Endpoint":
        return cls(f"http://{host}:{port}/rpc")


# A handler receives the parsed call and produces a result payload or a Fault;
# it may equally raise FaultError.
Handler = Callable[[MethodCall], Value]


def canonical_value(value: Value, _depth: int = 0) -> Value:
    """Validate a payload value and rebuild maps with sorted keys.

    Enforces the payload invariants: depth <= 32, string map keys, signed
    64-bit integers, finite reals.
    """
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, bool):  # bool before int: bool subclasses int
        return value
    if isinstance(value, int):
        if not _INT64_MIN <= value <= _INT64_MAX:
            raise FaultError("bad-request", f"integer out of 64-bit range: {value}")
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise FaultError("bad-request", f"non-finite real: {value!r}")
        return value
    if _depth >= MAX_VALUE_DEPTH:
        raise FaultError("bad-request", f"value nesting exceeds depth {MAX_VALUE_DEPTH}")
    if isinstance(value, (list, tuple)):
        return [canonical_value(item, _depth + 1) for item in value]
    if isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise FaultError("bad-request", f"map key is not a string: {key!r}")
        return {key: canonical_value(value[key], _depth + 1) for key in sorted(value)}
    raise FaultError("bad-request", f"unsupported value type: {type(value).__name__}")


def _dump(envelope: dict[str, Value]) -> bytes:
    data = json.dumps(envelope, ensure_ascii=False, separators=(",", ":"), allow_nan=False)
    raw = data.encode("utf-8")
    if len(raw) > MAX_ENVELOPE_BYTES:
        raise FaultError("bad-request", "envelope exceeds 16 MiB")
    return raw


def _checked_pairs(pairs: list[tuple[str, Value]]) -> dict[str, Value]:
    obj: dict[str, Value] = {}
    for key, val in pairs:
        if key in obj:
            raise FaultError("bad-request", f"duplicate map key: {key!r}")
        obj[key] = val
    return obj


def _load(data: bytes) -> Value:
    if len(data) > MAX_ENVELOPE_BYTES:
        raise FaultError("bad-request", "envelope exceeds 16 MiB")
    try:
        return json.loads(data.decode("utf-8"), object_pairs_hook=_checked_pairs)
    except FaultError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise FaultError("parse-error", f"malformed envelope: {exc}") from exc


def _field(obj: Value, key: str, where: str) -> Value:
    if not isinstance(obj, dict):
        raise FaultError("bad-request", f"{where} is not an object")
    if key not in obj:
        raise FaultError("bad-request", f"missing required field {key!r} in {where}")
    return obj[key]


def _str_field(obj: Value, key: str, where: str, nonempty: bool = True) -> str:
    value = _field(obj, key, where)
    if not isinstance(value, str) or (nonempty and not value):
        raise FaultError("bad-request", f"field {key!r} in {where} must be a nonempty string")
    return value


def _opt_str_field(obj: dict[str, Value], key: str, where: str) -> str | None:
    value = obj.get(key)
    if value is not None and not isinstance(value, str):
        raise FaultError("bad-request", f"field {key!r} in {where} must be a string or null")
    return value


def marshal_request(call: MethodCall) -> bytes:
    """Render a method call as canonical request envelope bytes."""
    for name, value in (("id", call.id), ("service", call.service), ("method", call.method)):
        if not isinstance(value, str) or not value:
            raise FaultError("bad-request", f"call {name} must be a nonempty string")
    for name, value in (("session", call.session), ("token", call.token)):
        if value is not None and not isinstance(value, str):
            raise FaultError("bad-request", f"call {name} must be a string or null")
    if not isinstance(call.params, dict):
        raise FaultError("bad-request", "call params must be a map")
    return _dump(
        {
            "envelope": {
                "header": {
                    "id": call.id,
                    "service": call.service,
                    "session": call.session,
                    "token": call.token,
                },
                "body": {"method": call.method, "params": canonical_value(call.params)},
            }
        }
    )


def unmarshal_request(data: bytes) -> MethodCall:
    """Parse request envelope bytes, ignoring unknown fields (tolerant reader)."""
    root = _load(data)
    envelope = _field(root, "envelope", "request")
    header = _field(envelope, "header", "envelope")
    body = _field(envelope, "body", "envelope")
    if not isinstance(header, dict):
        raise FaultError("bad-request", "envelope header is not an object")
    params = _field(body, "params", "body")
    if not isinstance(params, dict):
        raise FaultError("bad-request", "field 'params' in body must be a map")
    return MethodCall(
        id=_str_field(header, "id", "header"),
        service=_str_field(header, "service", "header"),
        method=_str_field(body, "method", "body"),
        params=canonical_value(params),
        session=_opt_str_field(header, "session", "header"),
        token=_opt_str_field(header, "token", "header"),
    )


def marshal_response(id: str, outcome: MethodResult | Fault) -> bytes:
    """Render a result or fault as canonical response envelope bytes."""
    if not isinstance(id, str) or not id:
        raise FaultError("bad-request", "response id must be a nonempty string")
    if isinstance(outcome, MethodResult):
        body: dict[str, Value] = {"result": canonical_value(outcome.result)}
    elif isinstance(outcome, Fault):
        if outcome.code not in FAULT_CODES:
            raise FaultError("bad-request", f"unknown fault code: {outcome.code!r}")
        if not isinstance(outcome.message, str):
            raise FaultError("bad-request", "fault message must be a string")
        detail = canonical_value(outcome.detail) if outcome.detail is not None else None
        if detail is not None and not isinstance(detail, dict):
            raise FaultError("bad-request", "fault detail must be a map or null")
        body = {"fault": {"code": outcome.code, "message": outcome.message, "detail": detail}}
    else:
        raise FaultError("bad-request", f"unsupported outcome type: {type(outcome).__name__}")
    return _dump({"envelope": {"header": {"id": id}, "body": body}})


def unmarshal_response(data: bytes) -> MethodResult | Fault:
    """Parse response envelope bytes into exactly one of result or fault."""
    root = _load(data)
    envelope = _field(root, "envelope", "response")
    header = _field(envelope, "header", "envelope")
    body = _field(envelope, "body", "envelope")
    id = _str_field(header, "id", "header")
    if not isinstance(body, dict):
        raise FaultError("bad-request", "envelope body is not an object")
    has_result = "result" in body
    has_fault = "fault" in body
    if has_result == has_fault:
        raise FaultError("bad-request", "body must carry exactly one of result/fault")
    if has_result:
        return MethodResult(id=id, result=canonical_value(body["result"]))
    fault_obj = body["fault"]
    if not isinstance(fault_obj, dict):
        raise FaultError("bad-request", "fault body is not an object")
    code = _str_field(fault_obj, "code", "fault")
    if code not in FAULT_CODES:
        raise FaultError("bad-request", f"unknown fault code: {code!r}")
    message = _field(fault_obj, "message", "fault")
    if not isinstance(message, str):
        raise FaultError("bad-request", "fault message must be a string")
    detail = fault_obj.get("detail")
    if detail is not None:
        detail = canonical_value(detail)
        if not isinstance(detail, dict):
            raise FaultError("bad-request", "fault detail must be a map or null")
    return Fault(code=code, message=message, detail=detail)


def _salvage_id(data: bytes) -> str:
    """Best-effort extraction of the request id from arbitrary bytes."""
    try:
        root = json.loads(data.decode("utf-8"))
        rid = root["envelope"]["header"]["id"]
        if isinstance(rid, str) and rid:
            return rid
    except Exception:
        pass
    return "unknown"


def dispatch(handlers: Mapping[str, Handler], request_bytes: bytes) -> bytes:
    """Server tie: route request bytes to a handler, always answer an envelope.

    The handler table must be fixed before serving begins; dispatch itself is
    safe under concurrent calls.  Every failure mode becomes a fault envelope.
    """
    try:
        call = unmarshal_request(request_bytes)
    except FaultError as err:
        return marshal_response(_salvage_id(request_bytes), err.fault)

    handler = handlers.get(call.method)
    if handler is None:
        outcome: MethodResult | Fault = Fault(
            "unknown-method", f"no handler for method {call.method!r}", {"method": call.method}
        )
    else:
        try:
            returned = handler(call)
            if isinstance(returned, Fault):
                outcome = returned
            else:
                outcome = MethodResult(call.id, returned)
        except FaultError as err:
            outcome = err.fault
        except Exception:
            log.exception("handler %r crashed", call.method)
            outcome = Fault("backend-failure", f"internal error in method {call.method!r}")

    try:
        return marshal_response(call.id, outcome)
    except FaultError:
        # Handler produced an unserializable payload; stay total.
        return marshal_response(call.id, Fault("backend-failure", "unserializable result"))
