"""HTTP transport for the envelope protocol.

`invoke` is the blocking client stub; `RpcServer` hosts a dispatch table at
POST /rpc on a threaded HTTP/1.1 server.  Application faults always travel in
200 responses; non-200 status is reserved for transport-level failures.
"""

from __future__ import annotations

import http.client
import logging
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping

from .wire import (
    MAX_ENVELOPE_BYTES,
    Endpoint,
    Fault,
    FaultError,
    Handler,
    MethodCall,
    MethodResult,
    dispatch,
    marshal_request,
    marshal_response,
    unmarshal_response,
)

log = logging.getLogger(__name__)


def invoke(endpoint: Endpoint, call: MethodCall, timeout_ms: int) -> MethodResult | Fault:
    """POST a marshalled call to an endpoint and return the unmarshalled outcome.

    Transport failures come back as local Fault values (unreachable, timeout),
    unintelligible responses as parse-error; the caller never sees exceptions
    for remote trouble.
    """
    if timeout_ms <= 0:
        raise FaultError("bad-request", "timeout_ms must be positive")
    data = marshal_request(call)
    deadline = time.monotonic() + timeout_ms / 1000.0
    conn = http.client.HTTPConnection(endpoint.host, endpoint.port, timeout=timeout_ms / 1000.0)
    try:
        try:
            conn.request(
                "POST", "/rpc", body=data, headers={"Content-Type": "application/json"}
            )
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return Fault("timeout", f"no response within {timeout_ms} ms")
            if conn.sock is not None:
                conn.sock.settimeout(remaining)
            response = conn.getresponse()
            body = response.read()
        except socket.timeout:
            return Fault("timeout", f"no response within {timeout_ms} ms")
        except (ConnectionError, OSError) as exc:
            return Fault("unreachable", f"cannot reach {endpoint.url}: {exc}")
    finally:
        conn.close()

    if response.status != 200:
        # Non-200 is transport-level by protocol convention: not an RPC peer.
        return Fault(
            "unreachable",
            f"endpoint {endpoint.url} answered HTTP {response.status}",
            {"status": response.status},
        )
    try:
        outcome = unmarshal_response(body)
    except FaultError as err:
        return Fault("parse-error", f"unintelligible response: {err.fault.message}")
    if isinstance(outcome, MethodResult) and outcome.id != call.id:
        return Fault(
            "parse-error",
            f"response id {outcome.id!r} does not match request id {call.id!r}",
        )
    return outcome


def _make_handler_class(
    handlers: Mapping[str, Handler], delay_ms: int
) -> type[BaseHTTPRequestHandler]:
    table = dict(handlers)  # immutable after server start

    class _RpcHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_POST(self) -> None:  # noqa: N802 (http.server API)
            if self.path != "/rpc":
                self.send_error(404, "no such path")
                return
            length_header = self.headers.get("Content-Length")
            if length_header is None:
                self.send_error(411, "length required")
                return
            try:
                length = int(length_header)
            except ValueError:
                self.send_error(400, "bad content length")
                return
            if length > MAX_ENVELOPE_BYTES:
                self._reply(
                    marshal_response(
                        "unknown", Fault("bad-request", "envelope exceeds 16 MiB")
                    )
                )
                return
            body = self.rfile.read(length)
            if delay_ms > 0:
                time.sleep(delay_ms / 1000.0)
            self._reply(dispatch(table, body))

        def do_GET(self) -> None:  # noqa: N802
            self.send_error(405, "method not allowed")

        def _reply(self, payload: bytes) -> None:
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, format: str, *args) -> None:
            log.debug("%s - %s", self.address_string(), format % args)

    return _RpcHandler


class RpcServer:
    """Threaded HTTP server exposing one dispatch table at /rpc.

    Binding happens at construction (port 0 picks a free port), so the real
    endpoint is known before `start`.  An optional wire-level delay before
    each response supports deterministic latency experiments.
    """

    def __init__(
        self,
        host: str,
        port: int,
        handlers: Mapping[str, Handler],
        delay_ms: int = 0,
    ):
        self._httpd = ThreadingHTTPServer(
            (host, port), _make_handler_class(handlers, delay_ms)
        )
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> Endpoint:
        host, port = self._httpd.server_address[:2]
        return Endpoint.of(str(host), int(port))

    def start(self) -> "RpcServer":
        if self._thread is not None:
            return self
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name=f"rpc@{self.endpoint.url}", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self._httpd.server_close()

    def __enter__(self) -> "RpcServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
