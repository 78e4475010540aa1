"""Service requestor: locate a dataset, pick the best endpoint, bind, query.

Failure handling splits faults in two classes.  Transport faults (unreachable,
timeout) are marked against the endpoint and the next-ranked candidate is
tried, up to maxAttempts.  Application faults are deterministic and would
recur, so they surface immediately; the single exception is session-expired,
which triggers exactly one transparent re-bind.  Surfaced faults carry the
attempt count in their detail.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable

from .dbs import SessionHandle
from .monitor import LatencySample, Monitor, select_optimal
from .registry import FindQuery, ServiceDescriptor, remote_find
from .tables import ResultSet
from .transport import invoke
from .wire import Endpoint, Fault, FaultError, MethodCall, MethodResult, Value

log = logging.getLogger(__name__)

TRANSPORT_FAULT_CODES = frozenset({"unreachable", "timeout"})


@dataclass(frozen=True)
class QueryOptions:
    timeout_ms: int = 5000
    max_attempts: int = 3
    token: str | None = None

    def validate(self) -> None:
        if self.timeout_ms <= 0 or self.max_attempts < 1:
            raise FaultError("bad-request", "timeout_ms and maxAttempts must be positive")


@dataclass
class BoundService:
    descriptor: ServiceDescriptor
    session: SessionHandle
    last_used: float


@dataclass(frozen=True)
class QueryOutcome:
    """Rows plus provenance: which site served, at which endpoint, how many tries."""

    result_set: ResultSet
    served_by: str
    endpoint: Endpoint
    attempts: int


def _with_attempts(fault: Fault, attempts: int) -> FaultError:
    detail = dict(fault.detail or {})
    detail["attempts"] = attempts
    return FaultError(fault.code, fault.message, detail)


class Broker:
    """Client side of the publish/find/bind triangle, with session caching."""

    def __init__(self, monitor: Monitor | None = None, clock: Callable[[], float] = time.time):
        self.monitor = monitor or Monitor()
        self._clock = clock
        self._lock = threading.Lock()
        self._bound: dict[tuple[str, str | None], BoundService] = {}

    def locate(self, registry_url: Endpoint, dataset: str, timeout_ms: int = 5000) -> list[ServiceDescriptor]:
        """Find every registered service carrying the dataset."""
        if not dataset:
            raise FaultError("bad-request", "dataset must be nonempty")
        try:
            return remote_find(registry_url, FindQuery(dataset_name=dataset), timeout_ms)
        except FaultError as err:
            if err.fault.code in TRANSPORT_FAULT_CODES:
                raise FaultError(
                    "registry-unavailable",
                    f"cannot reach registry at {registry_url.url}: {err.fault.message}",
                ) from err
            raise

    def _call(
        self, descriptor: ServiceDescriptor, call: MethodCall, timeout_ms: int
    ) -> tuple[Value, float]:
        """Invoke against a service, feeding the latency back as a passive sample."""
        started = time.perf_counter()
        outcome = invoke(descriptor.endpoint, call, timeout_ms)
        rtt_ms = (time.perf_counter() - started) * 1000.0
        if isinstance(outcome, Fault):
            if outcome.code in TRANSPORT_FAULT_CODES:
                self.monitor.observe(
                    LatencySample(descriptor.endpoint, rtt_ms, ok=False, at=self._clock())
                )
            raise FaultError.from_fault(outcome)
        assert isinstance(outcome, MethodResult)
        self.monitor.observe(
            LatencySample(descriptor.endpoint, rtt_ms, ok=True, at=self._clock())
        )
        return outcome.result, rtt_ms

    def bind(
        self, descriptor: ServiceDescriptor, token: str | None = None, timeout_ms: int = 5000
    ) -> BoundService:
        """Create (or reuse) a session on the service."""
        cache_key = (descriptor.service_key, token)
        with self._lock:
            bound = self._bound.get(cache_key)
            if bound is not None:
                bound.last_used = self._clock()
                return bound
        call = MethodCall(
            id=uuid.uuid4().hex,
            service=descriptor.service_key,
            method="createSession",
            params={"token": token},
        )
        result, _ = self._call(descriptor, call, timeout_ms)
        session = SessionHandle.from_value(result)
        bound = BoundService(descriptor=descriptor, session=session, last_used=self._clock())
        with self._lock:
            self._bound[cache_key] = bound
        return bound

    def _unbind(self, descriptor: ServiceDescriptor, token: str | None) -> None:
        with self._lock:
            self._bound.pop((descriptor.service_key, token), None)

    def _execute_bound(
        self, bound: BoundService, query_text: str, token: str | None, timeout_ms: int
    ) -> ResultSet:
        """Execute on a bound service, re-binding exactly once on expiry."""
        for rebound in (False, True):
            call = MethodCall(
                id=uuid.uuid4().hex,
                service=bound.descriptor.service_key,
                method="execute",
                params={"sql": query_text},
                session=bound.session.session_id,
            )
            try:
                result, _ = self._call(bound.descriptor, call, timeout_ms)
                return ResultSet.from_value(result)
            except FaultError as err:
                if err.fault.code == "session-expired" and not rebound:
                    self._unbind(bound.descriptor, token)
                    bound = self.bind(bound.descriptor, token, timeout_ms)
                    continue
                raise
        raise AssertionError("unreachable")

    def query_dataset(
        self,
        registry_url: Endpoint,
        dataset: str,
        query_text: str,
        opts: QueryOptions | None = None,
    ) -> QueryOutcome:
        """The full pipeline: locate, probe unknowns, rank, then bind+execute."""
        opts = opts or QueryOptions()
        opts.validate()
        if not dataset or not query_text:
            raise FaultError("bad-request", "dataset and query text must be nonempty")

        descriptors = self.locate(registry_url, dataset, opts.timeout_ms)
        if not descriptors:
            raise FaultError(
                "unknown-dataset",
                f"no registered service offers dataset {dataset!r}",
                {"dataset": dataset, "attempts": 0},
            )
        by_key = {descriptor.service_key: descriptor for descriptor in descriptors}
        candidates = [(descriptor.service_key, descriptor.endpoint) for descriptor in descriptors]

        # Cold start: one synchronous probe for endpoints never sampled.
        for _, endpoint in candidates:
            if self.monitor.metric(endpoint).ewma_ms is None:
                self.monitor.probe_round([endpoint], opts.timeout_ms)

        ranked = select_optimal(candidates, self.monitor.snapshot())
        if not ranked:
            raise FaultError(
                "unreachable", f"no available endpoint for dataset {dataset!r}", {"attempts": 0}
            )

        attempts = 0
        last_transport: Fault | None = None
        for service_key, endpoint in ranked:
            if attempts >= opts.max_attempts:
                break
            attempts += 1
            descriptor = by_key[service_key]
            try:
                bound = self.bind(descriptor, opts.token, opts.timeout_ms)
                result_set = self._execute_bound(bound, query_text, opts.token, opts.timeout_ms)
            except FaultError as err:
                if err.fault.code in TRANSPORT_FAULT_CODES:
                    log.info(
                        "endpoint %s failed (%s), trying next candidate",
                        endpoint.url,
                        err.fault.code,
                    )
                    self._unbind(descriptor, opts.token)
                    last_transport = err.fault
                    continue
                raise _with_attempts(err.fault, attempts) from err
            return QueryOutcome(
                result_set=result_set, served_by=service_key, endpoint=endpoint, attempts=attempts
            )

        assert last_transport is not None
        raise _with_attempts(last_transport, attempts)
