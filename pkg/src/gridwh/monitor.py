"""Network monitor: probe endpoints, smooth latencies, rank candidates.

The cost of an endpoint is an exponentially weighted moving average of ping
round-trip times.  Endpoints with too many consecutive failures are excluded
from selection; endpoints never sampled rank last (cost unknown) but remain
eligible so new sites still get explored.
"""

from __future__ import annotations

import logging
import math
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .transport import invoke
from .wire import Endpoint, FaultError, MethodCall, MethodResult

log = logging.getLogger(__name__)

DEFAULT_PROBE_TIMEOUT_MS = 2000


@dataclass(frozen=True)
class LatencySample:
    endpoint: Endpoint
    rtt_ms: float
    ok: bool
    at: float


@dataclass(frozen=True)
class EndpointMetric:
    """Smoothed latency and availability state for one endpoint.

    ewma_ms is None until the first successful sample (UNKNOWN).
    """

    ewma_ms: float | None = None
    sample_count: int = 0
    consecutive_failures: int = 0
    available: bool = True


@dataclass(frozen=True)
class MonitorConfig:
    alpha: float = 0.3
    probe_period_seconds: int = 10
    failure_threshold: int = 3

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise FaultError("bad-request", f"alpha must be in (0, 1], got {self.alpha}")
        if self.probe_period_seconds < 1 or self.failure_threshold < 1:
            raise FaultError("bad-request", "probe period and failure threshold must be positive")


def ewma_update(prev: float | None, sample_ms: float, alpha: float) -> float:
    """One smoothing step; an unknown previous value adopts the sample.

    The true value alpha*sample + (1-alpha)*prev always lies between prev and
    sample; the result is clamped back into that interval because floating
    point can round either naive evaluation just outside it.
    """
    if not 0.0 < alpha <= 1.0:
        raise FaultError("bad-request", f"alpha must be in (0, 1], got {alpha}")
    if sample_ms < 0:
        raise FaultError("bad-request", f"sample must be nonnegative, got {sample_ms}")
    if prev is None:
        return float(sample_ms)
    updated = prev + alpha * (sample_ms - prev)
    low, high = (prev, sample_ms) if prev <= sample_ms else (sample_ms, prev)
    return min(max(updated, low), high)


def record_sample(
    metric: EndpointMetric, sample: LatencySample, config: MonitorConfig
) -> EndpointMetric:
    """Fold one sample into a metric; failures leave the smoothed value alone."""
    if sample.ok:
        ewma = ewma_update(metric.ewma_ms, sample.rtt_ms, config.alpha)
        return EndpointMetric(
            ewma_ms=ewma,
            sample_count=metric.sample_count + 1,
            consecutive_failures=0,
            available=True,
        )
    failures = metric.consecutive_failures + 1
    return EndpointMetric(
        ewma_ms=metric.ewma_ms,
        sample_count=metric.sample_count,
        consecutive_failures=failures,
        available=failures < config.failure_threshold,
    )


def probe(endpoint: Endpoint, timeout_ms: int = DEFAULT_PROBE_TIMEOUT_MS) -> LatencySample:
    """Ping an endpoint, measuring the wall-clock round trip.

    Probes are endpoint-level, so the call addresses service "*"; ping is
    exempt from routing, session, and token checks everywhere.
    """
    call = MethodCall(id=uuid.uuid4().hex, service="*", method="ping", params={})
    started = time.perf_counter()
    outcome = invoke(endpoint, call, timeout_ms)
    rtt_ms = (time.perf_counter() - started) * 1000.0
    return LatencySample(
        endpoint=endpoint, rtt_ms=rtt_ms, ok=isinstance(outcome, MethodResult), at=time.time()
    )


def select_optimal(
    candidates: Iterable[tuple[str, Endpoint]],
    metrics: Mapping[Endpoint, EndpointMetric],
) -> list[tuple[str, Endpoint]]:
    """Rank candidates by ascending smoothed latency; head is optimal.

    Unavailable endpoints are excluded; unknown latency ranks as +infinity;
    ties break by ascending service key.  Pure function of its arguments.
    """
    pairs = list(candidates)
    if not pairs:
        raise FaultError("bad-request", "candidate list must be nonempty")

    def cost(pair: tuple[str, Endpoint]) -> tuple[float, str]:
        metric = metrics.get(pair[1], EndpointMetric())
        ewma = metric.ewma_ms if metric.ewma_ms is not None else math.inf
        return (ewma, pair[0])

    eligible = [
        pair for pair in pairs if metrics.get(pair[1], EndpointMetric()).available
    ]
    return sorted(eligible, key=cost)


class Monitor:
    """Shared metric table fed by probes and by passive call latencies."""

    def __init__(self, config: MonitorConfig | None = None):
        self.config = config or MonitorConfig()
        self.config.validate()
        self._lock = threading.Lock()
        self._metrics: dict[Endpoint, EndpointMetric] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def observe(self, sample: LatencySample) -> EndpointMetric:
        with self._lock:
            metric = record_sample(
                self._metrics.get(sample.endpoint, EndpointMetric()), sample, self.config
            )
            self._metrics[sample.endpoint] = metric
            return metric

    def metric(self, endpoint: Endpoint) -> EndpointMetric:
        with self._lock:
            return self._metrics.get(endpoint, EndpointMetric())

    def snapshot(self) -> dict[Endpoint, EndpointMetric]:
        with self._lock:
            return dict(self._metrics)

    def probe_round(
        self, endpoints: Iterable[Endpoint], timeout_ms: int = DEFAULT_PROBE_TIMEOUT_MS
    ) -> list[LatencySample]:
        samples = [probe(endpoint, timeout_ms) for endpoint in endpoints]
        for sample in samples:
            self.observe(sample)
        return samples

    def start(
        self,
        endpoints_fn: Callable[[], Iterable[Endpoint]],
        timeout_ms: int = DEFAULT_PROBE_TIMEOUT_MS,
        period_seconds: float | None = None,
    ) -> None:
        """Run probe rounds on a background thread until stop()."""
        if self._thread is not None:
            return
        period = period_seconds if period_seconds is not None else self.config.probe_period_seconds

        def loop() -> None:
            while not self._stop.is_set():
                try:
                    self.probe_round(endpoints_fn(), timeout_ms)
                except Exception:
                    log.exception("probe round failed")
                self._stop.wait(period)

        self._stop.clear()
        self._thread = threading.Thread(target=loop, name="monitor-probe", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is not None:
            self._stop.set()
            self._thread.join(timeout=5)
            self._thread = None
