from __future__ import annotations

import socket

import pytest

from gridwh.broker import Broker, QueryOptions
from gridwh.dbs import DbsService
from gridwh.demo import DEMO_DATASET, DEMO_SCHEMA, DemoCluster
from gridwh.registry import Registry, remote_publish
from gridwh.sql import parse_query
from gridwh.tables import TableStore, execute_canonical, load_table
from gridwh.transport import RpcServer
from gridwh.wire import Endpoint, FaultError

from .conftest import make_service_config
from .test_dbs import FakeClock


def unused_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture
def cluster():
    with DemoCluster(sites=2, delays_ms=[0, 30]) as demo:
        yield demo


# --- locate ------------------------------------------------------------------


def test_locate_single_site(cluster):
    broker = Broker()
    found = broker.locate(cluster.registry_url, DEMO_DATASET)
    assert [d.service_key for d in found] == ["site-1", "site-2"]
    assert found[0].endpoint == cluster.sites[0].endpoint


def test_locate_unregistered_dataset_is_empty(cluster):
    assert Broker().locate(cluster.registry_url, "nothing") == []


def test_locate_registry_down_is_registry_unavailable():
    dead = Endpoint.of("127.0.0.1", unused_port())
    with pytest.raises(FaultError) as err:
        Broker().locate(dead, "events")
    assert err.value.fault.code == "registry-unavailable"


def test_locate_replicated_dataset_sorted(tmp_path, events_csv):
    registry = Registry(tmp_path, "tok")
    with RpcServer("127.0.0.1", 0, registry.handlers()) as reg_server:
        servers = []
        try:
            for key in ("site-c", "site-a", "site-b"):
                service = DbsService(make_service_config(events_csv, service_key=key))
                server = RpcServer("127.0.0.1", 0, service.handlers())
                server.start()
                servers.append(server)
                service.endpoint = server.endpoint
                remote_publish(reg_server.endpoint, service.descriptor(), "tok")
            found = Broker().locate(reg_server.endpoint, "events")
            assert [d.service_key for d in found] == ["site-a", "site-b", "site-c"]
        finally:
            for server in servers:
                server.stop()


# --- bind --------------------------------------------------------------------


def test_bind_creates_live_session(cluster):
    broker = Broker()
    descriptor = broker.locate(cluster.registry_url, DEMO_DATASET)[0]
    bound = broker.bind(descriptor)
    assert bound.session.service_key == descriptor.service_key
    assert bound.session.ttl_seconds == 600


def test_bind_reuses_cached_session(cluster):
    broker = Broker()
    descriptor = broker.locate(cluster.registry_url, DEMO_DATASET)[0]
    first = broker.bind(descriptor)
    second = broker.bind(descriptor)
    assert first.session.session_id == second.session.session_id


def test_bind_auth_required_without_token(events_csv):
    service = DbsService(
        make_service_config(events_csv, auth_required=True, access_token="tok")
    )
    with RpcServer("127.0.0.1", 0, service.handlers()) as server:
        service.endpoint = server.endpoint
        descriptor = service.descriptor()
        broker = Broker()
        with pytest.raises(FaultError) as err:
            broker.bind(descriptor)
        assert err.value.fault.code == "access-denied"
        assert broker.bind(descriptor, token="tok").session.session_id


def test_expired_cached_session_rebinds_transparently(tmp_path, events_csv):
    clock = FakeClock()
    registry = Registry(tmp_path, "tok")
    service = DbsService(make_service_config(events_csv), clock=clock)
    with RpcServer("127.0.0.1", 0, registry.handlers()) as reg_server, RpcServer(
        "127.0.0.1", 0, service.handlers()
    ) as svc_server:
        service.endpoint = svc_server.endpoint
        remote_publish(reg_server.endpoint, service.descriptor(), "tok")
        broker = Broker()
        first = broker.query_dataset(reg_server.endpoint, "events", "SELECT * FROM events")
        assert first.attempts == 1
        clock.advance(601)  # server-side lease expiry; broker cache is now stale
        second = broker.query_dataset(reg_server.endpoint, "events", "SELECT * FROM events")
        assert second.result_set == first.result_set
        assert second.attempts == 1


# --- query_dataset -----------------------------------------------------------


def test_query_matches_local_oracle(cluster):
    broker = Broker()
    outcome = broker.query_dataset(
        cluster.registry_url, DEMO_DATASET, "SELECT * FROM events WHERE e > 40.0 ORDER BY id ASC"
    )
    store = TableStore([load_table(cluster.fixture_csv, DEMO_SCHEMA, DEMO_DATASET)])
    expected = execute_canonical(
        parse_query("SELECT * FROM events WHERE e > 40.0 ORDER BY id ASC"), store
    )
    assert outcome.result_set == expected
    assert outcome.attempts == 1
    assert outcome.served_by == "site-1"  # lowest injected delay wins


def test_query_unknown_dataset(cluster):
    with pytest.raises(FaultError) as err:
        Broker().query_dataset(cluster.registry_url, "nothing", "SELECT * FROM nothing")
    fault = err.value.fault
    assert fault.code == "unknown-dataset"
    assert fault.detail["attempts"] == 0


def test_failover_to_second_replica(cluster):
    broker = Broker()
    warm = broker.query_dataset(cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1")
    assert warm.served_by == "site-1"
    cluster.stop_site("site-1")
    outcome = broker.query_dataset(
        cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1"
    )
    assert outcome.served_by == "site-2"
    assert outcome.attempts == 2


def test_application_fault_not_retried(cluster):
    broker = Broker()
    with pytest.raises(FaultError) as err:
        broker.query_dataset(cluster.registry_url, DEMO_DATASET, "SELEC * FROM events")
    fault = err.value.fault
    assert fault.code == "parse-error"
    assert fault.detail["attempts"] == 1


def test_attempts_exhausted_surfaces_last_transport_fault(cluster):
    broker = Broker()
    broker.query_dataset(cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1")
    cluster.stop_site("site-1")
    cluster.stop_site("site-2")
    with pytest.raises(FaultError) as err:
        broker.query_dataset(cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1")
    fault = err.value.fault
    assert fault.code == "unreachable"
    assert fault.detail["attempts"] == 2  # both candidates tried once


def test_attempts_never_exceed_max(cluster):
    broker = Broker()
    broker.query_dataset(cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1")
    cluster.stop_site("site-1")
    cluster.stop_site("site-2")
    with pytest.raises(FaultError) as err:
        broker.query_dataset(
            cluster.registry_url,
            DEMO_DATASET,
            "SELECT * FROM events LIMIT 1",
            QueryOptions(max_attempts=1),
        )
    assert err.value.fault.detail["attempts"] == 1


def test_first_attempt_follows_ranking(cluster):
    # Selection conformance: after warm-up, the head of the ranking is tried first.
    broker = Broker()
    broker.monitor.probe_round([site.endpoint for site in cluster.sites])
    from gridwh.monitor import select_optimal

    candidates = [(site.key, site.endpoint) for site in cluster.sites]
    ranked = select_optimal(candidates, broker.monitor.snapshot())
    outcome = broker.query_dataset(
        cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1"
    )
    assert outcome.served_by == ranked[0][0]
    assert outcome.attempts == 1


def test_replicas_answer_identically(cluster):
    # Endpoint independence: either replica returns the same rows for the same query.
    broker = Broker()
    sql = "SELECT id, e FROM events WHERE e > 20.0 ORDER BY e DESC LIMIT 10"
    results = []
    for site in cluster.sites:
        bound = broker.bind(site.service.descriptor())
        results.append(broker._execute_bound(bound, sql, None, 5000))
    assert results[0] == results[1]


def test_passive_samples_feed_monitor(cluster):
    broker = Broker()
    broker.query_dataset(cluster.registry_url, DEMO_DATASET, "SELECT * FROM events LIMIT 1")
    served_endpoint = cluster.sites[0].endpoint
    metric = broker.monitor.metric(served_endpoint)
    # one probe + createSession + execute all feed the same endpoint
    assert metric.sample_count >= 3


def test_query_options_validation(cluster):
    with pytest.raises(FaultError):
        Broker().query_dataset(
            cluster.registry_url, DEMO_DATASET, "SELECT * FROM events", QueryOptions(max_attempts=0)
        )
    with pytest.raises(FaultError):
        Broker().query_dataset(cluster.registry_url, "", "SELECT 1")
