"""Command-line entry point for operating and using the virtual database.

Serve commands run one service in the foreground until interrupted; the
client commands (publish, find, query, probe) talk to a running registry;
demo hosts a whole cluster in-process and walks the locate -> select -> query
flow.  `--json` switches any command to a single machine-readable document
{ok, fault?, data}.  Exit codes: 0 success, 1 remote or application fault,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path

from .broker import Broker, QueryOptions
from .dbs import DbsConfig, DbsService
from .demo import DEMO_DATASET, DEMO_QUERIES, DemoCluster
from .monitor import Monitor
from .registry import FindQuery, Registry, remote_find, remote_publish
from .tables import IngestError, ResultSet
from .transport import RpcServer
from .wire import Endpoint, Fault, FaultError, Value

log = logging.getLogger(__name__)

ADMIN_TOKEN_ENV = "GRIDWH_ADMIN_TOKEN"


def _emit(args: argparse.Namespace, data: Value, text: str) -> int:
    if args.json:
        print(json.dumps({"ok": True, "data": data}, indent=2))
    elif text:
        print(text)
    return 0


def _emit_fault(args: argparse.Namespace, fault: Fault) -> int:
    if args.json:
        payload = {"code": fault.code, "message": fault.message, "detail": fault.detail}
        print(json.dumps({"ok": False, "fault": payload, "data": None}, indent=2))
    else:
        print(f"fault {fault.code}: {fault.message}", file=sys.stderr)
    return 1


def _endpoint_arg(url: str) -> Endpoint:
    if "://" not in url:
        url = f"http://{url}"
    if not url.endswith("/rpc"):
        url = url.rstrip("/") + "/rpc"
    return Endpoint(url)


def _split_listen(listen: str) -> tuple[str, int]:
    host, _, port_text = listen.rpartition(":")
    if not host or not port_text.isdigit():
        raise FaultError("bad-request", f"--listen must be host:port, got {listen!r}")
    return host, int(port_text)


def _require_admin_token(args: argparse.Namespace) -> str:
    token = args.admin_token or os.environ.get(ADMIN_TOKEN_ENV)
    if not token:
        raise FaultError(
            "access-denied", f"supply --admin-token or set {ADMIN_TOKEN_ENV}"
        )
    return token


def _serve_forever(server: RpcServer, banner: str, args: argparse.Namespace, data: Value) -> int:
    server.start()
    _emit(args, data, banner)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _format_table(result: ResultSet) -> str:
    def cell(value: Value) -> str:
        if value is None:
            return "NULL"
        if isinstance(value, bool):
            return "true" if value else "false"
        return str(value)

    headers = [column.name for column in result.columns]
    grid = [headers] + [[cell(v) for v in row] for row in result.rows]
    widths = [max(len(line[i]) for line in grid) for i in range(len(headers))] if headers else []
    lines = ["  ".join(text.ljust(widths[i]) for i, text in enumerate(line)).rstrip() for line in grid]
    if len(lines) > 1:
        lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append(f"{result.row_count} row(s)")
    return "\n".join(lines)


def cmd_registry_serve(args: argparse.Namespace) -> int:
    token = _require_admin_token(args)
    store = Path(args.store)
    store.mkdir(parents=True, exist_ok=True)
    registry = Registry(store, token)
    host, port = _split_listen(args.listen)
    server = RpcServer(host, port, registry.handlers())
    banner = f"registry serving at {server.endpoint.url} (store {store})"
    return _serve_forever(args=args, server=server, banner=banner, data={"listening": server.endpoint.url})


def cmd_dbs_serve(args: argparse.Namespace) -> int:
    config = DbsConfig.from_file(args.config)
    service = DbsService(config)
    server = RpcServer(config.host, config.port, service.handlers(), delay_ms=config.injected_delay_ms)
    service.endpoint = server.endpoint
    if config.auto_publish:
        if not config.registry_url:
            raise FaultError("bad-request", "autoPublish requires registryUrl in the config")
        token = _require_admin_token(args)
        remote_publish(_endpoint_arg(config.registry_url), service.descriptor(), token)
        log.info("published %s to %s", config.service_key, config.registry_url)
    banner = f"service {config.service_key} ({config.dialect}) serving at {server.endpoint.url}"
    return _serve_forever(
        args=args,
        server=server,
        banner=banner,
        data={"serviceKey": config.service_key, "listening": server.endpoint.url},
    )


def cmd_publish(args: argparse.Namespace) -> int:
    token = _require_admin_token(args)
    config = DbsConfig.from_file(args.config)
    service = DbsService(config)
    key = remote_publish(_endpoint_arg(args.registry), service.descriptor(), token)
    return _emit(args, {"serviceKey": key}, f"published {key}")


def cmd_find(args: argparse.Namespace) -> int:
    descriptors = remote_find(_endpoint_arg(args.registry), FindQuery(dataset_name=args.dataset))
    lines = [f"{len(descriptors)} services"]
    for descriptor in descriptors:
        lines.append(f"{descriptor.service_key}  {descriptor.endpoint.url}  {descriptor.dialect}")
    data = {"count": len(descriptors), "services": [d.to_value() for d in descriptors]}
    return _emit(args, data, "\n".join(lines))


def cmd_query(args: argparse.Namespace) -> int:
    broker = Broker()
    opts = QueryOptions(token=args.token)
    outcome = broker.query_dataset(_endpoint_arg(args.registry), args.dataset, args.sql, opts)
    text = "\n".join(
        [
            f"served by {outcome.served_by} at {outcome.endpoint.url} "
            f"(attempts: {outcome.attempts})",
            _format_table(outcome.result_set),
        ]
    )
    data = {
        "servedBy": outcome.served_by,
        "endpoint": outcome.endpoint.url,
        "attempts": outcome.attempts,
        "resultSet": outcome.result_set.to_value(),
    }
    return _emit(args, data, text)


def cmd_probe(args: argparse.Namespace) -> int:
    descriptors = remote_find(_endpoint_arg(args.registry), FindQuery(dataset_name="*"))
    monitor = Monitor()
    endpoints = [descriptor.endpoint for descriptor in descriptors]
    # Three rounds: enough smoothing to mean something, and enough consecutive
    # failures for a dead endpoint to cross the default availability threshold.
    for _ in range(3):
        monitor.probe_round(endpoints, timeout_ms=2000)
    lines = [f"{len(descriptors)} endpoints"]
    rows = []
    for descriptor in descriptors:
        metric = monitor.metric(descriptor.endpoint)
        ewma = f"{metric.ewma_ms:.1f} ms" if metric.ewma_ms is not None else "unknown"
        state = "available" if metric.available else "unavailable"
        lines.append(f"{descriptor.service_key}  {descriptor.endpoint.url}  ewma={ewma}  {state}")
        rows.append(
            {
                "serviceKey": descriptor.service_key,
                "endpoint": descriptor.endpoint.url,
                "ewmaMs": metric.ewma_ms,
                "available": metric.available,
                "sampleCount": metric.sample_count,
            }
        )
    return _emit(args, {"count": len(rows), "endpoints": rows}, "\n".join(lines))


def cmd_demo(args: argparse.Namespace) -> int:
    from .monitor import select_optimal  # local import keeps the command list tidy

    queries = list(DEMO_QUERIES[: max(args.queries, 1)])
    with DemoCluster(sites=args.sites, fixture_csv=args.fixture) as cluster:
        broker = Broker()
        stages: dict[str, Value] = {"sites": []}
        lines = []

        lines.append(f"[demo] registry at {cluster.registry_url.url}")
        for site in cluster.sites:
            lines.append(
                f"[demo] {site.key} dialect={site.dialect} delay={site.delay_ms}ms "
                f"at {site.endpoint.url}"
            )
            stages["sites"].append(
                {
                    "serviceKey": site.key,
                    "dialect": site.dialect,
                    "delayMs": site.delay_ms,
                    "endpoint": site.endpoint.url,
                }
            )

        descriptors = broker.locate(cluster.registry_url, DEMO_DATASET)
        lines.append(f"[locate] dataset {DEMO_DATASET!r} found at {len(descriptors)} sites")
        stages["locate"] = [d.to_value() for d in descriptors]

        candidates = [(d.service_key, d.endpoint) for d in descriptors]
        broker.monitor.probe_round([endpoint for _, endpoint in candidates])
        stages["probe"] = []
        for key, endpoint in candidates:
            metric = broker.monitor.metric(endpoint)
            ewma = f"{metric.ewma_ms:.1f} ms" if metric.ewma_ms is not None else "unknown"
            lines.append(f"[probe] {key} ewma={ewma} available={str(metric.available).lower()}")
            stages["probe"].append(
                {
                    "serviceKey": key,
                    "endpoint": endpoint.url,
                    "ewmaMs": metric.ewma_ms,
                    "available": metric.available,
                }
            )

        ranked = select_optimal(candidates, broker.monitor.snapshot())
        lines.append("[select] ranking: " + " > ".join(key for key, _ in ranked))
        stages["ranking"] = [key for key, _ in ranked]

        stages["queries"] = []
        for sql in queries:
            outcome = broker.query_dataset(cluster.registry_url, DEMO_DATASET, sql)
            lines.append(
                f"[query] {sql}\n[query]   served by {outcome.served_by} at "
                f"{outcome.endpoint.url} (attempts: {outcome.attempts}, "
                f"rows: {outcome.result_set.row_count})"
            )
            stages["queries"].append(
                {
                    "sql": sql,
                    "servedBy": outcome.served_by,
                    "endpoint": outcome.endpoint.url,
                    "attempts": outcome.attempts,
                    "rowCount": outcome.result_set.row_count,
                }
            )
        lines.append(_format_table(outcome.result_set))
        return _emit(args, stages, "\n".join(lines))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")

    parser = argparse.ArgumentParser(prog="gridwh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("registry-serve", parents=[common], help="serve the service registry")
    p.add_argument("--store", required=True, help="document store directory")
    p.add_argument("--listen", required=True, help="host:port to bind")
    p.add_argument("--admin-token", default=None, help=f"admin token (or ${ADMIN_TOKEN_ENV})")
    p.set_defaults(func=cmd_registry_serve)

    p = sub.add_parser("dbs-serve", parents=[common], help="serve one database service")
    p.add_argument("--config", required=True, help="service config JSON file")
    p.add_argument("--admin-token", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_dbs_serve)

    p = sub.add_parser("publish", parents=[common], help="publish a service descriptor")
    p.add_argument("--registry", required=True, help="registry endpoint URL")
    p.add_argument("--config", required=True, help="service config JSON file")
    p.add_argument("--admin-token", default=None, help=f"admin token (or ${ADMIN_TOKEN_ENV})")
    p.set_defaults(func=cmd_publish)

    p = sub.add_parser("find", parents=[common], help="locate services holding a dataset")
    p.add_argument("--registry", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_find)

    p = sub.add_parser("query", parents=[common], help="query a dataset through the broker")
    p.add_argument("--registry", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--sql", required=True, help="canonical SQL text")
    p.add_argument("--token", default=None, help="service access token")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("probe", parents=[common], help="probe every registered endpoint")
    p.add_argument("--registry", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("demo", parents=[common], help="run the multi-site demo in-process")
    p.add_argument("--sites", type=int, default=3)
    p.add_argument("--fixture", default=None, help="CSV fixture (generated when omitted)")
    p.add_argument("--queries", type=int, default=3, help="how many scripted queries to run")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FaultError as err:
        return _emit_fault(args, err.fault)
    except (IngestError, OSError, ValueError, json.JSONDecodeError) as exc:
        return _emit_fault(args, Fault("bad-request", str(exc)))


if __name__ == "__main__":
    raise SystemExit(main())
