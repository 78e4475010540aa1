"""Self-contained multi-site cluster for demos and tests.

Starts one registry plus N database services on loopback ports, assigns
dialects round-robin, loads the same CSV fixture everywhere, and publishes
every service.  Everything lives under a temp directory and is torn down on
exit, so runs are hermetic.
"""

from __future__ import annotations

import csv
import random
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .dbs import DbsConfig, DbsService, TableSpec
from .registry import Registry, remote_publish
from .tables import Column
from .transport import RpcServer
from .wire import Endpoint

DEMO_DATASET = "events"
DEMO_SCHEMA = (
    Column("id", "int"),
    Column("e", "float"),
    Column("tag", "string"),
    Column("hits", "int"),
    Column("ok", "bool"),
)
DIALECT_ROTATION = ("ansi", "tsql", "oracle")

# Canonical queries exercising predicates, ORDER BY, LIMIT, and projection.
DEMO_QUERIES = (
    "SELECT * FROM events",
    "SELECT id, e FROM events",
    "SELECT * FROM events WHERE e > 50.0",
    "SELECT * FROM events WHERE tag = 'mu'",
    "SELECT id, tag FROM events WHERE e <= 30.5 AND hits != 0",
    "SELECT id FROM events WHERE ok = TRUE",
    "SELECT * FROM events ORDER BY e DESC",
    "SELECT id, tag FROM events ORDER BY tag ASC LIMIT 7",
    "SELECT * FROM events LIMIT 5",
    "SELECT * FROM events WHERE e >= 10.0 ORDER BY id ASC LIMIT 3",
    "SELECT tag, id FROM events WHERE hits > 2 ORDER BY e ASC LIMIT 50",
    "SELECT * FROM events WHERE id < 0",
)


def write_demo_fixture(path: str | Path, rows: int = 100, seed: int = 2026) -> Path:
    """Write a deterministic events CSV matching DEMO_SCHEMA."""
    rng = random.Random(seed)
    tags = ("mu", "el", "tau", "jet")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([column.name for column in DEMO_SCHEMA])
        for i in range(rows):
            energy = round(rng.uniform(0.5, 99.5), 3)
            hits = rng.randint(0, 9)
            writer.writerow(
                [
                    i,
                    energy,
                    rng.choice(tags),
                    "" if hits == 0 and rng.random() < 0.5 else hits,  # a few nulls
                    "true" if rng.random() < 0.6 else "false",
                ]
            )
    return path


@dataclass
class Site:
    key: str
    dialect: str
    delay_ms: int
    service: DbsService
    server: RpcServer

    @property
    def endpoint(self) -> Endpoint:
        return self.server.endpoint


class DemoCluster:
    """One registry and N services, all on loopback, all torn down together."""

    ADMIN_TOKEN = "demo-admin"

    def __init__(
        self,
        sites: int = 3,
        fixture_csv: str | Path | None = None,
        delays_ms: list[int] | None = None,
        auth_required: bool = False,
        access_token: str | None = None,
    ):
        if sites < 1:
            raise ValueError("need at least one site")
        self._tmp = tempfile.TemporaryDirectory(prefix="gridwh-demo-")
        root = Path(self._tmp.name)
        self._servers: list[RpcServer] = []
        try:
            if fixture_csv is None:
                fixture_csv = write_demo_fixture(root / "events.csv")
            self.fixture_csv = Path(fixture_csv)
            if delays_ms is None:
                delays_ms = [15 * i for i in range(sites)]
            if len(delays_ms) < sites:
                delays_ms = list(delays_ms) + [0] * (sites - len(delays_ms))

            store = root / "registry-store"
            store.mkdir()
            self.registry = Registry(store, self.ADMIN_TOKEN)
            self._registry_server = RpcServer("127.0.0.1", 0, self.registry.handlers())
            self._servers.append(self._registry_server)
            self._registry_server.start()

            self.sites: list[Site] = []
            for index in range(sites):
                key = f"site-{index + 1}"
                dialect = DIALECT_ROTATION[index % len(DIALECT_ROTATION)]
                config = DbsConfig(
                    service_key=key,
                    host="127.0.0.1",
                    port=0,
                    dialect=dialect,
                    tables=[
                        TableSpec(DEMO_DATASET, list(DEMO_SCHEMA), str(self.fixture_csv))
                    ],
                    auth_required=auth_required,
                    access_token=access_token,
                    injected_delay_ms=delays_ms[index],
                )
                service = DbsService(config)
                server = RpcServer(
                    config.host, config.port, service.handlers(), delay_ms=config.injected_delay_ms
                )
                self._servers.append(server)
                server.start()
                service.endpoint = server.endpoint
                remote_publish(
                    self.registry_url, service.descriptor(), self.ADMIN_TOKEN
                )
                self.sites.append(Site(key, dialect, delays_ms[index], service, server))
        except BaseException:
            self.stop()
            raise

    @property
    def registry_url(self) -> Endpoint:
        return self._registry_server.endpoint

    def site(self, key: str) -> Site:
        for site in self.sites:
            if site.key == key:
                return site
        raise KeyError(key)

    def stop_site(self, key: str) -> None:
        """Stop one service's server, leaving its registration in place."""
        self.site(key).server.stop()

    def stop(self) -> None:
        for server in self._servers:
            try:
                server.stop()
            except Exception:
                pass
        self._tmp.cleanup()

    def __enter__(self) -> "DemoCluster":
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()
