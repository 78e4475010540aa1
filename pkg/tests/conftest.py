from __future__ import annotations

import csv
from pathlib import Path

import pytest

from gridwh.dbs import DbsConfig, DbsService, TableSpec
from gridwh.tables import Column, Table, TableStore
from gridwh.transport import RpcServer

EVENTS_SCHEMA = [Column("id", "int"), Column("e", "int"), Column("tag", "string")]

EVENTS_ROWS = [
    (1, 5, "mu"),
    (2, 12, "el"),
    (3, 31, "mu"),
    (4, 12, "tau"),
    (5, None, "jet"),
]


@pytest.fixture
def events_table() -> Table:
    return Table("events", tuple(EVENTS_SCHEMA), tuple(EVENTS_ROWS))


@pytest.fixture
def events_store(events_table) -> TableStore:
    return TableStore([events_table])


def write_events_csv(path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([column.name for column in EVENTS_SCHEMA])
        for row in EVENTS_ROWS:
            writer.writerow(["" if cell is None else cell for cell in row])
    return path


@pytest.fixture
def events_csv(tmp_path) -> Path:
    return write_events_csv(tmp_path / "events.csv")


def make_service_config(
    events_csv: Path,
    service_key: str = "site-a",
    dialect: str = "ansi",
    **overrides,
) -> DbsConfig:
    return DbsConfig(
        service_key=service_key,
        host="127.0.0.1",
        port=0,
        dialect=dialect,
        tables=[TableSpec("events", list(EVENTS_SCHEMA), str(events_csv))],
        **overrides,
    )


@pytest.fixture
def live_service(events_csv):
    """One started service on a loopback port, torn down after the test."""
    service = DbsService(make_service_config(events_csv))
    with RpcServer("127.0.0.1", 0, service.handlers()) as server:
        service.endpoint = server.endpoint
        yield service, server
