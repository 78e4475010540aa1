"""In-memory relational backend: typed tables, CSV ingestion, query pipeline.

`execute_canonical` applies, in order: WHERE (conjunction, any comparison
involving null is false), ORDER BY (stable sort, nulls before every value
when ascending), LIMIT, projection.  Tables are immutable after load, so
queries need no coordination.
"""

from __future__ import annotations

import csv
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .sql import CanonicalQuery
from .wire import FaultError, Value

COLUMN_TYPES = ("string", "int", "float", "bool")

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


class IngestError(Exception):
    """CSV ingestion failure, pointing at the offending line and column."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Column:
    name: str
    type: str

    def validate(self) -> None:
        if not self.name:
            raise FaultError("bad-request", "column name must be nonempty")
        if self.type not in COLUMN_TYPES:
            raise FaultError("bad-request", f"unknown column type: {self.type!r}")

    def to_value(self) -> dict[str, Value]:
        return {"name": self.name, "type": self.type}

    @classmethod
    def from_value(cls, value: Value) -> "Column":
        if not isinstance(value, dict):
            raise FaultError("bad-request", "column must be a map")
        column = cls(name=value.get("name", ""), type=value.get("type", ""))
        column.validate()
        return column


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class ResultSet:
    """Typed rows returned by any backend; comparable across sites."""

    columns: tuple[Column, ...]
    rows: tuple[tuple, ...]
    row_count: int

    def to_value(self) -> dict[str, Value]:
        return {
            "columns": [col.to_value() for col in self.columns],
            "rows": [list(row) for row in self.rows],
            "rowCount": self.row_count,
        }

    @classmethod
    def from_value(cls, value: Value) -> "ResultSet":
        if not isinstance(value, dict):
            raise FaultError("bad-request", "result set must be a map")
        columns = value.get("columns")
        rows = value.get("rows")
        if not isinstance(columns, list) or not isinstance(rows, list):
            raise FaultError("bad-request", "result set must carry columns and rows")
        cols = tuple(Column.from_value(col) for col in columns)
        parsed_rows = []
        for row in rows:
            if not isinstance(row, list) or len(row) != len(cols):
                raise FaultError("bad-request", "result row arity does not match columns")
            parsed_rows.append(tuple(row))
        row_count = value.get("rowCount")
        if row_count != len(parsed_rows):
            raise FaultError("bad-request", "rowCount does not match rows")
        return cls(cols, tuple(parsed_rows), len(parsed_rows))


class TableStore:
    """Read-only warehouse of named tables."""

    def __init__(self, tables: Iterable[Table] = ()):
        self._tables = {table.name: table for table in tables}

    def get(self, name: str) -> Table | None:
        return self._tables.get(name)

    def names(self) -> list[str]:
        return sorted(self._tables)

    def add(self, table: Table) -> None:
        self._tables[table.name] = table


def _coerce(cell: str, column: Column, line: int) -> Value:
    if cell == "":
        return None
    try:
        if column.type == "int":
            return int(cell)
        if column.type == "float":
            return float(cell)
        if column.type == "bool":
            lowered = cell.strip().lower()
            if lowered in ("true", "1"):
                return True
            if lowered in ("false", "0"):
                return False
            raise ValueError(cell)
    except ValueError:
        raise IngestError(
            f"cannot coerce {cell!r} to {column.type}", line=line, column=column.name
        ) from None
    return cell


def load_table(csv_path: str | Path, schema: Iterable[Column], name: str) -> Table:
    """Load a headered CSV into a typed table; empty cells become null."""
    columns = tuple(schema)
    if not columns:
        raise IngestError("schema must be nonempty")
    for column in columns:
        column.validate()
    path = Path(csv_path)
    rows: list[tuple] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("missing header row", line=1) from None
        expected = [column.name for column in columns]
        if header != expected:
            raise IngestError(
                f"header {header!r} does not match schema columns {expected!r}", line=1
            )
        for record in reader:
            line = reader.line_num
            if len(record) != len(columns):
                raise IngestError(
                    f"row has {len(record)} cells, expected {len(columns)}", line=line
                )
            rows.append(
                tuple(_coerce(cell, column, line) for cell, column in zip(record, columns))
            )
    return Table(name=name, columns=columns, rows=tuple(rows))


def _literal_compatible(column: Column, literal: Value) -> bool:
    if literal is None:
        return True  # legal, but every comparison with null is false
    if isinstance(literal, bool):
        return column.type == "bool"
    if isinstance(literal, (int, float)):
        return column.type in ("int", "float")
    if isinstance(literal, str):
        return column.type == "string"
    return False


def _column_index(table: Table, name: str, role: str) -> int:
    for index, column in enumerate(table.columns):
        if column.name == name:
            return index
    raise FaultError(
        "bad-request",
        f"unknown {role} column {name!r} in dataset {table.name!r}",
        {"column": name},
    )


def execute_canonical(query: CanonicalQuery, store: TableStore) -> ResultSet:
    """Run the canonical pipeline: filter, stable sort, limit, project."""
    query.validate()
    table = store.get(query.dataset)
    if table is None:
        raise FaultError(
            "unknown-dataset", f"no such dataset: {query.dataset!r}", {"dataset": query.dataset}
        )

    checks = []
    for predicate in query.predicates:
        index = _column_index(table, predicate.column, "predicate")
        if not _literal_compatible(table.columns[index], predicate.literal):
            raise FaultError(
                "bad-request",
                f"literal {predicate.literal!r} is incompatible with column "
                f"{predicate.column!r} of type {table.columns[index].type}",
                {"column": predicate.column},
            )
        checks.append((index, _OPS[predicate.op], predicate.literal))

    rows = [
        row
        for row in table.rows
        if all(
            row[index] is not None and literal is not None and op(row[index], literal)
            for index, op, literal in checks
        )
    ]

    if query.order_by is not None:
        index = _column_index(table, query.order_by.column, "order")
        # Nulls sort before every value ascending (after, when descending);
        # the (rank, value) key never compares None with a value.
        rows.sort(
            key=lambda row: (0, 0) if row[index] is None else (1, row[index]),
            reverse=not query.order_by.ascending,
        )

    if query.limit is not None:
        rows = rows[: query.limit]

    if query.projection is None:
        out_columns = table.columns
        out_rows = tuple(tuple(row) for row in rows)
    else:
        indices = [_column_index(table, name, "projection") for name in query.projection]
        out_columns = tuple(table.columns[i] for i in indices)
        out_rows = tuple(tuple(row[i] for i in indices) for row in rows)

    return ResultSet(columns=out_columns, rows=out_rows, row_count=len(out_rows))
