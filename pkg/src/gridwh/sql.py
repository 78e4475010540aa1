"""Mini-SQL layer: one canonical query shape, three vendor dialects.

The canonical grammar is single-table SELECT with conjunctive predicates:

    SELECT (cols|*) FROM dataset
        [WHERE col op literal {AND col op literal}]
        [ORDER BY col [ASC|DESC]] [LIMIT n]

Keywords are case-insensitive, identifiers case-sensitive, string literals
single-quoted with doubled-quote escaping.  The dialects diverge exactly where
real vendors do: row limiting (trailing LIMIT, SELECT TOP n, or a ROWNUM
wrapper subquery) and identifier quoting ("x" vs [x]).  Each dialect's parser
accepts only its own syntax, so translate/parse round-trips are exact and a
foreign construct is a parse error, not a silent reinterpretation.

Identifiers that are not bare words, or that collide with a reserved word,
are emitted quoted; otherwise they could not be re-parsed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .wire import FaultError, Value

PREDICATE_OPS = ("=", "!=", "<", "<=", ">", ">=")

_BARE_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_WORD_SCAN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_RESERVED = frozenset(
    {"SELECT", "TOP", "FROM", "WHERE", "AND", "ORDER", "BY", "ASC", "DESC", "LIMIT", "ROWNUM", "TRUE", "FALSE", "NULL"}
)
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class Predicate:
    column: str
    op: str
    literal: Value  # scalar only


@dataclass(frozen=True)
class OrderBy:
    column: str
    ascending: bool = True


@dataclass(frozen=True)
class CanonicalQuery:
    """Parsed, dialect-neutral query."""

    dataset: str
    projection: tuple[str, ...] | None = None  # None selects all columns
    predicates: tuple[Predicate, ...] = ()
    order_by: OrderBy | None = None
    limit: int | None = None

    def validate(self) -> None:
        if not isinstance(self.dataset, str) or not self.dataset:
            raise FaultError("bad-request", "query dataset must be a nonempty string")
        if self.projection is not None:
            if not self.projection:
                raise FaultError("bad-request", "projection list must be nonempty")
            if any(not isinstance(col, str) or not col for col in self.projection):
                raise FaultError("bad-request", "projection columns must be nonempty strings")
            if len(set(self.projection)) != len(self.projection):
                raise FaultError("bad-request", "projection columns must be unique")
        for pred in self.predicates:
            if not isinstance(pred.column, str) or not pred.column:
                raise FaultError("bad-request", "predicate column must be a nonempty string")
            if pred.op not in PREDICATE_OPS:
                raise FaultError("bad-request", f"unknown predicate op: {pred.op!r}")
            _check_scalar(pred.literal)
        if self.order_by is not None and (
            not isinstance(self.order_by.column, str) or not self.order_by.column
        ):
            raise FaultError("bad-request", "order column must be a nonempty string")
        if self.limit is not None and (
            isinstance(self.limit, bool) or not isinstance(self.limit, int) or self.limit < 0
        ):
            raise FaultError("bad-request", "limit must be a nonnegative integer")


def _check_scalar(literal: Value) -> None:
    if literal is None or isinstance(literal, (str, bool, int)):
        return
    if isinstance(literal, float):
        if not math.isfinite(literal):
            raise FaultError("bad-request", f"non-finite literal: {literal!r}")
        return
    raise FaultError("bad-request", f"predicate literal must be a scalar, got {type(literal).__name__}")


@dataclass(frozen=True)
class Dialect:
    """Vendor dialect: how limits are rendered and identifiers quoted."""

    id: str
    limit_style: str  # "limit" | "top" | "rownum"
    quote_open: str
    quote_close: str


DIALECTS: dict[str, Dialect] = {
    "ansi": Dialect("ansi", "limit", '"', '"'),
    "tsql": Dialect("tsql", "top", "[", "]"),
    "oracle": Dialect("oracle", "rownum", '"', '"'),
}


def get_dialect(dialect: Dialect | str) -> Dialect:
    if isinstance(dialect, Dialect):
        return dialect
    found = DIALECTS.get(dialect)
    if found is None:
        raise FaultError("dialect-unsupported", f"unknown dialect: {dialect!r}")
    return found


def _quote_identifier(name: str, dialect: Dialect) -> str:
    if _BARE_WORD_RE.fullmatch(name) and name.upper() not in _RESERVED:
        return name
    return dialect.quote_open + name.replace(dialect.quote_close, dialect.quote_close * 2) + dialect.quote_close


def render_literal(literal: Value) -> str:
    if literal is None:
        return "NULL"
    if isinstance(literal, bool):
        return "TRUE" if literal else "FALSE"
    if isinstance(literal, int):
        return str(literal)
    if isinstance(literal, float):
        return repr(literal)
    if isinstance(literal, str):
        return "'" + literal.replace("'", "''") + "'"
    raise FaultError("bad-request", f"cannot render literal of type {type(literal).__name__}")


def translate(query: CanonicalQuery, dialect: Dialect | str) -> str:
    """Render a canonical query as SQL text in the given dialect."""
    d = get_dialect(dialect)
    query.validate()

    projection = (
        "*"
        if query.projection is None
        else ", ".join(_quote_identifier(col, d) for col in query.projection)
    )
    head = f"SELECT {projection}"
    if d.limit_style == "top" and query.limit is not None:
        head = f"SELECT TOP {query.limit} {projection}"
    clauses = [head, f"FROM {_quote_identifier(query.dataset, d)}"]
    if query.predicates:
        rendered = " AND ".join(
            f"{_quote_identifier(p.column, d)} {p.op} {render_literal(p.literal)}"
            for p in query.predicates
        )
        clauses.append(f"WHERE {rendered}")
    if query.order_by is not None:
        direction = "ASC" if query.order_by.ascending else "DESC"
        clauses.append(f"ORDER BY {_quote_identifier(query.order_by.column, d)} {direction}")
    if d.limit_style == "limit" and query.limit is not None:
        clauses.append(f"LIMIT {query.limit}")
    text = " ".join(clauses)
    if d.limit_style == "rownum" and query.limit is not None:
        text = f"SELECT * FROM ({text}) WHERE ROWNUM <= {query.limit}"
    return text


# --- tokenizer -------------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str  # keyword | ident | string | int | float | op | punct | end
    value: Value
    pos: int


def _parse_fault(pos: int, expected: str, found: str | None = None) -> FaultError:
    message = f"expected {expected} at offset {pos}"
    if found:
        message += f", found {found}"
    return FaultError("parse-error", message, {"position": pos, "expected": expected})


def _tokenize(text: str, dialect: Dialect) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in ",()":
            tokens.append(_Token("punct", ch, i))
            i += 1
            continue
        if ch == "*":
            tokens.append(_Token("punct", "*", i))
            i += 1
            continue
        if text.startswith(("<=", ">=", "!=", ), i):
            tokens.append(_Token("op", text[i : i + 2], i))
            i += 2
            continue
        if ch in "<>=":
            tokens.append(_Token("op", ch, i))
            i += 1
            continue
        if ch == "'":
            start = i
            value, i = _scan_quoted(text, i, "'", "string literal")
            tokens.append(_Token("string", value, start))
            continue
        if ch == dialect.quote_open:
            start = i
            value, i = _scan_quoted(text, i, dialect.quote_close, "quoted identifier")
            tokens.append(_Token("ident", value, start))
            continue
        match = _NUMBER_RE.match(text, i)
        if match:
            lexeme = match.group()
            if "." in lexeme or "e" in lexeme or "E" in lexeme:
                tokens.append(_Token("float", float(lexeme), i))
            else:
                tokens.append(_Token("int", int(lexeme), i))
            i = match.end()
            continue
        word = _WORD_SCAN_RE.match(text, i)
        if word:
            lexeme = word.group()
            upper = lexeme.upper()
            if upper in _RESERVED:
                tokens.append(_Token("keyword", upper, i))
            else:
                tokens.append(_Token("ident", lexeme, i))
            i += len(lexeme)
            continue
        raise _parse_fault(i, "a token", repr(ch))
    tokens.append(_Token("end", None, n))
    return tokens


def _scan_quoted(text: str, start: int, close: str, what: str) -> tuple[str, int]:
    """Scan from the opening quote; doubled close characters are escapes."""
    i = start + 1
    out: list[str] = []
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == close:
            if i + 1 < n and text[i + 1] == close:
                out.append(close)
                i += 2
                continue
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise _parse_fault(start, f"closing {close!r} for {what}")


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, dialect: Dialect):
        self.dialect = dialect
        self.tokens = _tokenize(text, dialect)
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        index = min(self.pos + ahead, len(self.tokens) - 1)
        return self.tokens[index]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        if token.kind != "end":
            self.pos += 1
        return token

    def expect_keyword(self, word: str) -> None:
        token = self.peek()
        if token.kind != "keyword" or token.value != word:
            raise _parse_fault(token.pos, word, self._describe(token))
        self.advance()

    def match_keyword(self, word: str) -> bool:
        token = self.peek()
        if token.kind == "keyword" and token.value == word:
            self.advance()
            return True
        return False

    def expect_punct(self, punct: str) -> None:
        token = self.peek()
        if token.kind != "punct" or token.value != punct:
            raise _parse_fault(token.pos, repr(punct), self._describe(token))
        self.advance()

    def expect_identifier(self) -> str:
        token = self.peek()
        if token.kind != "ident":
            raise _parse_fault(token.pos, "an identifier", self._describe(token))
        self.advance()
        return token.value

    def expect_nonnegative_int(self) -> int:
        token = self.peek()
        if token.kind != "int" or token.value < 0:
            raise _parse_fault(token.pos, "a nonnegative integer", self._describe(token))
        self.advance()
        return token.value

    def expect_end(self) -> None:
        token = self.peek()
        if token.kind != "end":
            raise _parse_fault(token.pos, "end of input", self._describe(token))

    @staticmethod
    def _describe(token: _Token) -> str:
        if token.kind == "end":
            return "end of input"
        return repr(token.value)

    # grammar -----------------------------------------------------------

    def parse_query(self) -> CanonicalQuery:
        if self.dialect.limit_style == "rownum" and self._looks_wrapped():
            return self._parse_rownum_wrapper()
        return self._parse_plain(allow_limit=True)

    def _looks_wrapped(self) -> bool:
        return (
            self.peek().kind == "keyword"
            and self.peek().value == "SELECT"
            and self.peek(1).kind == "punct"
            and self.peek(1).value == "*"
            and self.peek(2).kind == "keyword"
            and self.peek(2).value == "FROM"
            and self.peek(3).kind == "punct"
            and self.peek(3).value == "("
        )

    def _parse_rownum_wrapper(self) -> CanonicalQuery:
        self.expect_keyword("SELECT")
        self.expect_punct("*")
        self.expect_keyword("FROM")
        self.expect_punct("(")
        inner = self._parse_plain(allow_limit=False)
        self.expect_punct(")")
        self.expect_keyword("WHERE")
        self.expect_keyword("ROWNUM")
        token = self.peek()
        if token.kind != "op" or token.value != "<=":
            raise _parse_fault(token.pos, "'<='", self._describe(token))
        self.advance()
        limit = self.expect_nonnegative_int()
        self.expect_end()
        return CanonicalQuery(
            dataset=inner.dataset,
            projection=inner.projection,
            predicates=inner.predicates,
            order_by=inner.order_by,
            limit=limit,
        )

    def _parse_plain(self, allow_limit: bool) -> CanonicalQuery:
        self.expect_keyword("SELECT")
        limit: int | None = None
        if self.dialect.limit_style == "top" and self.match_keyword("TOP"):
            limit = self.expect_nonnegative_int()
        projection = self._parse_projection()
        self.expect_keyword("FROM")
        dataset = self.expect_identifier()
        predicates = self._parse_where()
        order_by = self._parse_order()
        if allow_limit and self.dialect.limit_style == "limit" and self.match_keyword("LIMIT"):
            limit = self.expect_nonnegative_int()
        if allow_limit and self.dialect.limit_style != "rownum":
            self.expect_end()
        return CanonicalQuery(
            dataset=dataset,
            projection=projection,
            predicates=predicates,
            order_by=order_by,
            limit=limit,
        )

    def _parse_projection(self) -> tuple[str, ...] | None:
        token = self.peek()
        if token.kind == "punct" and token.value == "*":
            self.advance()
            return None
        columns = [self.expect_identifier()]
        while self.peek().kind == "punct" and self.peek().value == ",":
            self.advance()
            columns.append(self.expect_identifier())
        return tuple(columns)

    def _parse_where(self) -> tuple[Predicate, ...]:
        if not self.match_keyword("WHERE"):
            return ()
        predicates = [self._parse_predicate()]
        while self.match_keyword("AND"):
            predicates.append(self._parse_predicate())
        return tuple(predicates)

    def _parse_predicate(self) -> Predicate:
        column = self.expect_identifier()
        token = self.peek()
        if token.kind != "op" or token.value not in PREDICATE_OPS:
            raise _parse_fault(token.pos, "a comparison operator", self._describe(token))
        self.advance()
        literal = self._parse_literal()
        return Predicate(column, token.value, literal)

    def _parse_literal(self) -> Value:
        token = self.peek()
        if token.kind in ("string", "int", "float"):
            self.advance()
            return token.value
        if token.kind == "keyword" and token.value in ("TRUE", "FALSE", "NULL"):
            self.advance()
            return {"TRUE": True, "FALSE": False, "NULL": None}[token.value]
        raise _parse_fault(token.pos, "a literal", self._describe(token))

    def _parse_order(self) -> OrderBy | None:
        if not self.match_keyword("ORDER"):
            return None
        self.expect_keyword("BY")
        column = self.expect_identifier()
        ascending = True
        if self.match_keyword("DESC"):
            ascending = False
        else:
            self.match_keyword("ASC")
        return OrderBy(column, ascending)


def parse(text: str, dialect: Dialect | str) -> CanonicalQuery:
    """Parse SQL text in one specific dialect; foreign syntax is a parse error."""
    d = get_dialect(dialect)
    if not isinstance(text, str):
        raise FaultError("parse-error", "query text must be a string", {"position": 0, "expected": "text"})
    parser = _Parser(text, d)
    query = parser.parse_query()
    parser.expect_end()
    query.validate()
    return query


def parse_query(text: str) -> CanonicalQuery:
    """Parse the canonical grammar (syntactically the ansi dialect)."""
    return parse(text, "ansi")
