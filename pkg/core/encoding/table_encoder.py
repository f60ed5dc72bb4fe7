"""
Table encoding: a series becomes a table (time column + one column per channel),
which is then serialized as DFLoader, Markdown, JSON or HTML text.
"""

import html
import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from html.parser import HTMLParser
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.dataset_store import TIME_COLUMN, TimeSeriesSample
from utils.error_handler import TableFormatError

DEFAULT_PRECISION = 4


@dataclass(frozen=True)
class TableDocument:
    """Augmented table: `time_index` is None when the time column is ablated"""
    channel_names: tuple
    values: np.ndarray
    time_index: Optional[tuple] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise TableFormatError(f"Table values must be 2-D, got shape {values.shape}")
        if len(self.channel_names) != values.shape[1]:
            raise TableFormatError(f"{len(self.channel_names)} channel names for {values.shape[1]} columns")
        if self.time_index is not None:
            if len(self.time_index) != values.shape[0]:
                raise TableFormatError(f"{len(self.time_index)} time labels for {values.shape[0]} rows")
            numeric = [v for v in self.time_index if isinstance(v, (int, float))]
            if len(numeric) == len(self.time_index) and any(b <= a for a, b in zip(numeric, numeric[1:])):
                raise TableFormatError("Numeric time index must be strictly increasing")
        object.__setattr__(self, 'channel_names', tuple(self.channel_names))
        object.__setattr__(self, 'values', values)
        if self.time_index is not None:
            object.__setattr__(self, 'time_index', tuple(self.time_index))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def has_time(self) -> bool:
        return self.time_index is not None

    @property
    def columns(self) -> List[str]:
        return ([TIME_COLUMN] if self.has_time else []) + list(self.channel_names)


def to_table(sample: TimeSeriesSample, channel_names: Sequence[str], include_time: bool = True) -> TableDocument:
    """Reformulate a sample as a table with time index 0..t-1"""
    if len(channel_names) != sample.n_channels:
        raise TableFormatError(f"{len(channel_names)} channel names for {sample.n_channels} channels")
    time_index = tuple(range(sample.length)) if include_time else None
    return TableDocument(channel_names=tuple(channel_names), values=sample.values.copy(), time_index=time_index)


def format_number(value: float, precision: int = DEFAULT_PRECISION) -> str:
    """Fixed-point with `precision` decimals, trailing zeros and point stripped"""
    text = f"{value:.{precision}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text == "-0":
        text = "0"
    return text


def _format_time(label) -> str:
    if isinstance(label, (int, np.integer)):
        return str(int(label))
    if isinstance(label, float):
        return format_number(label)
    return str(label)


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four characters"""
    return math.ceil(len(text) / 4)


class TableSerializer(ABC):
    """One text grammar for tables"""

    name: str = ""

    def __init__(self, precision: int = DEFAULT_PRECISION):
        self.precision = precision

    def _cells(self, table: TableDocument) -> List[List[str]]:
        """Row-major cell text including the time column"""
        rows = []
        for i in range(table.n_rows):
            row = [_format_time(table.time_index[i])] if table.has_time else []
            row.extend(format_number(v, self.precision) for v in table.values[i])
            rows.append(row)
        return rows

    @abstractmethod
    def serialize(self, table: TableDocument) -> str:
        pass

    @abstractmethod
    def parse(self, text: str) -> Dict[str, List[str]]:
        """Column name -> cell texts, in column order"""
        pass


class DFLoaderSerializer(TableSerializer):
    """Column-oriented DataFrame-constructor text"""

    name = "dfloader"
    PREAMBLE = "pd.DataFrame({"
    CLOSING = "})"
    _LINE = re.compile(r'^("(?:[^"\\]|\\.)*"): \[(.*)\],$')

    def serialize(self, table: TableDocument) -> str:
        cells = self._cells(table)
        lines = [self.PREAMBLE]
        for j, column in enumerate(table.columns):
            values = ", ".join(row[j] for row in cells)
            lines.append(f"{json.dumps(column)}: [{values}],")
        lines.append(self.CLOSING)
        return "\n".join(lines)

    def parse(self, text: str) -> Dict[str, List[str]]:
        lines = text.split("\n")
        if len(lines) < 2 or lines[0] != self.PREAMBLE or lines[-1] != self.CLOSING:
            raise TableFormatError("DFLoader text must start with 'pd.DataFrame({' and end with '})'")
        columns = {}
        for line in lines[1:-1]:
            match = self._LINE.match(line)
            if not match:
                raise TableFormatError(f"Malformed DFLoader column line: {line[:60]!r}")
            name = json.loads(match.group(1))
            body = match.group(2).strip()
            columns[name] = [cell.strip() for cell in body.split(",")] if body else []
        return columns


class MarkdownSerializer(TableSerializer):
    name = "markdown"

    @staticmethod
    def _escape(text: str) -> str:
        return text.replace("|", "\\|")

    def serialize(self, table: TableDocument) -> str:
        header = "| " + " | ".join(self._escape(c) for c in table.columns) + " |"
        separator = "|" + "|".join(" --- " for _ in table.columns) + "|"
        rows = ["| " + " | ".join(row) + " |" for row in self._cells(table)]
        return "\n".join([header, separator] + rows)

    @staticmethod
    def _split(line: str) -> List[str]:
        line = line.strip()
        if not (line.startswith("|") and line.endswith("|")):
            raise TableFormatError(f"Markdown row must be enclosed in pipes: {line[:60]!r}")
        cells = re.split(r"(?<!\\)\|", line[1:-1])
        return [cell.strip().replace("\\|", "|") for cell in cells]

    def parse(self, text: str) -> Dict[str, List[str]]:
        lines = [line for line in text.split("\n") if line.strip()]
        if len(lines) < 2:
            raise TableFormatError("Markdown table needs a header and a separator row")
        header = self._split(lines[0])
        if any(cell != "---" for cell in self._split(lines[1])):
            raise TableFormatError("Second Markdown row must be the '---' separator")
        columns = {name: [] for name in header}
        for line in lines[2:]:
            cells = self._split(line)
            if len(cells) != len(header):
                raise TableFormatError(f"Markdown row has {len(cells)} cells, header has {len(header)}")
            for name, cell in zip(header, cells):
                columns[name].append(cell)
        return columns


class JsonSerializer(TableSerializer):
    """Row-oriented array of objects"""

    name = "json"

    def serialize(self, table: TableDocument) -> str:
        keys = [json.dumps(c) for c in table.columns]
        objects = []
        for row in self._cells(table):
            if table.has_time and not isinstance(table.time_index[0], (int, float, np.integer)):
                row = [json.dumps(row[0])] + row[1:]
            objects.append("{" + ", ".join(f"{k}: {v}" for k, v in zip(keys, row)) + "}")
        return "[" + ", ".join(objects) + "]"

    def parse(self, text: str) -> Dict[str, List[str]]:
        try:
            records = json.loads(text)
        except json.JSONDecodeError as e:
            raise TableFormatError(f"Invalid JSON table: {e}")
        if not isinstance(records, list) or not all(isinstance(r, dict) for r in records):
            raise TableFormatError("JSON table must be an array of objects")
        if not records:
            return {}
        names = list(records[0].keys())
        columns = {name: [] for name in names}
        for record in records:
            if list(record.keys()) != names:
                raise TableFormatError("JSON rows disagree on keys")
            for name in names:
                columns[name].append(str(record[name]))
        return columns


class _HtmlTableParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.header: List[str] = []
        self.rows: List[List[str]] = []
        self._cell: Optional[List[str]] = None
        self._section: Optional[str] = None
        self._row: Optional[List[str]] = None
        self.tables = 0

    def handle_starttag(self, tag, attrs):
        if tag == "table":
            self.tables += 1
        elif tag in ("thead", "tbody"):
            self._section = tag
        elif tag == "tr":
            self._row = []
        elif tag in ("th", "td"):
            self._cell = []

    def handle_endtag(self, tag):
        if tag in ("th", "td") and self._cell is not None and self._row is not None:
            self._row.append("".join(self._cell).strip())
            self._cell = None
        elif tag == "tr" and self._row is not None:
            if self._section == "thead":
                self.header = self._row
            else:
                self.rows.append(self._row)
            self._row = None

    def handle_data(self, data):
        if self._cell is not None:
            self._cell.append(data)


class HtmlSerializer(TableSerializer):
    """Minimal thead/tbody markup without attributes"""

    name = "html"

    def serialize(self, table: TableDocument) -> str:
        head = "".join(f"<th>{html.escape(c)}</th>" for c in table.columns)
        body = "".join("<tr>" + "".join(f"<td>{cell}</td>" for cell in row) + "</tr>"
                       for row in self._cells(table))
        return f"<table><thead><tr>{head}</tr></thead><tbody>{body}</tbody></table>"

    def parse(self, text: str) -> Dict[str, List[str]]:
        if not text.strip().startswith("<table>") or not text.strip().endswith("</table>"):
            raise TableFormatError("HTML table must be a single <table> element")
        parser = _HtmlTableParser()
        parser.feed(text)
        parser.close()
        if parser.tables != 1 or not parser.header:
            raise TableFormatError("HTML table needs exactly one table with a header row")
        columns = {name: [] for name in parser.header}
        for row in parser.rows:
            if len(row) != len(parser.header):
                raise TableFormatError(f"HTML row has {len(row)} cells, header has {len(parser.header)}")
            for name, cell in zip(parser.header, row):
                columns[name].append(cell)
        return columns


SERIALIZERS = {cls.name: cls for cls in (DFLoaderSerializer, MarkdownSerializer, JsonSerializer, HtmlSerializer)}
FORMAT_NAMES = tuple(SERIALIZERS)


@dataclass(frozen=True)
class TableFormat:
    kind: str = "dfloader"
    float_precision: int = DEFAULT_PRECISION

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in SERIALIZERS:
            raise TableFormatError(f"Unknown table format '{self.kind}'. Valid formats: {', '.join(FORMAT_NAMES)}")
        if self.float_precision < 1:
            raise TableFormatError(f"float_precision must be positive, got {self.float_precision}")
        object.__setattr__(self, 'kind', kind)

    def serializer(self) -> TableSerializer:
        return SERIALIZERS[self.kind](self.float_precision)


def serialize(table: TableDocument, table_format: TableFormat) -> str:
    """Deterministic text rendering of `table`"""
    return table_format.serializer().serialize(table)


def _time_value(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def parse_table(text: str, table_format: TableFormat, has_time: bool = True) -> TableDocument:
    """
    Recover a TableDocument from text produced by `serialize` with the same format.

    Raises:
        TableFormatError: grammar violation
    """
    if not text or not text.strip():
        raise TableFormatError("Empty table text")
    columns = table_format.serializer().parse(text)
    names = list(columns)
    if has_time:
        if not names or names[0] != TIME_COLUMN:
            raise TableFormatError(f"First column must be '{TIME_COLUMN}'")
        time_index = tuple(_time_value(v) for v in columns[TIME_COLUMN])
        names = names[1:]
    else:
        time_index = None
    if not names:
        raise TableFormatError("Table has no channel columns")
    lengths = {len(columns[name]) for name in names}
    if len(lengths) != 1:
        raise TableFormatError("Columns have different lengths")
    try:
        values = np.array([[float(v) for v in columns[name]] for name in names], dtype=np.float64).T
    except ValueError as e:
        raise TableFormatError(f"Non-numeric cell: {e}")
    if values.size == 0:
        raise TableFormatError("Table has no rows")
    return TableDocument(channel_names=tuple(names), values=values, time_index=time_index)
