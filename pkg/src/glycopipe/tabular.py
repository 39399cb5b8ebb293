"""Delimiter-separated tables with two-pass column type inference.

The on-disk format is comma-separated UTF-8 text with a header row; an
empty field encodes a null. Column types are inferred as the narrowest of
{integer, real, text} that covers every non-empty cell, so a column stays
integer only while every cell parses as an integer, widens to real while
every cell parses as a finite float, and falls back to text otherwise.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

Cell = int | float | str | None

INTEGER = "integer"
REAL = "real"
TEXT = "text"


class TableError(ValueError):
    """Malformed tabular input (ragged rows, empty input, bad cells)."""


@dataclass
class RawTable:
    """Header plus row-major cells, each cell int, float, str or None."""

    header: list[str]
    rows: list[list[Cell]]
    col_types: list[str] = field(default_factory=list)

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise TableError(
                    f"row {i} has {len(row)} cells, expected {len(self.header)}"
                )
        if not self.col_types:
            self.col_types = _infer_types(self.header, self.rows)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[Cell]:
        try:
            j = self.header.index(name)
        except ValueError:
            raise TableError(f"no column named {name!r}") from None
        return [row[j] for row in self.rows]


def _classify(cell: str) -> str:
    try:
        int(cell)
        return INTEGER
    except ValueError:
        pass
    try:
        v = float(cell)
    except ValueError:
        return TEXT
    return REAL if math.isfinite(v) else TEXT


_WIDTH = {INTEGER: 0, REAL: 1, TEXT: 2}


def _infer_types(header, rows) -> list[str]:
    types = [INTEGER] * len(header)
    for row in rows:
        for j, cell in enumerate(row):
            if cell is None:
                continue
            if isinstance(cell, str):
                t = TEXT
            elif isinstance(cell, bool):
                t = TEXT
            elif isinstance(cell, int):
                t = INTEGER
            else:
                t = REAL
            if _WIDTH[t] > _WIDTH[types[j]]:
                types[j] = t
    return types


def parse_table(text: str) -> RawTable:
    """Parse delimiter-separated text into a typed :class:`RawTable`.

    The first row is the header. Inference is two-pass: scan every
    non-empty cell to fix each column's type, then parse cells under that
    type. Empty fields become None.

    Raises
    ------
    TableError
        On empty input or a row whose cell count differs from the header
        (the error names the offending data row index, 0-based).
    """
    reader = csv.reader(io.StringIO(text))
    lines = [row for row in reader]
    if not lines:
        raise TableError("empty input")
    header = lines[0]
    raw_rows = lines[1:]
    for i, row in enumerate(raw_rows):
        if len(row) != len(header):
            raise TableError(f"ragged row at row {i}: {len(row)} cells, expected {len(header)}")

    # pass 1: narrowest covering type per column
    types = [INTEGER] * len(header)
    for row in raw_rows:
        for j, cell in enumerate(row):
            if cell == "":
                continue
            t = _classify(cell)
            if _WIDTH[t] > _WIDTH[types[j]]:
                types[j] = t

    # pass 2: parse under the inferred types
    rows: list[list[Cell]] = []
    for row in raw_rows:
        parsed: list[Cell] = []
        for j, cell in enumerate(row):
            if cell == "":
                parsed.append(None)
            elif types[j] == INTEGER:
                parsed.append(int(cell))
            elif types[j] == REAL:
                parsed.append(float(cell))
            else:
                parsed.append(cell)
        rows.append(parsed)
    return RawTable(header=header, rows=rows, col_types=types)


def _format_cell(cell: Cell) -> str:
    if cell is None:
        return ""
    if isinstance(cell, float):
        return repr(cell)  # shortest round-trip representation
    return str(cell)


def serialize_table(table: RawTable) -> str:
    """Render a table as comma-separated text; inverse of parse_table.

    Reals are written with full round-trip precision so
    parse(serialize(t)) reproduces cell values exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([_format_cell(c) for c in row])
    return buf.getvalue()


def read_table(path) -> RawTable:
    with open(path, encoding="utf-8") as fh:
        return parse_table(fh.read())


def write_table(table: RawTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_table(table))
