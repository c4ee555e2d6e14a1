"""Canonical table model: cells with merged spans on a rectangular grid."""

from __future__ import annotations

import html
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator

from .errors import EmptyTable, MalformedTable, MissingAnnotation


@dataclass(frozen=True)
class CellSpec:
    """One (possibly merged) cell, addressed by its top-left grid position."""

    row: int
    col: int
    row_span: int = 1
    col_span: int = 1
    text: str = ""
    # parser hint from <th>; structure analysis decides roles
    th_hint: bool = field(default=False, compare=False)

    @property
    def coord(self) -> tuple[int, int]:
        return (self.row, self.col)

    @property
    def area(self) -> int:
        return self.row_span * self.col_span

    def positions(self) -> Iterator[tuple[int, int]]:
        for i in range(self.row, self.row + self.row_span):
            for j in range(self.col, self.col + self.col_span):
                yield i, j

    def covers_row(self, i: int) -> bool:
        return self.row <= i < self.row + self.row_span

    def covers_col(self, j: int) -> bool:
        return self.col <= j < self.col + self.col_span

    def to_dict(self) -> dict:
        return {
            "row": self.row,
            "col": self.col,
            "row_span": self.row_span,
            "col_span": self.col_span,
            "text": self.text,
        }


class TableGrid:
    """An N x M grid where every position is owned by exactly one cell.

    Instances are immutable; cells are kept sorted by ``(row, col)``.
    """

    def __init__(self, n_rows: int, n_cols: int, cells: Iterable[CellSpec]):
        if n_rows < 1 or n_cols < 1:
            raise EmptyTable(f"table has {n_rows} rows and {n_cols} columns")
        cells = tuple(sorted(cells, key=lambda c: (c.row, c.col)))
        occ: list[list[int]] = [[-1] * n_cols for _ in range(n_rows)]
        for k, c in enumerate(cells):
            if c.row < 0 or c.col < 0 or c.row_span < 1 or c.col_span < 1:
                raise MalformedTable(f"invalid cell geometry {c.to_dict()}")
            if c.row + c.row_span > n_rows or c.col + c.col_span > n_cols:
                raise MalformedTable(f"cell at {c.coord} extends past the {n_rows}x{n_cols} grid")
            for i, j in c.positions():
                if occ[i][j] != -1:
                    other = cells[occ[i][j]]
                    raise MalformedTable(
                        f"cells at {other.coord} and {c.coord} overlap at position {(i, j)}"
                    )
                occ[i][j] = k
        gaps = [(i, j) for i in range(n_rows) for j in range(n_cols) if occ[i][j] == -1]
        if gaps:
            raise MalformedTable(f"uncovered grid positions {gaps[:5]}")
        object.__setattr__(self, "n_rows", n_rows)
        object.__setattr__(self, "n_cols", n_cols)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_occ", tuple(tuple(r) for r in occ))

    def __setattr__(self, name, value):
        raise AttributeError("TableGrid is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TableGrid):
            return NotImplemented
        return (self.n_rows, self.n_cols, self.cells) == (other.n_rows, other.n_cols, other.cells)

    def __hash__(self) -> int:
        return hash((self.n_rows, self.n_cols, self.cells))

    def __repr__(self) -> str:
        return f"TableGrid({self.n_rows}x{self.n_cols}, {len(self.cells)} cells)"

    def owner(self, i: int, j: int) -> CellSpec:
        return self.cells[self._occ[i][j]]

    def owner_index(self, i: int, j: int) -> int:
        return self._occ[i][j]

    def row_owners(self, i: int) -> list[CellSpec]:
        """Distinct cells owning a position in row ``i``, left to right."""
        return [self.cells[k] for k in _dedupe(self._occ[i])]

    def col_owners(self, j: int) -> list[CellSpec]:
        """Distinct cells owning a position in column ``j``, top to bottom."""
        return [self.cells[k] for k in _dedupe(r[j] for r in self._occ)]

    @cached_property
    def index_of(self) -> dict[tuple[int, int], int]:
        return {c.coord: k for k, c in enumerate(self.cells)}

    def text_matrix(self) -> list[list[str]]:
        """Per-position texts; merged cells repeat their text."""
        return [[self.cells[k].text for k in row] for row in self._occ]

    def map_text(self, fn) -> "TableGrid":
        return TableGrid(self.n_rows, self.n_cols, [replace(c, text=fn(c.text)) for c in self.cells])

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "cells": [c.to_dict() for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TableGrid":
        cells = [
            CellSpec(
                row=int(c["row"]),
                col=int(c["col"]),
                row_span=int(c.get("row_span", 1)),
                col_span=int(c.get("col_span", 1)),
                text=str(c.get("text", "")),
            )
            for c in d["cells"]
        ]
        return cls(int(d["n_rows"]), int(d["n_cols"]), cells)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "TableGrid":
        return cls.from_dict(json.loads(s))

    def to_html(self) -> str:
        """Serialize with the canonical HTML writer (one ``<tr>`` per grid row)."""
        out = ["<table>"]
        by_row: dict[int, list[CellSpec]] = {}
        for c in self.cells:
            by_row.setdefault(c.row, []).append(c)
        for i in range(self.n_rows):
            out.append("<tr>")
            for c in by_row.get(i, []):
                tag = "th" if c.th_hint else "td"
                attrs = ""
                if c.row_span > 1:
                    attrs += f' rowspan="{c.row_span}"'
                if c.col_span > 1:
                    attrs += f' colspan="{c.col_span}"'
                out.append(f"<{tag}{attrs}>{html.escape(c.text, quote=False)}</{tag}>")
            out.append("</tr>")
        out.append("</table>")
        return "".join(out)


def _dedupe(seq: Iterable[int]) -> list[int]:
    seen: set[int] = set()
    out = []
    for k in seq:
        if k not in seen:
            seen.add(k)
            out.append(k)
    return out


def from_rows(rows: list[list[str]]) -> TableGrid:
    """Build a span-free grid from a rectangular list of row texts."""
    if not rows or not rows[0]:
        raise EmptyTable("no rows")
    m = len(rows[0])
    if any(len(r) != m for r in rows):
        raise MalformedTable("rows have unequal lengths")
    return TableGrid(len(rows), m, [CellSpec(i, j, 1, 1, t) for i, r in enumerate(rows) for j, t in enumerate(r)])


@dataclass
class TaskAnnotation:
    """Downstream labels for one table.

    ``cell_labels`` is keyed by the top-left coordinate of each cell so that
    text rewrites such as numeric prefixing do not invalidate it.
    """

    cell_labels: dict[tuple[int, int], str] | None = None
    table_label: str | None = None
    qa_pairs: list[tuple[str, str]] | None = None

    def check_cells(self, grid: TableGrid) -> None:
        if self.cell_labels is None:
            raise MissingAnnotation("no cell labels")
        want = {c.coord for c in grid.cells}
        have = set(self.cell_labels)
        if want != have:
            missing = sorted(want - have)[:5]
            extra = sorted(have - want)[:5]
            raise MissingAnnotation(f"cell labels do not cover the table: missing={missing} extra={extra}")

    def to_dict(self) -> dict:
        d: dict = {}
        if self.cell_labels is not None:
            d["cell_labels"] = [
                {"row": r, "col": c, "label": lab} for (r, c), lab in sorted(self.cell_labels.items())
            ]
        if self.table_label is not None:
            d["table_label"] = self.table_label
        if self.qa_pairs is not None:
            d["qa_pairs"] = [{"question": q, "answer": a} for q, a in self.qa_pairs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskAnnotation":
        cell_labels = None
        if d.get("cell_labels") is not None:
            cell_labels = {(int(e["row"]), int(e["col"])): str(e["label"]) for e in d["cell_labels"]}
        qa = None
        if d.get("qa_pairs") is not None:
            qa = [(str(e["question"]), str(e["answer"])) for e in d["qa_pairs"]]
        return cls(cell_labels=cell_labels, table_label=d.get("table_label"), qa_pairs=qa)


def canonical_json(obj) -> str:
    """The byte-stable JSON rendering used for every artifact file."""
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"
