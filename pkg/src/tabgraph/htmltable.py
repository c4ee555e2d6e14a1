"""HTML ``<table>`` ingestion with rowspan/colspan expansion."""

from __future__ import annotations

from dataclasses import dataclass, field
from html.parser import HTMLParser

from .errors import EmptyTable, MalformedTable, MultipleTables
from .table import CellSpec, TableGrid

MAX_COLSPAN = 1000
MAX_ROWSPAN = 65534


@dataclass
class ParseResult:
    grid: TableGrid
    caption: str | None = None
    diagnostics: list[dict] = field(default_factory=list)


@dataclass
class _RawCell:
    text_parts: list[str]
    rowspan: str | None
    colspan: str | None
    is_th: bool


class _TableCollector(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.depth = 0
        self.n_tables = 0
        self.rows: list[list[_RawCell]] = []
        self.cell: _RawCell | None = None
        self.caption: list[str] | None = None
        self.in_caption = False

    def _close_cell(self):
        if self.cell is not None:
            if not self.rows:
                self.rows.append([])
            self.rows[-1].append(self.cell)
            self.cell = None

    def handle_starttag(self, tag, attrs):
        if tag == "table":
            self.n_tables += 1
            if self.n_tables > 1:
                raise MultipleTables("input contains more than one <table> element")
            self.depth += 1
            return
        if self.depth == 0:
            return
        if tag == "tr":
            self._close_cell()
            self.rows.append([])
        elif tag in ("td", "th"):
            self._close_cell()
            a = dict(attrs)
            self.cell = _RawCell([], a.get("rowspan"), a.get("colspan"), tag == "th")
        elif tag == "br" and self.cell is not None:
            self.cell.text_parts.append(" ")
        elif tag == "caption":
            self.in_caption = True
            self.caption = []

    def handle_startendtag(self, tag, attrs):
        if tag == "br" and self.cell is not None:
            self.cell.text_parts.append(" ")
        elif tag == "table":
            self.handle_starttag(tag, attrs)
            self.handle_endtag(tag)

    def handle_endtag(self, tag):
        if self.depth == 0:
            return
        if tag in ("td", "th"):
            self._close_cell()
        elif tag == "tr":
            self._close_cell()
        elif tag == "caption":
            self.in_caption = False
        elif tag == "table":
            self._close_cell()
            self.depth -= 1

    def handle_data(self, data):
        if self.cell is not None:
            self.cell.text_parts.append(data)
        elif self.in_caption and self.caption is not None:
            self.caption.append(data)


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def _span(value: str | None, limit: int, what: str, where, strict: bool, diags: list[dict]) -> int:
    if value is None:
        return 1
    try:
        n = int(value.strip())
    except ValueError:
        n = 0
    if n < 1:
        if strict:
            raise MalformedTable(f"invalid {what}={value!r} at {where}")
        diags.append({"kind": "invalid_span", "attr": what, "value": value, "at": list(where)})
        return 1
    return min(n, limit)


def parse_html(html_text: str, *, strict: bool = False) -> ParseResult:
    """Parse exactly one HTML table into a canonical grid plus diagnostics.

    Ragged rows are padded with empty span-1 cells and rowspans running past
    the last row are clipped; with ``strict=True`` either raises
    ``MalformedTable`` instead. Overlapping spans always raise.
    """
    p = _TableCollector()
    p.feed(html_text)
    p.close()
    p._close_cell()
    if p.n_tables == 0:
        raise EmptyTable("no <table> element found")
    raw_rows = p.rows
    n_rows = len(raw_rows)
    if n_rows == 0:
        raise EmptyTable("table has no rows")

    diags: list[dict] = []
    occupied: dict[tuple[int, int], tuple[int, int]] = {}
    placed: list[tuple[int, int, int, int, _RawCell]] = []
    for i, row in enumerate(raw_rows):
        j = 0
        for k, raw in enumerate(row):
            while (i, j) in occupied:
                j += 1
            rs = _span(raw.rowspan, MAX_ROWSPAN, "rowspan", (i, k), strict, diags)
            cs = _span(raw.colspan, MAX_COLSPAN, "colspan", (i, k), strict, diags)
            if i + rs > n_rows:
                if strict:
                    raise MalformedTable(f"rowspan={rs} at ({i}, {j}) runs past the last row")
                diags.append({"kind": "clipped_rowspan", "at": [i, j], "from": rs, "to": n_rows - i})
                rs = n_rows - i
            for a in range(i, i + rs):
                for b in range(j, j + cs):
                    if (a, b) in occupied:
                        raise MalformedTable(
                            f"cell at ({i}, {j}) overlaps cell at {occupied[(a, b)]} at position ({a}, {b})"
                        )
            for a in range(i, i + rs):
                for b in range(j, j + cs):
                    occupied[(a, b)] = (i, j)
            placed.append((i, j, rs, cs, raw))
            j += cs

    n_cols = max((b + 1 for (_, b) in occupied), default=0)
    if n_cols == 0:
        raise EmptyTable("table has no cells")

    cells = [
        CellSpec(i, j, rs, cs, normalize_text("".join(raw.text_parts)), th_hint=raw.is_th)
        for i, j, rs, cs, raw in placed
    ]
    gaps = [(i, j) for i in range(n_rows) for j in range(n_cols) if (i, j) not in occupied]
    if gaps:
        if strict:
            raise MalformedTable(f"ragged rows: {len(gaps)} uncovered positions, first {gaps[:5]}")
        diags.append({"kind": "padded", "positions": [list(g) for g in gaps]})
        cells.extend(CellSpec(i, j, 1, 1, "") for i, j in gaps)

    caption = normalize_text("".join(p.caption)) if p.caption is not None else None
    return ParseResult(TableGrid(n_rows, n_cols, cells), caption or None, diags)


def parse_html_table(html_text: str, *, strict: bool = False) -> TableGrid:
    return parse_html(html_text, strict=strict).grid
