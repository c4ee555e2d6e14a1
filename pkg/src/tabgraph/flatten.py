"""Collapse a hierarchical header region into a single header row."""

from __future__ import annotations

from dataclasses import replace

from .errors import NoHeaderRows
from .structure import get_thrn
from .table import CellSpec, TableGrid


def header_path(grid: TableGrid, col: int, thrn: int) -> list[CellSpec]:
    """Distinct non-empty header cells above ``col``, top to bottom, repeated texts dropped."""
    seen_cells: set[tuple[int, int]] = set()
    seen_texts: set[str] = set()
    path = []
    for i in range(thrn):
        c = grid.owner(i, col)
        if c.coord in seen_cells:
            continue
        seen_cells.add(c.coord)
        if not c.text or c.text in seen_texts:
            continue
        seen_texts.add(c.text)
        path.append(c)
    return path


def flatten_headers(grid: TableGrid, separator: str = " | ", thrn: int | None = None) -> TableGrid:
    """Join each column's header path into one header row.

    A header cell whose row span reaches past the header region keeps its
    below-header part as a data cell with the same text.
    """
    if thrn is None:
        thrn = get_thrn(grid)
    if thrn < 1:
        raise NoHeaderRows("grid has no top header rows")
    if thrn == 1:
        return grid
    shift = thrn - 1
    cells = []
    for j in range(grid.n_cols):
        path = header_path(grid, j, thrn)
        cells.append(
            CellSpec(0, j, 1, 1, separator.join(c.text for c in path), th_hint=any(c.th_hint for c in path))
        )
    for c in grid.cells:
        if c.row >= thrn:
            cells.append(replace(c, row=c.row - shift))
        elif c.row + c.row_span > thrn:
            cells.append(replace(c, row=1, row_span=c.row + c.row_span - thrn))
    return TableGrid(grid.n_rows - shift, grid.n_cols, cells)
