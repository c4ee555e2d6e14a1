"""Header-region detection, row typing, cell roles and table orientation."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .errors import RowOutOfRange
from .numeric import is_numeric
from .table import CellSpec, TableGrid


class RowType(str, enum.Enum):
    HEADER = "HeaderRow"
    DATA = "DataRow"


class CellRole(str, enum.Enum):
    HEADER = "HeaderCell"
    DATA = "DataCell"


class Orientation(str, enum.Enum):
    HORIZONTAL = "Horizontal"
    VERTICAL = "Vertical"


def get_thrn(grid: TableGrid) -> int:
    """Top header row number: the largest row span among first-row cells."""
    thrn = 0
    for cell in grid.row_owners(0):
        thrn = max(cell.row_span, thrn)
    return thrn


def identify_row_type(grid: TableGrid, row_index: int, thrn: int | None = None) -> RowType:
    if not 0 <= row_index < grid.n_rows:
        raise RowOutOfRange(f"row {row_index} outside 0..{grid.n_rows - 1}")
    if thrn is None:
        thrn = get_thrn(grid)
    first = grid.owner(row_index, 0)
    if row_index < thrn:
        return RowType.HEADER
    if first.col_span == grid.n_cols:
        return RowType.HEADER
    return RowType.DATA


def row_types(grid: TableGrid) -> list[RowType]:
    thrn = get_thrn(grid)
    return [identify_row_type(grid, i, thrn) for i in range(grid.n_rows)]


def classify_cell_roles(grid: TableGrid, thrn: int | None = None) -> dict[CellSpec, CellRole]:
    """HeaderCell for cells touching the top header rows or spanning the full width."""
    if thrn is None:
        thrn = get_thrn(grid)
    return {
        c: CellRole.HEADER if (c.row < thrn or c.col_span == grid.n_cols) else CellRole.DATA
        for c in grid.cells
    }


def transpose(grid: TableGrid) -> TableGrid:
    cells = [
        CellSpec(c.col, c.row, c.col_span, c.row_span, c.text, th_hint=c.th_hint) for c in grid.cells
    ]
    return TableGrid(grid.n_cols, grid.n_rows, cells)


# --- orientation ---------------------------------------------------------

FEATURE_NAMES = (
    "edge_numeric_contrast",
    "homogeneity_contrast",
    "edge_length_contrast",
    "merge_axis_contrast",
    "aspect",
)


@dataclass(frozen=True)
class OrientationConfig:
    """Linear decision rule over the five orientation features.

    Every feature is signed so that positive values point to a vertical table
    (headers down the first column).
    """

    weights: tuple[float, ...] = (1.0, 1.0, 0.25, 0.25, 0.25)
    threshold: float = 0.5


def _fraction(flags: list[bool]) -> float:
    return sum(flags) / len(flags) if flags else 0.0


def _edge_cells(grid: TableGrid) -> tuple[list[CellSpec], list[CellSpec]]:
    corner = grid.owner(0, 0)
    row0 = [c for c in grid.row_owners(0) if c is not corner and c.text]
    col0 = [c for c in grid.col_owners(0) if c is not corner and c.text]
    return row0, col0


_YEAR_RE = re.compile(r"^(1[89]|2[01])\d\d$")


def _value_like(text: str) -> bool:
    """Numeric, but not a bare year; years are common header labels."""
    return is_numeric(text) and not _YEAR_RE.match(text.strip())


def _mixed(texts: list[str]) -> bool | None:
    """Whether a line mixes numeric and non-numeric cells; None below two values."""
    vals = [is_numeric(t) for t in texts if t]
    if len(vals) < 2:
        return None
    return any(vals) and not all(vals)


def orientation_features(grid: TableGrid) -> list[float]:
    row0, col0 = _edge_cells(grid)

    f1 = _fraction([_value_like(c.text) for c in row0]) - _fraction([_value_like(c.text) for c in col0])

    # body = positions outside the top header rows and the left header columns
    top = get_thrn(grid)
    left = max(c.col_span for c in grid.col_owners(0))
    # a merged cell is one value: it counts in the row and column of its top-left corner
    body = [c for c in grid.cells if c.row >= top and c.col >= left]
    body_rows = [[c.text for c in body if c.row == i] for i in range(top, grid.n_rows)]
    body_cols = [[c.text for c in body if c.col == j] for j in range(left, grid.n_cols)]
    # types that change down a column but not along a row point to a vertical table
    rows_mixed = [h for h in map(_mixed, body_rows) if h is not None]
    cols_mixed = [h for h in map(_mixed, body_cols) if h is not None]
    f2 = _fraction(cols_mixed) - _fraction(rows_mixed)

    len_row0 = sum(len(c.text) for c in row0) / len(row0) if row0 else 0.0
    len_col0 = sum(len(c.text) for c in col0) / len(col0) if col0 else 0.0
    f3 = (len_row0 - len_col0) / max(len_row0, len_col0, 1.0)

    down = sum(1 for c in grid.cells if c.row_span > 1 and c.col_span == 1)
    across = sum(1 for c in grid.cells if c.col_span > 1 and c.row_span == 1)
    f4 = (down - across) / (down + across) if down + across else 0.0

    f5 = (grid.n_cols - grid.n_rows) / (grid.n_cols + grid.n_rows)
    return [f1, f2, f3, f4, f5]


def classify_orientation(
    grid: TableGrid, config: OrientationConfig | None = None
) -> tuple[Orientation, list[float]]:
    """Return the orientation label and the feature vector it was scored on.

    Ties (score equal to the threshold) resolve to Horizontal.
    """
    config = config or OrientationConfig()
    feats = orientation_features(grid)
    score = sum(w * f for w, f in zip(config.weights, feats))
    label = Orientation.VERTICAL if score > config.threshold else Orientation.HORIZONTAL
    return label, feats


# --- report --------------------------------------------------------------


@dataclass
class StructureReport:
    thrn: int
    row_types: list[RowType]
    cell_roles: dict[CellSpec, CellRole]
    orientation: Orientation = Orientation.HORIZONTAL
    orientation_features: list[float] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)

    def role_at(self, cell: CellSpec) -> CellRole:
        return self.cell_roles[cell]

    def to_dict(self) -> dict:
        return {
            "thrn": self.thrn,
            "row_types": [t.value for t in self.row_types],
            "cell_roles": [
                {"row": c.row, "col": c.col, "role": r.value}
                for c, r in sorted(self.cell_roles.items(), key=lambda kv: kv[0].coord)
            ],
            "orientation": self.orientation.value,
            "orientation_features": [round(f, 12) for f in self.orientation_features],
        }

    @classmethod
    def from_dict(cls, d: dict, grid: TableGrid) -> "StructureReport":
        by_coord = {c.coord: c for c in grid.cells}
        roles = {by_coord[(e["row"], e["col"])]: CellRole(e["role"]) for e in d["cell_roles"]}
        return cls(
            thrn=int(d["thrn"]),
            row_types=[RowType(t) for t in d["row_types"]],
            cell_roles=roles,
            orientation=Orientation(d.get("orientation", "Horizontal")),
            orientation_features=list(d.get("orientation_features", [])),
        )


def analyze(grid: TableGrid, orientation_config: OrientationConfig | None = None) -> StructureReport:
    thrn = get_thrn(grid)
    types = [identify_row_type(grid, i, thrn) for i in range(grid.n_rows)]
    orientation, feats = classify_orientation(grid, orientation_config)
    diags = []
    # row types stay literal; flag full-width rows sitting directly
    # under the top header region, where a human may read a second header.
    for i in range(thrn, grid.n_rows):
        if types[i] is RowType.HEADER and i + 1 < grid.n_rows and i == thrn:
            diags.append({"kind": "full_width_row_below_header", "row": i})
    if thrn == 1 and grid.n_rows > 1 and grid.owner(0, 0).col_span == grid.n_cols:
        diags.append({"kind": "title_row_as_header", "row": 0})
    return StructureReport(
        thrn=thrn,
        row_types=types,
        cell_roles=classify_cell_roles(grid, thrn),
        orientation=orientation,
        orientation_features=feats,
        diagnostics=diags,
    )
