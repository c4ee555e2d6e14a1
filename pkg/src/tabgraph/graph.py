"""Tabular heterogeneous graph: typed nodes and the seven undirected edge types."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable

from .errors import InconsistentReport
from .structure import CellRole, RowType, StructureReport
from .table import CellSpec, TableGrid, canonical_json


class NodeKind(str, enum.Enum):
    TABLE = "Table"
    ROW = "Row"
    HEADER_CELL = "HeaderCell"
    DATA_CELL = "DataCell"


class EdgeType(str, enum.Enum):
    TABLE_HEADER = "TableHeader"
    TABLE_DATA = "TableData"
    HEADER_ROW = "HeaderRow"
    DATA_ROW = "DataRow"
    HEADER_DATA = "HeaderData"
    DATA_DATA = "DataData"
    HEADER_HEADER = "HeaderHeader"


EDGE_TYPES: tuple[EdgeType, ...] = tuple(EdgeType)
_EDGE_ORDER = {t: k for k, t in enumerate(EDGE_TYPES)}


@dataclass(frozen=True)
class NodeId:
    kind: NodeKind
    coord: tuple[int, ...] = ()

    @property
    def key(self) -> str:
        if self.kind is NodeKind.TABLE:
            return "table"
        if self.kind is NodeKind.ROW:
            return f"row:{self.coord[0]}"
        return f"cell:{self.coord[0]}:{self.coord[1]}"

    @property
    def is_cell(self) -> bool:
        return self.kind in (NodeKind.HEADER_CELL, NodeKind.DATA_CELL)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "coord": list(self.coord) if self.coord else None}

    @classmethod
    def from_dict(cls, d: dict) -> "NodeId":
        return cls(NodeKind(d["kind"]), tuple(d["coord"] or ()))


@dataclass(frozen=True)
class Node:
    id: NodeId
    init_text: str


@dataclass(frozen=True, order=True)
class Edge:
    """Undirected edge stored with ``src < dst`` in canonical node order."""

    src: int
    dst: int
    type: EdgeType

    def sort_key(self):
        return (_EDGE_ORDER[self.type], self.src, self.dst)


@dataclass(frozen=True)
class GraphConfig:
    # "both" | "adjacency" | "hierarchy"
    header_header: str = "both"

    def __post_init__(self):
        if self.header_header not in ("both", "adjacency", "hierarchy"):
            raise ValueError(f"unknown header_header mode {self.header_header!r}")


class TabularGraph:
    def __init__(self, nodes: list[Node], edges: Iterable[Edge]):
        self.nodes = tuple(nodes)
        self.edges = tuple(sorted(set(edges), key=Edge.sort_key))
        self._index = {n.id: k for k, n in enumerate(self.nodes)}
        for e in self.edges:
            if e.src >= e.dst:
                raise ValueError(f"edge {e} is not in canonical (src < dst) form")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def index(self, nid: NodeId) -> int:
        return self._index[nid]

    def ids(self) -> list[NodeId]:
        return [n.id for n in self.nodes]

    def texts(self) -> list[str]:
        return [n.init_text for n in self.nodes]

    def nodes_of(self, *kinds: NodeKind) -> list[int]:
        return [k for k, n in enumerate(self.nodes) if n.id.kind in kinds]

    def cell_nodes(self) -> list[int]:
        return self.nodes_of(NodeKind.HEADER_CELL, NodeKind.DATA_CELL)

    def row_nodes(self) -> list[int]:
        return self.nodes_of(NodeKind.ROW)

    def has_edge(self, a: NodeId, b: NodeId, etype: EdgeType) -> bool:
        i, j = sorted((self.index(a), self.index(b)))
        return Edge(i, j, etype) in set(self.edges)

    def neighbors(self, k: int, etype: EdgeType | None = None) -> list[int]:
        out = []
        for e in self.edges:
            if etype is not None and e.type is not etype:
                continue
            if e.src == k:
                out.append(e.dst)
            elif e.dst == k:
                out.append(e.src)
        return out

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id.key, **n.id.to_dict(), "init_text": n.init_text} for n in self.nodes
            ],
            "edges": [
                {"src": self.nodes[e.src].id.key, "dst": self.nodes[e.dst].id.key, "type": e.type.value}
                for e in self.edges
            ],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TabularGraph":
        nodes = [Node(NodeId.from_dict(n), n["init_text"]) for n in d["nodes"]]
        by_key = {n.id.key: k for k, n in enumerate(nodes)}
        edges = []
        for e in d["edges"]:
            a, b = sorted((by_key[e["src"]], by_key[e["dst"]]))
            edges.append(Edge(a, b, EdgeType(e["type"])))
        return cls(nodes, edges)

    @classmethod
    def from_json(cls, s: str) -> "TabularGraph":
        return cls.from_dict(json.loads(s))


def cell_node_id(cell: CellSpec, role: CellRole) -> NodeId:
    kind = NodeKind.HEADER_CELL if role is CellRole.HEADER else NodeKind.DATA_CELL
    return NodeId(kind, cell.coord)


def _join(texts: Iterable[str]) -> str:
    return "; ".join(t for t in texts if t)


def init_text(node: NodeId, grid: TableGrid, report: StructureReport) -> str:
    """Text fed to the sentence encoder for ``node``.

    Cells use their own text, a row joins the texts of the cells covering it,
    and the table joins all header-cell texts in reading order. Empty texts
    are skipped in joins.
    """
    if node.kind is NodeKind.TABLE:
        return _join(c.text for c in grid.cells if report.cell_roles[c] is CellRole.HEADER)
    if node.kind is NodeKind.ROW:
        return _join(c.text for c in grid.row_owners(node.coord[0]))
    return grid.owner(*node.coord).text


def build_graph(
    grid: TableGrid, report: StructureReport, config: GraphConfig | None = None
) -> TabularGraph:
    config = config or GraphConfig()
    if len(report.row_types) != grid.n_rows:
        raise InconsistentReport(
            f"report covers {len(report.row_types)} rows, grid has {grid.n_rows}"
        )
    if set(report.cell_roles) != set(grid.cells):
        raise InconsistentReport("report cell roles do not match the grid's cells")

    roles = report.cell_roles
    thrn = report.thrn
    n = grid.n_rows

    node_ids = [NodeId(NodeKind.TABLE)]
    node_ids += [NodeId(NodeKind.ROW, (i,)) for i in range(n)]
    node_ids += [cell_node_id(c, roles[c]) for c in grid.cells]
    nodes = [Node(nid, init_text(nid, grid, report)) for nid in node_ids]

    cell_idx = {c.coord: 1 + n + k for k, c in enumerate(grid.cells)}

    def is_header(c: CellSpec) -> bool:
        return roles[c] is CellRole.HEADER

    edges: set[Edge] = set()

    def link(a: int, b: int, t: EdgeType):
        if a == b:
            return
        edges.add(Edge(min(a, b), max(a, b), t))

    for c in grid.cells:
        k = cell_idx[c.coord]
        # R1: table <-> every cell
        link(0, k, EdgeType.TABLE_HEADER if is_header(c) else EdgeType.TABLE_DATA)
        # R2: row <-> every cell covering it
        for i in range(c.row, c.row + c.row_span):
            link(1 + i, k, EdgeType.HEADER_ROW if is_header(c) else EdgeType.DATA_ROW)
        # R3: data cell <-> deepest top header above each spanned column
        if not is_header(c) and thrn >= 1:
            for j in range(c.col, c.col + c.col_span):
                h = grid.owner(thrn - 1, j)
                if is_header(h):
                    link(cell_idx[h.coord], k, EdgeType.HEADER_DATA)

    # R4: vertically adjacent data cells
    for j in range(grid.n_cols):
        col = grid.col_owners(j)
        for a, b in zip(col, col[1:]):
            if not is_header(a) and not is_header(b):
                link(cell_idx[a.coord], cell_idx[b.coord], EdgeType.DATA_DATA)

    # R5a: horizontally adjacent header cells within header rows
    if config.header_header in ("both", "adjacency"):
        for i in range(n):
            if report.row_types[i] is not RowType.HEADER:
                continue
            row = grid.row_owners(i)
            for a, b in zip(row, row[1:]):
                if is_header(a) and is_header(b):
                    link(cell_idx[a.coord], cell_idx[b.coord], EdgeType.HEADER_HEADER)

    # R5b: header parent <-> header cells directly beneath its column span
    if config.header_header in ("both", "hierarchy"):
        for p in grid.cells:
            below = p.row + p.row_span
            if not is_header(p) or below >= thrn:
                continue
            for j in range(p.col, p.col + p.col_span):
                ch = grid.owner(below, j)
                if is_header(ch):
                    link(cell_idx[p.coord], cell_idx[ch.coord], EdgeType.HEADER_HEADER)

    return TabularGraph(nodes, edges)


def edge_census(graph: TabularGraph) -> dict[EdgeType, int]:
    counts = {t: 0 for t in EDGE_TYPES}
    for e in graph.edges:
        counts[e.type] += 1
    return counts
