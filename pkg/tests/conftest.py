from pathlib import Path

import pytest
import yaml
from hypothesis import strategies as st

from tabgraph.htmltable import parse_html_table
from tabgraph.table import CellSpec, TableGrid

FIXTURES = Path(__file__).parent / "fixtures"

INCOME_HTML = """<table>
<tr><td rowspan="2">project</td><td colspan="2">detail</td></tr>
<tr><td>income</td><td>cost</td></tr>
<tr><td>main business</td><td>53,196,521.18</td><td>41,020,318.77</td></tr>
<tr><td>other business</td><td>1,204,880.00</td><td>310,412.56</td></tr>
</table>"""


@pytest.fixture
def income() -> TableGrid:
    return parse_html_table(INCOME_HTML)


@pytest.fixture(scope="session")
def structure_fixtures() -> list[dict]:
    return yaml.safe_load((FIXTURES / "structure_tables.yaml").read_text("utf-8"))


@st.composite
def grids(draw, max_rows: int = 6, max_cols: int = 6, text=None) -> TableGrid:
    """Random valid tilings: place rectangles greedily in reading order."""
    n = draw(st.integers(1, max_rows))
    m = draw(st.integers(1, max_cols))
    if text is None:
        text = st.text(alphabet="abc 12.,%", max_size=6)
    taken = [[False] * m for _ in range(n)]
    cells = []
    for i in range(n):
        for j in range(m):
            if taken[i][j]:
                continue
            max_cs = 0
            while j + max_cs < m and not taken[i][j + max_cs]:
                max_cs += 1
            cs = draw(st.integers(1, max_cs))
            rs = draw(st.integers(1, n - i))
            # shrink the row span until the rectangle is free
            while any(taken[i + a][j + b] for a in range(rs) for b in range(cs)):
                rs -= 1
            for a in range(rs):
                for b in range(cs):
                    taken[i + a][j + b] = True
            cells.append(CellSpec(i, j, rs, cs, " ".join(draw(text).split())))
    return TableGrid(n, m, cells)


def structure_outcome(entry: dict) -> tuple[bool, bool]:
    """(structure labels match, orientation label matches) for one fixture entry."""
    from tabgraph.structure import Orientation, analyze, transpose

    grid = parse_html_table(entry["html"])
    found = analyze(grid).orientation
    want = Orientation.VERTICAL if entry["orientation"] == "V" else Orientation.HORIZONTAL
    if want is Orientation.VERTICAL:
        grid = transpose(grid)
    report = analyze(grid)
    rows = "".join("H" if t.value == "HeaderRow" else "D" for t in report.row_types)
    return (report.thrn == entry["thrn"] and rows == entry["rows"], found is want)


class StubEncoder:
    """A local HTTP sentence-encoder stand-in that records every request body."""

    def __init__(self, dim: int = 8, status: int = 200, wrong_dim: bool = False):
        import json
        import threading
        from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

        from tabgraph.embeddings import deterministic_embed

        self.dim = dim
        self.status = status
        self.wrong_dim = wrong_dim
        self.requests: list[list[str]] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append(body["texts"])
                if stub.status != 200:
                    self.send_response(stub.status)
                    self.end_headers()
                    return
                d = stub.dim + 1 if stub.wrong_dim else stub.dim
                payload = json.dumps({"vectors": [deterministic_embed("remote:" + t, d).tolist() for t in body["texts"]]})
                data = payload.encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/embed"
        self.thread = threading.Thread(target=self.server.serve_forever, args=(0.02,), daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_encoder():
    servers = []

    def make(**kw) -> StubEncoder:
        s = StubEncoder(**kw)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


def star_graph():
    """Node 0 linked to nodes 1 and 2 by TableHeader edges."""
    from tabgraph.graph import EdgeType
    from tabgraph.rgnn import RelationalGraph

    return RelationalGraph(3, [(0, 1, EdgeType.TABLE_HEADER), (0, 2, EdgeType.TABLE_HEADER)])


def income_graph_and_x(dim: int = 768):
    """The income-table graph (numeric cells prefixed) with deterministic embeddings."""
    from tabgraph.embeddings import ProviderConfig, embed_graph
    from tabgraph.graph import build_graph
    from tabgraph.numeric import prefix_numeric_cells
    from tabgraph.structure import analyze

    grid = prefix_numeric_cells(parse_html_table(INCOME_HTML))
    report = analyze(grid)
    graph = build_graph(grid, report)
    return graph, report, embed_graph(graph, ProviderConfig(dim=dim)).vectors


CRITERIA: list[str] = []


def criterion(n: int, ok: bool, detail: str) -> bool:
    """Record and print one acceptance line; the caller asserts ``ok`` afterwards."""
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)
