"""Instruction datasets in the placeholder-token format, and the embedding splice.

A prompt always opens with a table block

    <table_start><tabular_node>...<tabular_node><table_end>

holding one ``<tabular_node>`` per node in ``node_ids``, followed by the task
instruction rendered from a versioned template file.
"""

from __future__ import annotations

import enum
import hashlib
import json
import string
from dataclasses import dataclass, field
from functools import cache
from importlib import resources
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

from .errors import CountMismatch, InconsistentReport, MissingAnnotation, ShapeMismatch
from .graph import NodeId, NodeKind, TabularGraph
from .structure import RowType, StructureReport
from .table import TableGrid, TaskAnnotation

NODE_TOKEN = "<tabular_node>"
START_TOKEN = "<table_start>"
END_TOKEN = "<table_end>"
SPECIAL_TOKENS = (NODE_TOKEN, START_TOKEN, END_TOKEN)
TEMPLATE_VERSION = "v1"
DEFAULT_MAX_CELLS = 150

ROW_LABELS = {RowType.HEADER: "Header Row", RowType.DATA: "Data Row"}


class Task(str, enum.Enum):
    TRC = "TRC"
    TCM = "TCM"
    TCG = "TCG"
    CTC = "CTC"
    TTC = "TTC"
    QA = "TableQA"


PRETRAIN_TASKS = (Task.TRC, Task.TCM, Task.TCG)
DOWNSTREAM_TASKS = (Task.CTC, Task.TTC, Task.QA)


@cache
def special_token_ids() -> dict[str, int]:
    """Reserved vocabulary ids from the bundled registry."""
    raw = resources.files("tabgraph").joinpath("templates/special_tokens.json").read_text("utf-8")
    ids = json.loads(raw)
    if set(ids) != set(SPECIAL_TOKENS):
        raise ValueError(f"special token registry lists {sorted(ids)}")
    return ids


def template_name(task: Task, version: str = TEMPLATE_VERSION) -> str:
    stem = "qa" if task is Task.QA else task.value.lower()
    return f"{stem}.{version}"


@cache
def load_template(task: Task, version: str = TEMPLATE_VERSION) -> string.Template:
    path = resources.files("tabgraph").joinpath(f"templates/{template_name(task, version)}.txt")
    return string.Template(path.read_text("utf-8").rstrip("\n"))


def escape_special(text: str) -> str:
    """Neutralise special tokens that occur literally in user-supplied text."""
    for tok in SPECIAL_TOKENS:
        text = text.replace(tok, "&lt;" + tok[1:-1] + "&gt;")
    return text


def table_block(k: int) -> str:
    return START_TOKEN + NODE_TOKEN * k + END_TOKEN


def check_placeholders(prompt: str, n_nodes: int) -> None:
    """Raise ``CountMismatch`` unless ``prompt`` follows the placeholder protocol."""
    if prompt.count(START_TOKEN) != 1 or prompt.count(END_TOKEN) != 1:
        raise CountMismatch("prompt must contain exactly one table start and one table end token")
    start = prompt.index(START_TOKEN)
    end = prompt.index(END_TOKEN)
    if end < start:
        raise CountMismatch("table end token precedes table start token")
    inside = prompt[start + len(START_TOKEN) : end].count(NODE_TOKEN)
    total = prompt.count(NODE_TOKEN)
    if inside != total:
        raise CountMismatch(f"{total - inside} placeholders lie outside the table block")
    if total != n_nodes:
        raise CountMismatch(f"prompt has {total} placeholders for {n_nodes} nodes")


@dataclass(frozen=True)
class InstructionSample:
    id: str
    task: Task
    prompt: str
    node_ids: tuple[NodeId, ...]
    answer: str
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        check_placeholders(self.prompt, len(self.node_ids))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task.value,
            "prompt": self.prompt,
            "node_ids": [n.to_dict() for n in self.node_ids],
            "answer": self.answer,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionSample":
        return cls(
            id=d["id"],
            task=Task(d["task"]),
            prompt=d["prompt"],
            node_ids=tuple(NodeId.from_dict(n) for n in d["node_ids"]),
            answer=d["answer"],
            meta=d.get("meta", {}),
        )


def write_jsonl(samples: Iterable[InstructionSample], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            check_placeholders(s.prompt, len(s.node_ids))
            fh.write(s.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[InstructionSample]:
    """Load samples, re-checking the placeholder protocol on every line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(InstructionSample.from_dict(json.loads(line)))
            except CountMismatch as exc:
                raise CountMismatch(f"{path}:{lineno}: {exc}") from None
    return out


# --- seeding -------------------------------------------------------------


def table_seed(seed: int, table_id: str) -> int:
    """Per-table seed, independent of processing order."""
    h = hashlib.blake2b(f"{seed}\x00{table_id}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def fisher_yates(n: int, seed: int) -> list[int]:
    """A seeded permutation of ``range(n)``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


# --- generators ----------------------------------------------------------


def _check(grid: TableGrid, report: StructureReport, graph: TabularGraph) -> None:
    if len(graph.row_nodes()) != grid.n_rows or len(graph.cell_nodes()) != len(grid.cells):
        raise InconsistentReport("graph does not match the grid")
    if len(report.row_types) != grid.n_rows:
        raise InconsistentReport("report does not match the grid")


def _meta(table_id: str, seed: int, task: Task, **extra) -> dict:
    return {"table_id": table_id, "seed": seed, "template": template_name(task), **extra}


def _sample(task: Task, table_id: str, k: int, nodes: list[NodeId], answer: str, meta: dict, **fields) -> InstructionSample:
    prompt = load_template(task).substitute(table=table_block(len(nodes)), **fields)
    return InstructionSample(f"{table_id}:{task.value}:{k}", task, prompt, tuple(nodes), answer, meta)


def _cell_ids(graph: TabularGraph) -> list[NodeId]:
    ids = graph.ids()
    return [ids[k] for k in graph.cell_nodes()]


def gen_trc(
    grid: TableGrid, report: StructureReport, graph: TabularGraph, seed: int = 0, table_id: str = "table"
) -> list[InstructionSample]:
    """Row-type classification: one placeholder per row, labels from the row-type algorithm."""
    _check(grid, report, graph)
    ids = graph.ids()
    nodes = [ids[k] for k in graph.row_nodes()]
    answer = ", ".join(ROW_LABELS[t] for t in report.row_types)
    return [_sample(Task.TRC, table_id, 0, nodes, answer, _meta(table_id, seed, Task.TRC))]


def _quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


def tcm_mapping(texts: Sequence[str], perm: Sequence[int]) -> list[int]:
    """1-based list index for each canonical cell; duplicates resolve to the first occurrence."""
    shuffled = [texts[p] for p in perm]
    first: dict[str, int] = {}
    for k, t in enumerate(shuffled, 1):
        first.setdefault(t, k)
    return [first[t] for t in texts]


def gen_tcm(
    grid: TableGrid, report: StructureReport, graph: TabularGraph, seed: int = 0, table_id: str = "table"
) -> list[InstructionSample]:
    """Cell-text matching against a shuffled list of the table's cell texts."""
    _check(grid, report, graph)
    texts = [c.text for c in grid.cells]
    perm = fisher_yates(len(texts), table_seed(seed, table_id))
    listing = ", ".join(f"{k}: {_quote(escape_special(texts[p]))}" for k, p in enumerate(perm, 1))
    mapping = tcm_mapping(texts, perm)
    answer = ", ".join(f"{k}→{m}" for k, m in enumerate(mapping, 1))
    meta = _meta(table_id, seed, Task.TCM)
    return [_sample(Task.TCM, table_id, 0, _cell_ids(graph), answer, meta, cells=listing)]


def gen_tcg(
    grid: TableGrid,
    report: StructureReport,
    graph: TabularGraph,
    context: str | None = None,
    seed: int = 0,
    table_id: str = "table",
) -> InstructionSample:
    """Context generation from the Table node.

    Without ``context`` the target falls back to the Table node's own text
    (its header cells) and ``meta.weak_target`` is set.
    """
    _check(grid, report, graph)
    weak = not context
    table_idx = graph.nodes_of(NodeKind.TABLE)[0]
    answer = graph.nodes[table_idx].init_text if weak else context
    meta = _meta(table_id, seed, Task.TCG, weak_target=weak)
    return _sample(Task.TCG, table_id, 0, [graph.ids()[table_idx]], answer, meta)


def gen_downstream(
    grid: TableGrid,
    report: StructureReport,
    graph: TabularGraph,
    annotation: TaskAnnotation | None,
    task: Task,
    seed: int = 0,
    table_id: str = "table",
    label_set: Sequence[str] | None = None,
) -> list[InstructionSample]:
    """CTC, TTC or TableQA samples from a table's annotation.

    ``label_set`` is the list of candidate labels shown in the prompt; it
    defaults to the labels this table's annotation uses.
    """
    _check(grid, report, graph)
    task = Task(task)
    if annotation is None:
        raise MissingAnnotation(f"{table_id}: no annotation for {task.value}")
    meta = _meta(table_id, seed, task)
    if task is Task.CTC:
        annotation.check_cells(grid)
        labels = [annotation.cell_labels[c.coord] for c in grid.cells]
        shown = ", ".join(escape_special(x) for x in (label_set or sorted(set(labels))))
        return [_sample(task, table_id, 0, _cell_ids(graph), ", ".join(labels), meta, labels=shown)]
    if task is Task.TTC:
        if annotation.table_label is None:
            raise MissingAnnotation(f"{table_id}: no table label")
        shown = ", ".join(escape_special(x) for x in (label_set or [annotation.table_label]))
        table_idx = graph.nodes_of(NodeKind.TABLE)[0]
        return [_sample(task, table_id, 0, [graph.ids()[table_idx]], annotation.table_label, meta, labels=shown)]
    if task is Task.QA:
        if not annotation.qa_pairs:
            raise MissingAnnotation(f"{table_id}: no question-answer pairs")
        cells = _cell_ids(graph)
        return [
            _sample(task, table_id, k, cells, a, meta, question=escape_special(q))
            for k, (q, a) in enumerate(annotation.qa_pairs)
        ]
    raise ValueError(f"{task.value} is not a downstream task")


def gen_pretrain(
    grid: TableGrid,
    report: StructureReport,
    graph: TabularGraph,
    tasks: Sequence[Task] = PRETRAIN_TASKS,
    seed: int = 0,
    table_id: str = "table",
    context: str | None = None,
) -> list[InstructionSample]:
    out: list[InstructionSample] = []
    for task in tasks:
        task = Task(task)
        if task is Task.TRC:
            out += gen_trc(grid, report, graph, seed, table_id)
        elif task is Task.TCM:
            out += gen_tcm(grid, report, graph, seed, table_id)
        elif task is Task.TCG:
            out.append(gen_tcg(grid, report, graph, context, seed, table_id))
        else:
            raise ValueError(f"{task.value} is not a pre-training task")
    return out


# --- splice --------------------------------------------------------------


@dataclass(frozen=True)
class VectorSlot:
    """Reference to the ``index``-th node vector."""

    index: int


@dataclass(frozen=True)
class SplicedSequence:
    slots: tuple[Any, ...]
    vectors: np.ndarray = field(compare=False)

    @property
    def vector_positions(self) -> list[int]:
        return [k for k, s in enumerate(self.slots) if isinstance(s, VectorSlot)]

    def __len__(self) -> int:
        return len(self.slots)


def splice(prompt_tokens: Sequence[Hashable], placeholder_token_id: Hashable, node_vectors) -> SplicedSequence:
    """Replace each placeholder slot, in order, with a reference to the next node vector.

    Raises ``CountMismatch`` when the counts differ; nothing is truncated or padded.
    """
    vectors = np.asarray(getattr(node_vectors, "vectors", node_vectors), dtype=np.float64)
    if vectors.size == 0:
        vectors = vectors.reshape(0, vectors.shape[-1] if vectors.ndim == 2 else 0)
    if vectors.ndim != 2:
        raise ShapeMismatch(f"node vectors must be 2-d, got shape {vectors.shape}")
    n_slots = sum(1 for t in prompt_tokens if t == placeholder_token_id)
    if n_slots != len(vectors):
        raise CountMismatch(f"{n_slots} placeholders for {len(vectors)} node vectors")
    slots: list[Any] = []
    k = 0
    for t in prompt_tokens:
        if t == placeholder_token_id:
            slots.append(VectorSlot(k))
            k += 1
        else:
            slots.append(t)
    return SplicedSequence(tuple(slots), vectors)


def splice_embeddings(
    token_embeddings: np.ndarray, prompt_tokens: Sequence[Hashable], placeholder_token_id: Hashable, node_vectors
) -> np.ndarray:
    """Apply :func:`splice` to a (length, dim) token-embedding matrix."""
    seq = splice(prompt_tokens, placeholder_token_id, node_vectors)
    emb = np.asarray(token_embeddings, dtype=np.float64)
    if emb.shape[0] != len(seq):
        raise ShapeMismatch(f"{emb.shape[0]} token embeddings for {len(seq)} tokens")
    if len(seq.vectors) and seq.vectors.shape[1] != emb.shape[1]:
        raise ShapeMismatch(f"node vectors have dim {seq.vectors.shape[1]}, token embeddings {emb.shape[1]}")
    out = emb.copy()
    for pos, slot in zip(seq.vector_positions, (s for s in seq.slots if isinstance(s, VectorSlot))):
        out[pos] = seq.vectors[slot.index]
    return out


def split_special(prompt: str) -> list[str | int]:
    """Cut a prompt into text pieces and special-token ids.

    Stands in for a tokenizer so the splice can be exercised end to end.
    """
    ids = special_token_ids()
    out: list[str | int] = []
    rest = prompt
    while rest:
        hits = [(rest.find(tok), tok) for tok in SPECIAL_TOKENS if tok in rest]
        if not hits:
            out.append(rest)
            break
        pos, tok = min(hits)
        if pos:
            out.append(rest[:pos])
        out.append(ids[tok])
        rest = rest[pos + len(tok) :]
    return out
