"""Row-type (TRC) probe: train the RGNN to recover rule-derived row labels from graphs."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .embeddings import ProviderConfig, embed_graph
from .graph import GraphConfig, TabularGraph, build_graph
from .numeric import prefix_numeric_cells
from .rgnn import RgnnConfig
from .structure import RowType, StructureReport, analyze
from .synthetic import synthetic_corpus
from .table import TableGrid
from .train import Example, OptimizerConfig, TrainResult, evaluate, train
from .metrics import macro_f1

TRC_CLASSES = (RowType.HEADER, RowType.DATA)

# desk-scale encoder for the probe; hidden width is reduced from the default
PROBE_RGNN = RgnnConfig(num_layers=2, hidden_dim=64, input_dim=768, activation="relu", seed=7)
PROBE_OPT = OptimizerConfig(lr=1e-3, steps=300, seed=11, batch_size=32)


def row_labels(report: StructureReport) -> list[int]:
    return [TRC_CLASSES.index(t) for t in report.row_types]


def trc_example(
    graph: TabularGraph, report: StructureReport, x
) -> Example:
    rows = graph.row_nodes()
    return Example.make(graph, x, rows, row_labels(report))


def prepare(grid: TableGrid, embedder: ProviderConfig, graph_cfg: GraphConfig | None = None):
    grid = prefix_numeric_cells(grid)
    report = analyze(grid)
    graph = build_graph(grid, report, graph_cfg)
    return graph, report, embed_graph(graph, embedder)


@dataclass
class ProbeResult:
    result: TrainResult
    val_macro_f1: float
    n_train: int
    n_val: int
    seconds: float


def split(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    return sorted(perm[n_val:].tolist()), sorted(perm[:n_val].tolist())


def run_trc_probe(
    grids: list[TableGrid] | None = None,
    *,
    n_tables: int = 500,
    corpus_seed: int = 0,
    rgnn: RgnnConfig = PROBE_RGNN,
    opt: OptimizerConfig = PROBE_OPT,
    embedder: ProviderConfig | None = None,
    val_fraction: float = 0.2,
    eval_every: int = 1,
) -> ProbeResult:
    t0 = time.perf_counter()
    if grids is None:
        grids = [t.grid for t in synthetic_corpus(n_tables, corpus_seed)]
    embedder = embedder or ProviderConfig(kind="test", dim=rgnn.input_dim)
    examples = []
    for g in grids:
        graph, report, x = prepare(g, embedder)
        examples.append(trc_example(graph, report, x))
    tr, va = split(len(examples), val_fraction, opt.seed)
    train_set = [examples[k] for k in tr]
    val_set = [examples[k] for k in va] or None
    result = train(train_set, rgnn, opt, num_classes=len(TRC_CLASSES), val=val_set, eval_every=eval_every)
    if val_set:
        gold, pred = evaluate(val_set, result.params, rgnn)
        f1 = macro_f1(gold, pred)
    else:
        f1 = float("nan")
    return ProbeResult(result, f1, len(train_set), len(val_set or []), time.perf_counter() - t0)
