"""Seeded generator of complex tables: hierarchical headers, dividers, merged stubs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .table import CellSpec, TableGrid

HEADER_WORDS = [
    "region", "revenue", "cost", "profit", "units", "share", "growth", "total",
    "domestic", "overseas", "online", "retail", "budget", "actual", "target",
    "male", "female", "urban", "rural", "income", "expense", "assets", "debt",
    "sales", "margin", "volume", "price", "score", "rank", "count",
]
GROUP_WORDS = [
    "2021", "2022", "2023", "Q1", "Q2", "first half", "second half", "segment",
    "category", "detail", "summary", "period", "breakdown", "forecast", "history",
]
STUB_WORDS = ["project", "item", "name", "metric", "indicator", "entity", "line"]
LABEL_WORDS = [
    "main business", "other business", "north", "south", "east", "west",
    "product a", "product b", "services", "licensing", "hardware", "software",
    "consulting", "support", "logistics", "marketing", "research", "operations",
]
SECTION_WORDS = ["Part A", "Part B", "Continuing operations", "Discontinued", "Subtotals", "Notes"]


@dataclass
class SyntheticTable:
    table_id: str
    grid: TableGrid
    context: str


def _number(rng: np.random.Generator) -> str:
    kind = rng.integers(0, 4)
    if kind == 0:
        return f"{int(rng.integers(0, 10_000)):,}"
    if kind == 1:
        return f"{rng.uniform(0, 1e6):,.2f}"
    if kind == 2:
        return f"{rng.uniform(-50, 50):.1f}%"
    return str(int(rng.integers(0, 100)))


def _pick(rng, words):
    return words[int(rng.integers(0, len(words)))]


def synthetic_table(rng: np.random.Generator, table_id: str) -> SyntheticTable:
    n_cols = int(rng.integers(2, 7))
    thrn = int(rng.choice([1, 1, 2, 2, 3]))
    cells: list[CellSpec] = []

    # header: stub column spans the whole header region; other columns get
    # nested groups built bottom-up from singletons
    cells.append(CellSpec(0, 0, thrn, 1, _pick(rng, STUB_WORDS)))
    levels: list[list[tuple[int, int]]] = [[(j, 1) for j in range(1, n_cols)]]
    for _ in range(thrn - 1):
        below = levels[0]
        merged: list[tuple[int, int]] = []
        for start, width in below:
            if merged and rng.random() < 0.5:
                s, w = merged[-1]
                merged[-1] = (s, w + width)
            else:
                merged.append((start, width))
        levels.insert(0, merged)
    for lvl, groups in enumerate(levels):
        leaf = lvl == len(levels) - 1
        for start, width in groups:
            text = _pick(rng, HEADER_WORDS if leaf else GROUP_WORDS)
            cells.append(CellSpec(lvl, start, 1, width, text))

    # body
    col_numeric = [False] + [bool(rng.random() < 0.8) for _ in range(1, n_cols)]
    n_data = int(rng.integers(1, 9))
    row = thrn
    pending_stub = 0
    for k in range(n_data):
        if k > 0 and rng.random() < 0.15 and pending_stub == 0:
            cells.append(CellSpec(row, 0, 1, n_cols, _pick(rng, SECTION_WORDS)))
            row += 1
        if pending_stub == 0:
            span = 2 if (k < n_data - 1 and rng.random() < 0.2) else 1
            cells.append(CellSpec(row, 0, span, 1, _pick(rng, LABEL_WORDS)))
            pending_stub = span
        pending_stub -= 1
        for j in range(1, n_cols):
            text = _number(rng) if col_numeric[j] else _pick(rng, LABEL_WORDS)
            cells.append(CellSpec(row, j, 1, 1, text))
        row += 1
    grid = TableGrid(row, n_cols, cells)
    context = f"Synthetic table {table_id} reporting {_pick(rng, HEADER_WORDS)} by {cells[0].text}."
    return SyntheticTable(table_id, grid, context)


def synthetic_corpus(n_tables: int, seed: int = 0) -> list[SyntheticTable]:
    rng = np.random.default_rng(seed)
    return [synthetic_table(rng, f"syn-{seed}-{k:04d}") for k in range(n_tables)]
