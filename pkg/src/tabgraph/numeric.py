"""Type prefixes for number-only cells."""

from __future__ import annotations

import re

from .table import TableGrid

_INT = r"(?:\d{1,3}(?:,\d{3})+|\d+)"
_DEC = rf"{_INT}?\.\d+"
INTEGER_RE = re.compile(rf"^[+-]?{_INT}$")
FLOAT_RE = re.compile(rf"^[+-]?{_DEC}$")
PERCENT_RE = re.compile(rf"^[+-]?(?:{_DEC}|{_INT})%$")

PREFIXES = {
    "integer": "Integer Value: ",
    "float": "Float Value: ",
    "percentage": "Percentage Value: ",
}


def numeric_kind(text: str) -> str | None:
    """Return ``"integer"``, ``"float"``, ``"percentage"`` or None.

    Already-prefixed texts report the kind named by their prefix.
    """
    t = text.strip()
    for kind, prefix in PREFIXES.items():
        if t.startswith(prefix) and numeric_kind(t[len(prefix):]) == kind:
            return kind
    if PERCENT_RE.match(t):
        return "percentage"
    if FLOAT_RE.match(t):
        return "float"
    if INTEGER_RE.match(t):
        return "integer"
    return None


def is_numeric(text: str) -> bool:
    return numeric_kind(text) is not None


def prefix_text(text: str) -> str:
    t = text.strip()
    if any(t.startswith(p) for p in PREFIXES.values()):
        return text
    kind = numeric_kind(t)
    if kind is None:
        return text
    return PREFIXES[kind] + t


def prefix_numeric_cells(grid: TableGrid) -> TableGrid:
    """Prefix every number-only cell with its value type; idempotent."""
    return grid.map_text(prefix_text)
