"""Evaluation metrics."""

from __future__ import annotations

import string
from typing import Hashable, Sequence

from .errors import AlignmentError


def per_class_f1(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> dict[Hashable, float]:
    """F1 for every class that occurs in ``gold``."""
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    out = {}
    for cls in sorted(set(gold), key=str):
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
        out[cls] = 2 * tp / (2 * tp + fp + fn)
    return out


def macro_f1(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> float:
    """Unweighted mean of per-class F1; classes absent from gold are ignored."""
    scores = per_class_f1(gold, pred)
    if not scores:
        raise AlignmentError("no gold labels")
    return sum(scores.values()) / len(scores)


def normalize_answer(text: str) -> str:
    t = text.strip().lower()
    while t and t[-1] in string.punctuation:
        t = t[:-1].rstrip()
    return t


def exact_match(gold: str, pred: str) -> bool:
    return normalize_answer(gold) == normalize_answer(pred)


def qa_accuracy(gold: Sequence[str], pred: Sequence[str]) -> float:
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold answers vs {len(pred)} predictions")
    if not gold:
        raise AlignmentError("no gold answers")
    return sum(exact_match(g, p) for g, p in zip(gold, pred)) / len(gold)
