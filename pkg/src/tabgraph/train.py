"""Minibatch training of the RGNN plus classification head."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import Divergence, ShapeMismatch
from .metrics import macro_f1
from .rgnn import (
    RelationalGraph,
    RgnnConfig,
    RgnnParams,
    _backward,
    as_relational,
    forward,
    init_params,
    logits_for,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    steps: int = 300
    seed: int = 0
    batch_size: int | None = 32  # graphs per step; None = full batch
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name != "adam":
            raise ValueError(f"unsupported optimizer {self.name!r}")
        if self.steps < 0 or self.lr < 0:
            raise ValueError("steps and lr must be non-negative")


@dataclass
class Example:
    """One graph with node features and labelled nodes."""

    graph: RelationalGraph
    x: np.ndarray
    nodes: np.ndarray
    labels: np.ndarray

    @classmethod
    def make(cls, graph, x, nodes: Sequence[int], labels: Sequence[int]) -> "Example":
        x = np.asarray(getattr(x, "vectors", x), dtype=np.float64)
        if len(nodes) != len(labels):
            raise ShapeMismatch("nodes and labels differ in length")
        return cls(as_relational(graph), x, np.asarray(nodes, dtype=np.int64), np.asarray(labels, dtype=np.int64))


def collate(examples: Sequence[Example]) -> Example:
    offsets = np.cumsum([0] + [e.graph.num_nodes for e in examples[:-1]])
    return Example(
        RelationalGraph.batch([e.graph for e in examples]),
        np.vstack([e.x for e in examples]),
        np.concatenate([e.nodes + off for e, off in zip(examples, offsets)]),
        np.concatenate([e.labels for e in examples]),
    )


class Adam:
    def __init__(self, params: RgnnParams, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: RgnnParams, grads: RgnnParams) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.blocks.items():
            m = self.m.blocks[k]
            v = self.v.blocks[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            params.blocks[k] -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainResult:
    params: RgnnParams
    trace: list[dict] = field(default_factory=list)

    @property
    def final_val_f1(self) -> float | None:
        for rec in reversed(self.trace):
            if rec.get("val_macro_f1") is not None:
                return rec["val_macro_f1"]
        return None


def evaluate(examples: Sequence[Example] | Example, params: RgnnParams, cfg: RgnnConfig) -> tuple[list[int], list[int]]:
    batch = examples if isinstance(examples, Example) else collate(list(examples))
    states = forward(batch.graph, batch.x, params, cfg)
    pred = np.argmax(logits_for(states, params, batch.nodes), axis=1)
    return batch.labels.tolist(), pred.tolist()


def train(
    examples: Sequence[Example],
    cfg: RgnnConfig,
    opt: OptimizerConfig,
    num_classes: int,
    val: Sequence[Example] | None = None,
    params: RgnnParams | None = None,
    eval_every: int = 1,
) -> TrainResult:
    """Deterministic given ``cfg.seed`` (init) and ``opt.seed`` (batch order).

    Raises ``Divergence`` with the trace so far if the loss turns non-finite.
    """
    if not examples:
        raise ShapeMismatch("no training examples")
    params = params.copy() if params is not None else init_params(cfg, num_classes)
    params.validate(cfg)
    adam = Adam(params, opt)
    rng = np.random.default_rng(opt.seed)
    n = len(examples)
    bs = n if opt.batch_size is None else min(opt.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    full = collate(list(examples)) if bs == n else None
    val_batch = collate(list(val)) if val else None
    trace: list[dict] = []

    for step in range(1, opt.steps + 1):
        if full is not None:
            batch = full
        else:
            if cursor + bs > n:
                order = rng.permutation(n)
                cursor = 0
            batch = collate([examples[k] for k in order[cursor : cursor + bs]])
            cursor += bs
        states = forward(batch.graph, batch.x, params, cfg)
        loss, grads = _backward(batch.graph, states, params, cfg, batch.nodes, batch.labels)
        rec = {"step": step, "loss": loss}
        if not np.isfinite(loss):
            trace.append(rec)
            raise Divergence(f"non-finite loss at step {step}", trace)
        adam.step(params, grads)
        if val and (step % eval_every == 0 or step == opt.steps):
            gold, pred = evaluate(val_batch, params, cfg)
            rec["val_macro_f1"] = macro_f1(gold, pred)
        trace.append(rec)
        if step % 50 == 0:
            log.info("step %d loss %.6f val_f1 %s", step, loss, rec.get("val_macro_f1"))
    return TrainResult(params, trace)
