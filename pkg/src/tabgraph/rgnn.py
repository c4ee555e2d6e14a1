"""Relational GNN encoder with hand-written reverse-mode gradients.

Each layer computes, for every node v,

    h_v' = act( sum_t mean_{u in N_t(v)} W_t h_u  [+ W_self h_v] )

with one weight matrix per edge type t and no bias. A node with no type-t
neighbours gets no type-t term. Everything runs in float64 on numpy/scipy.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyMask, ShapeMismatch, UnknownEdgeType
from .graph import EDGE_TYPES, EdgeType, TabularGraph

CHECKPOINT_FORMAT = "tabgraph-rgnn"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RgnnConfig:
    num_layers: int = 2
    hidden_dim: int = 1048
    input_dim: int = 768
    activation: str = "relu"  # relu | tanh | identity
    self_loop: bool = False
    seed: int = 0
    attention: bool = False

    def __post_init__(self):
        if min(self.num_layers, self.hidden_dim, self.input_dim) < 1:
            raise ValueError("num_layers, hidden_dim and input_dim must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.attention:
            raise NotImplementedError("attention-weighted aggregation is not implemented")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(in_dim, out_dim) per layer."""
        dims = [(self.input_dim, self.hidden_dim)]
        dims += [(self.hidden_dim, self.hidden_dim)] * (self.num_layers - 1)
        return dims


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


_ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda z: z, np.ones_like),
}


# --- graph structure -----------------------------------------------------


class RelationalGraph:
    """Per-edge-type mean-aggregation operators over a fixed node set.

    ``ops[t]`` is the sparse n x n matrix with ``ops[t][v, u] = 1/|N_t(v)|``
    for every type-t neighbour u of v. Undirected edges contribute both
    directions.
    """

    def __init__(self, num_nodes: int, edges: Iterable[tuple[int, int, EdgeType]]):
        self.num_nodes = num_nodes
        nbrs: dict[EdgeType, list[set[int]]] = {}
        for u, v, t in edges:
            if not isinstance(t, EdgeType):
                try:
                    t = EdgeType(t)
                except ValueError:
                    raise UnknownEdgeType(f"unknown edge type {t!r}") from None
            if u == v:
                continue
            lists = nbrs.setdefault(t, [set() for _ in range(num_nodes)])
            lists[u].add(v)
            lists[v].add(u)
        self.edge_list = {
            t: sorted({(min(u, v), max(u, v)) for u, ns in enumerate(lists) for v in ns})
            for t, lists in nbrs.items()
        }
        self._coo: dict[EdgeType, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for t in EDGE_TYPES:
            if t not in nbrs:
                continue
            rows, cols, vals = [], [], []
            for v, ns in enumerate(nbrs[t]):
                if ns:
                    w = 1.0 / len(ns)
                    for u in sorted(ns):
                        rows.append(v)
                        cols.append(u)
                        vals.append(w)
            self._coo[t] = (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64), np.asarray(vals))
        self._build_ops()

    def _build_ops(self):
        n = self.num_nodes
        self.ops: dict[EdgeType, sp.csr_matrix] = {
            t: sp.csr_matrix((v, (r, c)), shape=(n, n)) for t, (r, c, v) in self._coo.items()
        }

    @classmethod
    def from_tabular(cls, graph: TabularGraph) -> "RelationalGraph":
        return cls(graph.num_nodes, ((e.src, e.dst, e.type) for e in graph.edges))

    def edges(self) -> list[tuple[int, int, EdgeType]]:
        return [(u, v, t) for t in EDGE_TYPES for u, v in self.edge_list.get(t, [])]

    def permuted(self, perm: Sequence[int]) -> "RelationalGraph":
        """Relabel node ``k`` as ``perm[k]``."""
        return RelationalGraph(self.num_nodes, ((perm[u], perm[v], t) for u, v, t in self.edges()))

    def without(self, etype: EdgeType) -> "RelationalGraph":
        return RelationalGraph(self.num_nodes, ((u, v, t) for u, v, t in self.edges() if t is not etype))

    @classmethod
    def batch(cls, graphs: Sequence["RelationalGraph"]) -> "RelationalGraph":
        """Disjoint union, nodes concatenated in input order."""
        out = cls.__new__(cls)
        out.num_nodes = sum(g.num_nodes for g in graphs)
        offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
        out.edge_list = {}
        out._coo = {}
        for t in EDGE_TYPES:
            parts = [(g, off) for g, off in zip(graphs, offsets) if t in g._coo]
            if not parts:
                continue
            out._coo[t] = tuple(
                np.concatenate([g._coo[t][k] + (off if k < 2 else 0) for g, off in parts]) for k in range(3)
            )
            out.edge_list[t] = [(u + off, v + off) for g, off in parts for u, v in g.edge_list[t]]
        out._build_ops()
        return out


def as_relational(graph) -> RelationalGraph:
    if isinstance(graph, RelationalGraph):
        return graph
    if isinstance(graph, TabularGraph):
        return RelationalGraph.from_tabular(graph)
    raise TypeError(f"expected TabularGraph or RelationalGraph, got {type(graph).__name__}")


# --- parameters ----------------------------------------------------------


def block_name(layer: int, etype: EdgeType | str) -> str:
    name = etype.value if isinstance(etype, EdgeType) else etype
    return f"layer{layer}.{name}"


@dataclass
class RgnnParams:
    """Named weight blocks: ``layer{l}.{EdgeType}``, ``layer{l}.self``, ``head``."""

    blocks: dict[str, np.ndarray]

    def weight(self, layer: int, etype: EdgeType) -> np.ndarray:
        return self.blocks[block_name(layer, etype)]

    def self_weight(self, layer: int) -> np.ndarray | None:
        return self.blocks.get(block_name(layer, "self"))

    @property
    def head(self) -> np.ndarray | None:
        return self.blocks.get("head")

    @property
    def num_classes(self) -> int | None:
        return None if self.head is None else self.head.shape[0]

    def copy(self) -> "RgnnParams":
        return RgnnParams({k: v.copy() for k, v in self.blocks.items()})

    def zeros_like(self) -> "RgnnParams":
        return RgnnParams({k: np.zeros_like(v) for k, v in self.blocks.items()})

    def validate(self, cfg: RgnnConfig) -> None:
        for name, shape in expected_shapes(cfg, self.num_classes).items():
            if name not in self.blocks:
                raise ShapeMismatch(f"missing parameter block {name}")
            if self.blocks[name].shape != shape:
                raise ShapeMismatch(f"block {name} has shape {self.blocks[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.blocks[name])):
                raise ShapeMismatch(f"block {name} has non-finite entries")


def expected_shapes(cfg: RgnnConfig, num_classes: int | None) -> dict[str, tuple[int, int]]:
    shapes = {}
    for l, (din, dout) in enumerate(cfg.layer_dims()):
        for t in EDGE_TYPES:
            shapes[block_name(l, t)] = (dout, din)
        if cfg.self_loop:
            shapes[block_name(l, "self")] = (dout, din)
    if num_classes is not None:
        shapes["head"] = (num_classes, cfg.hidden_dim)
    return shapes


def init_params(cfg: RgnnConfig, num_classes: int | None = None, seed: int | None = None) -> RgnnParams:
    """Uniform(-1/sqrt(in), 1/sqrt(in)) for every block, drawn in canonical block order."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    blocks = {}
    for name, (dout, din) in expected_shapes(cfg, num_classes).items():
        bound = 1.0 / np.sqrt(din)
        blocks[name] = rng.uniform(-bound, bound, size=(dout, din))
    return RgnnParams(blocks)


def save_checkpoint(path, params: RgnnParams, cfg: RgnnConfig) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "num_classes": params.num_classes,
        "blocks": list(params.blocks),
    }
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    arrays.update({f"b{k}": np.ascontiguousarray(v) for k, v in enumerate(params.blocks.values())})
    # np.savez stamps entries with the current time; a fixed stamp keeps the
    # file byte-reproducible
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path, cfg: RgnnConfig | None = None) -> tuple[RgnnParams, RgnnConfig]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ShapeMismatch(f"unsupported checkpoint {meta.get('format')} v{meta.get('version')}")
        blocks = {name: z[f"b{k}"].copy() for k, name in enumerate(meta["blocks"])}
    stored = RgnnConfig(**meta["config"])
    cfg = cfg or stored
    params = RgnnParams(blocks)
    params.validate(cfg)
    return params, cfg


# --- forward / backward ----------------------------------------------------


@dataclass
class NodeStates:
    """Hidden states per layer; ``hidden[0]`` is the input matrix."""

    hidden: list[np.ndarray]
    preact: list[np.ndarray] = field(default_factory=list)
    aggregated: list[dict[EdgeType, np.ndarray]] = field(default_factory=list)

    @property
    def last(self) -> np.ndarray:
        return self.hidden[-1]


def _check_inputs(rg: RelationalGraph, x: np.ndarray, params: RgnnParams, cfg: RgnnConfig):
    if x.ndim != 2 or x.shape != (rg.num_nodes, cfg.input_dim):
        raise ShapeMismatch(f"input has shape {x.shape}, expected ({rg.num_nodes}, {cfg.input_dim})")
    for l, (din, dout) in enumerate(cfg.layer_dims()):
        for t in EDGE_TYPES:
            w = params.blocks.get(block_name(l, t))
            if w is None or w.shape != (dout, din):
                raise ShapeMismatch(f"block {block_name(l, t)} missing or mis-shaped")
        if cfg.self_loop:
            w = params.self_weight(l)
            if w is None or w.shape != (dout, din):
                raise ShapeMismatch(f"self-loop block for layer {l} missing or mis-shaped")


def forward(graph, x, params: RgnnParams, cfg: RgnnConfig) -> NodeStates:
    rg = as_relational(graph)
    x = np.asarray(getattr(x, "vectors", x), dtype=np.float64)
    _check_inputs(rg, x, params, cfg)
    act, _ = _ACTIVATIONS[cfg.activation]
    states = NodeStates(hidden=[x])
    h = x
    for l, (din, dout) in enumerate(cfg.layer_dims()):
        z = np.zeros((rg.num_nodes, dout))
        aggs = {}
        for t in EDGE_TYPES:
            op = rg.ops.get(t)
            if op is None:
                continue
            agg = op @ h
            aggs[t] = agg
            z += agg @ params.weight(l, t).T
        if cfg.self_loop:
            z += h @ params.self_weight(l).T
        h = act(z)
        states.preact.append(z)
        states.aggregated.append(aggs)
        states.hidden.append(h)
    return states


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _mask_and_labels(labels, mask) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(labels, Mapping):
        idx = sorted(labels) if mask is None else sorted(mask)
        y = [labels[k] for k in idx]
    else:
        idx = list(mask) if mask is not None else list(range(len(labels)))
        y = list(labels)
        if len(y) != len(idx):
            raise ShapeMismatch(f"{len(y)} labels for {len(idx)} masked nodes")
    if not idx:
        raise EmptyMask("loss needs at least one labelled node")
    return np.asarray(idx, dtype=np.int64), np.asarray(y, dtype=np.int64)


def logits_for(states: NodeStates, params: RgnnParams, nodes: Sequence[int]) -> np.ndarray:
    if params.head is None:
        raise ShapeMismatch("parameters have no classification head")
    return states.last[np.asarray(nodes, dtype=np.int64)] @ params.head.T


def loss_and_grads(graph, x, params: RgnnParams, cfg: RgnnConfig, labels, mask=None):
    """Mean cross-entropy over masked nodes and its exact gradient per block.

    ``labels`` is either a mapping node -> class (``mask`` optionally
    restricting it) or a sequence aligned with ``mask``.
    """
    rg = as_relational(graph)
    idx, y = _mask_and_labels(labels, mask)
    states = forward(rg, x, params, cfg)
    loss, grads = _backward(rg, states, params, cfg, idx, y)
    return loss, grads


def _loss_only(rg, x, params, cfg, idx, y) -> tuple[float, NodeStates]:
    states = forward(rg, x, params, cfg)
    logp = _log_softmax(logits_for(states, params, idx))
    return float(-logp[np.arange(len(idx)), y].mean()), states


def _backward(rg, states: NodeStates, params: RgnnParams, cfg: RgnnConfig, idx, y):
    _, act_grad = _ACTIVATIONS[cfg.activation]
    m = len(idx)
    logits = logits_for(states, params, idx)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(m), y].mean())
    if np.any((y < 0) | (y >= logits.shape[1])):
        raise ShapeMismatch("label outside the head's class range")

    grads = params.zeros_like()
    dlogits = np.exp(logp)
    dlogits[np.arange(m), y] -= 1.0
    dlogits /= m
    grads.blocks["head"] = dlogits.T @ states.last[idx]
    dh = np.zeros_like(states.last)
    np.add.at(dh, idx, dlogits @ params.head)

    for l in range(cfg.num_layers - 1, -1, -1):
        dz = dh * act_grad(states.preact[l])
        h_in = states.hidden[l]
        dh_in = np.zeros_like(h_in) if l > 0 else None
        for t, agg in states.aggregated[l].items():
            w = params.weight(l, t)
            grads.blocks[block_name(l, t)] = dz.T @ agg
            if dh_in is not None:
                dh_in += rg.ops[t].T @ (dz @ w)
        if cfg.self_loop:
            grads.blocks[block_name(l, "self")] = dz.T @ h_in
            if dh_in is not None:
                dh_in += dz @ params.self_weight(l)
        dh = dh_in
    return loss, grads


def predict(graph, x, params: RgnnParams, cfg: RgnnConfig, nodes: Sequence[int]) -> np.ndarray:
    states = forward(graph, x, params, cfg)
    return np.argmax(logits_for(states, params, nodes), axis=1)


# --- finite-difference verification ------------------------------------------


@dataclass
class BlockCheck:
    checked: int = 0
    excluded: int = 0
    max_rel_err: float = 0.0
    worst: tuple[int, int] | None = None


@dataclass
class GradCheckReport:
    blocks: dict[str, BlockCheck]
    step: float
    tol: float

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks.values()), default=0.0)

    @property
    def excluded(self) -> int:
        return sum(b.excluded for b in self.blocks.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "tol": self.tol,
            "max_rel_err": self.max_rel_err,
            "passed": self.passed,
            "excluded_coordinates": self.excluded,
            "blocks": {
                k: {"checked": b.checked, "excluded": b.excluded, "max_rel_err": b.max_rel_err}
                for k, b in self.blocks.items()
            },
        }


def grad_check(
    graph,
    x,
    params: RgnnParams,
    cfg: RgnnConfig,
    labels,
    mask=None,
    step: float = 1e-4,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-10,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. For ReLU, a
    coordinate whose +/- perturbation flips the sign pattern of any
    pre-activation sits on a kink and is reported as excluded. With
    ``max_coords`` each block is checked on a seeded random subset.
    """
    rg = as_relational(graph)
    x = np.asarray(getattr(x, "vectors", x), dtype=np.float64)
    idx, y = _mask_and_labels(labels, mask)
    _, grads = loss_and_grads(rg, x, params, cfg, dict(zip(idx.tolist(), y.tolist())))
    rng = np.random.default_rng(seed)
    work = params.copy()
    report = GradCheckReport(blocks={}, step=step, tol=tol)
    check_kinks = cfg.activation == "relu"

    for name, w in work.blocks.items():
        bc = BlockCheck()
        coords = list(np.ndindex(*w.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[k] for k in sorted(pick)]
        for c in coords:
            orig = w[c]
            w[c] = orig + step
            lp, sp_ = _loss_only(rg, x, work, cfg, idx, y)
            w[c] = orig - step
            lm, sm_ = _loss_only(rg, x, work, cfg, idx, y)
            w[c] = orig
            if check_kinks and any(
                not np.array_equal(a > 0, b > 0) for a, b in zip(sp_.preact, sm_.preact)
            ):
                bc.excluded += 1
                continue
            num = (lp - lm) / (2 * step)
            ana = grads.blocks[name][c]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            bc.checked += 1
            if err > bc.max_rel_err:
                bc.max_rel_err = float(err)
                bc.worst = tuple(int(v) for v in c)
        report.blocks[name] = bc
    return report
