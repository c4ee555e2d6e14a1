"""Corpus stages behind the CLI, with config resolution and run manifests.

A run works inside one output directory:

    tables/      canonical table JSON, annotation sidecars, index.json
    structure/   structure reports
    graphs/      graph JSON
    embeddings/  node-ordered .npy matrices
    datasets/    instruction JSONL, one file per task
    probe/       params.npz, trace.jsonl, metrics.json
"""

from __future__ import annotations

import copy
import datetime as dt
import glob
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata, resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import yaml

from .embeddings import ENDPOINT_ENV, ProviderConfig, embed_texts
from .errors import AlignmentError, DataError, MissingAnnotation, TabgraphError
from .graph import EDGE_TYPES, GraphConfig, TabularGraph, build_graph, edge_census
from .htmltable import parse_html
from .instructions import DEFAULT_MAX_CELLS, Task, gen_downstream, gen_pretrain, write_jsonl
from .metrics import macro_f1, per_class_f1, qa_accuracy
from .numeric import is_numeric, prefix_numeric_cells
from .probe import TRC_CLASSES, prepare, row_labels, split, trc_example
from .rgnn import RgnnConfig, save_checkpoint
from .structure import Orientation, RowType, StructureReport, analyze, transpose
from .synthetic import synthetic_corpus
from .table import TableGrid, TaskAnnotation, canonical_json
from .train import Example, OptimizerConfig, train

log = logging.getLogger(__name__)

TASK_NAMES = {"trc": Task.TRC, "tcm": Task.TCM, "tcg": Task.TCG, "ctc": Task.CTC, "ttc": Task.TTC, "qa": Task.QA}
HTML_SUFFIXES = (".html", ".htm")


class ConfigError(TabgraphError):
    """Invalid configuration; reported as a usage error."""


# --- configuration -------------------------------------------------------


@dataclass
class PipelineConfig:
    inputs: list[str] = field(default_factory=list)
    out: str = "tabgraph-out"
    seed: int = 0
    strict: bool = False
    auto_orient: bool = False
    prefix_numeric: bool = True
    max_cells: int = DEFAULT_MAX_CELLS
    limit: int | None = None
    pretrain_tasks: list[str] = field(default_factory=lambda: ["trc", "tcm", "tcg"])
    downstream_tasks: list[str] = field(default_factory=lambda: ["ctc", "ttc", "qa"])
    header_header: str = "both"
    jobs: int = 1
    val_fraction: float = 0.2
    embedder: dict[str, Any] = field(
        default_factory=lambda: {
            "kind": "test",
            "endpoint": None,
            "batch_size": 32,
            "cache_path": None,
            "dim": 768,
            "max_in_flight": 1,
            "timeout": 30.0,
            "provider_name": None,
        }
    )
    rgnn: dict[str, Any] = field(
        default_factory=lambda: {
            "num_layers": 2,
            "hidden_dim": 64,
            "input_dim": 768,
            "activation": "relu",
            "self_loop": False,
            "seed": 7,
        }
    )
    optimizer: dict[str, Any] = field(
        default_factory=lambda: {"lr": 1e-3, "steps": 300, "seed": 11, "batch_size": 32}
    )

    def provider(self) -> ProviderConfig:
        return ProviderConfig(**self.embedder)

    def rgnn_config(self) -> RgnnConfig:
        return RgnnConfig(**self.rgnn)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.optimizer)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(header_header=self.header_header)

    def to_dict(self) -> dict:
        return asdict(self)


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def resolve_config(
    config_file: str | os.PathLike | None = None, overrides: dict[str, Any] | None = None
) -> tuple[PipelineConfig, dict[str, str]]:
    """Merge defaults, a YAML file and flag overrides (in rising precedence).

    ``overrides`` uses dotted keys for nested sections, e.g.
    ``{"embedder.kind": "remote"}``. Returns the config and the source of
    every key (``default``, ``file`` or ``flag``).
    """
    cfg = PipelineConfig().to_dict()
    known = _flatten(cfg)
    sources = {k: "default" for k in known}
    layers = []
    if config_file is not None:
        with open(config_file, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{config_file}: expected a mapping at the top level")
        layers.append(("file", _flatten(data)))
    layers.append(("flag", {k: v for k, v in (overrides or {}).items() if v is not None}))
    for source, values in layers:
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} (from {source})")
            section, _, leaf = key.rpartition(".")
            target = cfg[section] if section else cfg
            target[leaf] = value
            sources[key] = source

    emb = cfg["embedder"]
    if emb["kind"] == "remote" and not emb["endpoint"] and os.environ.get(ENDPOINT_ENV):
        emb["endpoint"] = os.environ[ENDPOINT_ENV]
        sources["embedder.endpoint"] = "env"
    for key in ("pretrain_tasks", "downstream_tasks"):
        if isinstance(cfg[key], str):
            cfg[key] = [t for t in cfg[key].split(",") if t]
        bad = [t for t in cfg[key] if t not in TASK_NAMES]
        if bad:
            raise ConfigError(f"unknown task(s) {bad} in {key}")
    if isinstance(cfg["inputs"], str):
        cfg["inputs"] = [cfg["inputs"]]
    try:
        out = PipelineConfig(**cfg)
        out.provider()
        rg = out.rgnn_config()
        out.optimizer_config()
        out.graph_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if emb["dim"] != rg.input_dim:
        raise ConfigError(f"embedder.dim ({emb['dim']}) must equal rgnn.input_dim ({rg.input_dim})")
    if not 0.0 <= out.val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in [0, 1)")
    return out, sources


# --- workspace -----------------------------------------------------------


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


class Workspace:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def index(self) -> list[dict]:
        p = self.path("tables", "index.json")
        if not p.exists():
            raise DataError(f"{p} not found; run ingest first")
        return json.loads(p.read_text("utf-8"))

    def grid(self, tid: str) -> TableGrid:
        return TableGrid.from_json(self.path("tables", f"{tid}.json").read_text("utf-8"))

    def annotation(self, tid: str) -> TaskAnnotation | None:
        p = self.path("tables", f"{tid}.annotation.json")
        return TaskAnnotation.from_dict(json.loads(p.read_text("utf-8"))) if p.exists() else None

    def report(self, tid: str, grid: TableGrid) -> StructureReport:
        p = self.path("structure", f"{tid}.json")
        if not p.exists():
            raise DataError(f"{p} not found; run analyze first")
        return StructureReport.from_dict(json.loads(p.read_text("utf-8")), grid)

    def graph(self, tid: str) -> TabularGraph:
        p = self.path("graphs", f"{tid}.json")
        if not p.exists():
            raise DataError(f"{p} not found; run build-graph first")
        return TabularGraph.from_json(p.read_text("utf-8"))

    def embeddings(self, tid: str) -> np.ndarray:
        p = self.path("embeddings", f"{tid}.npy")
        if not p.exists():
            raise DataError(f"{p} not found; run embed first")
        return np.load(p, allow_pickle=False)


@dataclass
class StageResult:
    name: str
    counts: dict[str, Any] = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "counts": self.counts, "diagnostics": self.diagnostics}


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Map with optional threads; results keep input order."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def discover_inputs(inputs: Iterable[str]) -> list[Path]:
    """Expand files, directories and glob patterns into a sorted list of HTML files."""
    found: set[Path] = set()
    for spec in inputs:
        p = Path(spec)
        if p.is_dir():
            found.update(q for q in p.iterdir() if q.suffix.lower() in HTML_SUFFIXES)
        elif p.is_file():
            found.add(p)
        else:
            matches = [Path(m) for m in glob.glob(spec, recursive=True)]
            if not matches:
                raise DataError(f"no input matches {spec!r}")
            found.update(m for m in matches if m.is_file())
    files = sorted(found, key=lambda q: (q.stem, str(q)))
    stems = [f.stem for f in files]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise DataError(f"duplicate table ids from file names: {dupes}")
    return files


def demo_corpus_dir() -> Path:
    return Path(str(resources.files("tabgraph").joinpath("data/demo")))


# --- stages --------------------------------------------------------------


def stage_ingest(cfg: PipelineConfig, ws: Workspace, files: Sequence[Path]) -> StageResult:
    res = StageResult("ingest")
    index = []
    for path in files:
        tid = path.stem
        try:
            parsed = parse_html(path.read_text("utf-8"), strict=cfg.strict)
        except DataError as exc:
            if cfg.strict:
                raise type(exc)(f"{path}: {exc}") from None
            res.diagnostics.append({"table": tid, "kind": "parse_error", "error": str(exc)})
            continue
        grid = parsed.grid
        diags = [{"table": tid, **d} for d in parsed.diagnostics]
        transposed = False
        if cfg.auto_orient:
            report = analyze(grid)
            if report.orientation is Orientation.VERTICAL:
                grid = transpose(grid)
                transposed = True
                diags.append({"table": tid, "kind": "transposed", "features": report.orientation_features})
        n_numeric = sum(is_numeric(c.text) for c in grid.cells)
        if n_numeric:
            diags.append({"table": tid, "kind": "numeric_cells", "count": n_numeric})

        context = None
        side = path.with_name(f"{tid}.annotation.json")
        if side.exists():
            raw = json.loads(side.read_text("utf-8"))
            ann = TaskAnnotation.from_dict(raw)
            context = raw.get("context")
            if transposed and ann.cell_labels is not None:
                ann.cell_labels = {(c, r): lab for (r, c), lab in ann.cell_labels.items()}
            if ann.cell_labels is not None:
                try:
                    ann.check_cells(grid)
                except MissingAnnotation as exc:
                    if cfg.strict:
                        raise MissingAnnotation(f"{side}: {exc}") from None
                    diags.append({"table": tid, "kind": "annotation_dropped", "error": str(exc)})
                    ann.cell_labels = None
            body = ann.to_dict()
            if context:
                body["context"] = context
            res.outputs.append(_write_text(ws.path("tables", f"{tid}.annotation.json"), canonical_json(body)))

        res.outputs.append(_write_text(ws.path("tables", f"{tid}.json"), grid.to_json()))
        res.diagnostics += diags
        index.append(
            {
                "id": tid,
                "source": path.name,
                "caption": parsed.caption,
                "context": context,
                "annotated": side.exists(),
                "transposed": transposed,
                "n_rows": grid.n_rows,
                "n_cols": grid.n_cols,
                "n_cells": len(grid.cells),
            }
        )
    res.outputs.append(_write_text(ws.path("tables", "index.json"), canonical_json(index)))
    res.counts = {
        "files": len(files),
        "tables": len(index),
        "failed": len(files) - len(index),
        "transposed": sum(e["transposed"] for e in index),
    }
    return res


def stage_analyze(cfg: PipelineConfig, ws: Workspace) -> StageResult:
    res = StageResult("analyze")
    entries = ws.index()

    def one(e):
        report = analyze(ws.grid(e["id"]))
        path = _write_text(ws.path("structure", f"{e['id']}.json"), canonical_json(report.to_dict()))
        return report, path

    header = data = vertical = 0
    for e, (report, path) in zip(entries, _pmap(one, entries, cfg.jobs)):
        res.outputs.append(path)
        res.diagnostics += [{"table": e["id"], **d} for d in report.diagnostics]
        n_header = report.row_types.count(RowType.HEADER)
        header += n_header
        data += len(report.row_types) - n_header
        vertical += report.orientation is Orientation.VERTICAL
    res.counts = {"tables": len(entries), "header_rows": header, "data_rows": data, "vertical": vertical}
    return res


def stage_build_graph(cfg: PipelineConfig, ws: Workspace) -> StageResult:
    res = StageResult("build-graph")
    entries = ws.index()
    gcfg = cfg.graph_config()

    def one(e):
        grid = ws.grid(e["id"])
        if cfg.prefix_numeric:
            grid = prefix_numeric_cells(grid)
        graph = build_graph(grid, ws.report(e["id"], grid), gcfg)
        return graph, _write_text(ws.path("graphs", f"{e['id']}.json"), graph.to_json())

    total = {t.value: 0 for t in EDGE_TYPES}
    per_table = {}
    nodes = 0
    for e, (graph, path) in zip(entries, _pmap(one, entries, cfg.jobs)):
        res.outputs.append(path)
        census = {t.value: n for t, n in edge_census(graph).items()}
        per_table[e["id"]] = census
        for k, n in census.items():
            total[k] += n
        nodes += graph.num_nodes
    res.counts = {"tables": len(entries), "nodes": nodes, "edges": sum(total.values()), "census": total}
    res.diagnostics = [{"table": tid, "kind": "census", "census": c} for tid, c in per_table.items()]
    return res


def stage_embed(cfg: PipelineConfig, ws: Workspace) -> StageResult:
    """Embed every node text of the corpus in one provider call, then split per table."""
    res = StageResult("embed")
    entries = ws.index()
    graphs = [ws.graph(e["id"]) for e in entries]
    texts = [t for g in graphs for t in g.texts()]
    provider = cfg.provider()
    matrix = embed_texts(texts, provider)
    offset = 0
    for e, g in zip(entries, graphs):
        block = matrix.vectors[offset : offset + g.num_nodes]
        offset += g.num_nodes
        path = ws.path("embeddings", f"{e['id']}.npy")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.ascontiguousarray(block, dtype=np.float64), allow_pickle=False)
        res.outputs.append(path)
    res.counts = {
        "tables": len(entries),
        "vectors": len(texts),
        "distinct_texts": len(set(texts)),
        "dim": matrix.dim,
        "provider": matrix.provider_id,
    }
    return res


def _selected(cfg: PipelineConfig, ws: Workspace, res: StageResult) -> list[dict]:
    entries = ws.index()
    if cfg.limit is not None:
        entries = entries[: cfg.limit]
    kept = []
    for e in entries:
        if e["n_cells"] > cfg.max_cells:
            res.diagnostics.append({"table": e["id"], "kind": "skipped_max_cells", "cells": e["n_cells"]})
        else:
            kept.append(e)
    return kept


def stage_gen_pretrain(cfg: PipelineConfig, ws: Workspace) -> StageResult:
    res = StageResult("gen-pretrain-data")
    tasks = [TASK_NAMES[t] for t in cfg.pretrain_tasks]
    by_task: dict[Task, list] = {t: [] for t in tasks}
    entries = _selected(cfg, ws, res)

    def one(e):
        grid = ws.grid(e["id"])
        context = e.get("context") or e.get("caption")
        return gen_pretrain(grid, ws.report(e["id"], grid), ws.graph(e["id"]), tasks, cfg.seed, e["id"], context)

    for samples in _pmap(one, entries, cfg.jobs):
        for s in samples:
            by_task[s.task].append(s)
    for task, samples in by_task.items():
        name = next(k for k, v in TASK_NAMES.items() if v is task)
        path = ws.path("datasets", f"{name}.jsonl")
        path.parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(samples, path)
        res.outputs.append(path)
        res.counts[name] = len(samples)
    res.counts["tables"] = len(entries)
    if Task.TCG in by_task:
        res.counts["tcg_weak_targets"] = sum(s.meta["weak_target"] for s in by_task[Task.TCG])
    return res


def _needs(task: Task, ann: TaskAnnotation | None) -> bool:
    if ann is None:
        return False
    if task is Task.CTC:
        return ann.cell_labels is not None
    if task is Task.TTC:
        return ann.table_label is not None
    return bool(ann.qa_pairs)


def stage_gen_task(cfg: PipelineConfig, ws: Workspace, task_name: str, require: bool = True) -> StageResult:
    """Downstream samples for one task.

    Tables without the needed annotation are skipped with a diagnostic
    (an error under ``strict``). With ``require``, a corpus where no table
    carries the annotation raises ``MissingAnnotation``.
    """
    task = TASK_NAMES[task_name]
    res = StageResult(f"gen-task-data:{task_name}")
    entries = _selected(cfg, ws, res)
    anns = {e["id"]: ws.annotation(e["id"]) for e in entries}
    usable = [e for e in entries if _needs(task, anns[e["id"]])]
    for e in entries:
        if not _needs(task, anns[e["id"]]):
            if cfg.strict:
                raise MissingAnnotation(f"{e['id']}: no {task.value} annotation")
            res.diagnostics.append({"table": e["id"], "kind": "missing_annotation", "task": task.value})
    if require and not usable:
        raise MissingAnnotation(f"no table in the corpus carries a {task.value} annotation")

    label_set = None
    if task is Task.CTC:
        label_set = sorted({lab for e in usable for lab in anns[e["id"]].cell_labels.values()})
    elif task is Task.TTC:
        label_set = sorted({anns[e["id"]].table_label for e in usable})

    def one(e):
        grid = ws.grid(e["id"])
        return gen_downstream(
            grid, ws.report(e["id"], grid), ws.graph(e["id"]), anns[e["id"]], task, cfg.seed, e["id"], label_set
        )

    samples = [s for batch in _pmap(one, usable, cfg.jobs) for s in batch]
    path = ws.path("datasets", f"{task_name}.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(samples, path)
    res.outputs.append(path)
    res.counts = {"tables": len(usable), "samples": len(samples), "skipped": len(entries) - len(usable)}
    return res


def _train_probe(cfg: PipelineConfig, ws: Workspace, examples: list[Example], res: StageResult) -> StageResult:
    rcfg, opt = cfg.rgnn_config(), cfg.optimizer_config()
    if not examples:
        raise DataError("no tables to train on")
    if cfg.val_fraction > 0:
        tr, va = split(len(examples), cfg.val_fraction, opt.seed)
    else:
        tr, va = list(range(len(examples))), []
    train_set = [examples[k] for k in tr]
    val_set = [examples[k] for k in va] or None
    result = train(train_set, rcfg, opt, num_classes=len(TRC_CLASSES), val=val_set)

    probe = ws.path("probe")
    probe.mkdir(parents=True, exist_ok=True)
    save_checkpoint(probe / "params.npz", result.params, rcfg)
    trace = "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.trace)
    metrics = {
        "task": Task.TRC.value,
        "classes": [c.value for c in TRC_CLASSES],
        "n_train": len(train_set),
        "n_val": len(val_set or []),
        "steps": opt.steps,
        "final_loss": result.trace[-1]["loss"] if result.trace else None,
        "val_macro_f1": result.final_val_f1,
    }
    res.outputs += [
        probe / "params.npz",
        _write_text(probe / "trace.jsonl", trace),
        _write_text(probe / "metrics.json", canonical_json(metrics)),
    ]
    res.counts.update(metrics)
    return res


def stage_train_probe(cfg: PipelineConfig, ws: Workspace) -> StageResult:
    """Row-type probe on the workspace corpus; writes params, trace and metrics."""
    examples = []
    for e in ws.index():
        grid = ws.grid(e["id"])
        report = ws.report(e["id"], grid)
        graph = ws.graph(e["id"])
        examples.append(Example.make(graph, ws.embeddings(e["id"]), graph.row_nodes(), row_labels(report)))
    return _train_probe(cfg, ws, examples, StageResult("train-probe"))


def stage_train_probe_synthetic(cfg: PipelineConfig, ws: Workspace, n_tables: int) -> StageResult:
    """The same probe on a generated corpus of ``n_tables`` tables seeded by ``cfg.seed``."""
    provider = cfg.provider()
    examples = []
    for t in synthetic_corpus(n_tables, cfg.seed):
        graph, report, x = prepare(t.grid, provider, cfg.graph_config())
        examples.append(trc_example(graph, report, x))
    res = StageResult("train-probe", counts={"synthetic_tables": n_tables, "corpus_seed": cfg.seed})
    return _train_probe(cfg, ws, examples, res)


# --- evaluation ----------------------------------------------------------


def _read_answers(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AlignmentError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(rec, dict) or "id" not in rec or "answer" not in rec:
                raise AlignmentError(f"{path}:{lineno}: record needs 'id' and 'answer'")
            if rec["id"] in out:
                raise AlignmentError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
            out[rec["id"]] = str(rec["answer"])
    return out


def _split_labels(answer: str) -> list[str]:
    return [x.strip() for x in answer.split(",")]


def evaluate_answers(gold: dict[str, str], pred: dict[str, str], task: str) -> dict:
    """Macro-F1 for ctc/ttc (per cell for ctc), normalized exact match for qa."""
    if set(gold) != set(pred):
        missing = sorted(set(gold) - set(pred))[:5]
        extra = sorted(set(pred) - set(gold))[:5]
        raise AlignmentError(f"ids differ: missing={missing} extra={extra}")
    ids = sorted(gold)
    if task == "qa":
        g = [gold[k] for k in ids]
        p = [pred[k] for k in ids]
        return {"task": Task.QA.value, "metric": "exact_match", "n": len(ids), "score": qa_accuracy(g, p)}
    if task == "ctc":
        g, p = [], []
        for k in ids:
            gl, pl = _split_labels(gold[k]), _split_labels(pred[k])
            if len(gl) != len(pl):
                raise AlignmentError(f"{k}: {len(gl)} gold cell labels vs {len(pl)} predicted")
            g += gl
            p += pl
    elif task == "ttc":
        g = [gold[k].strip() for k in ids]
        p = [pred[k].strip() for k in ids]
    else:
        raise ConfigError(f"unknown eval task {task!r}")
    return {
        "task": TASK_NAMES[task].value,
        "metric": "macro_f1",
        "n": len(g),
        "score": macro_f1(g, p),
        "per_class_f1": {str(k): v for k, v in per_class_f1(g, p).items()},
    }


def evaluate_files(pred_path, gold_path, task: str) -> dict:
    return evaluate_answers(_read_answers(gold_path), _read_answers(pred_path), task)


# --- manifests -----------------------------------------------------------


def tool_version() -> str:
    try:
        return metadata.version("tabgraph")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="milliseconds")


class Run:
    """Collects stage results and writes the run's single manifest."""

    def __init__(self, command: str, cfg: PipelineConfig, sources: dict[str, str], manifest_path: Path):
        self.command = command
        self.cfg = cfg
        self.sources = sources
        self.manifest_path = manifest_path
        self.stages: list[StageResult] = []
        self.inputs: dict[str, str] = {}
        self.extra_outputs: list[Path] = []
        self.started = _now()
        self._t0 = time.perf_counter()

    def add_inputs(self, paths: Iterable[Path]) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)
            side = p.with_name(f"{p.stem}.annotation.json")
            if side.exists():
                self.inputs[str(side)] = sha256_file(side)

    def stage(self, name: str, fn: Callable[[], StageResult]) -> StageResult:
        log.info("stage %s", name)
        try:
            result = fn()
        except TabgraphError as exc:
            exc.stage = name
            raise
        self.stages.append(result)
        return result

    def write(self, status: str = "ok", error: BaseException | None = None) -> Path:
        root = self.manifest_path.parent
        outputs = {}
        for path in [p for s in self.stages for p in s.outputs] + self.extra_outputs:
            try:
                key = path.resolve().relative_to(root.resolve()).as_posix()
            except ValueError:
                key = str(path)
            outputs[key] = sha256_file(path)
        manifest = {
            "tool": "tabgraph",
            "version": tool_version(),
            "command": self.command,
            "status": status,
            "config": self.cfg.to_dict(),
            "config_sources": self.sources,
            "inputs": self.inputs,
            "outputs": dict(sorted(outputs.items())),
            "stages": [s.to_dict() for s in self.stages],
            "started_at": self.started,
            "finished_at": _now(),
            "wall_seconds": round(time.perf_counter() - self._t0, 3),
        }
        if error is not None:
            manifest["error"] = {
                "stage": getattr(error, "stage", None),
                "type": type(error).__name__,
                "message": str(error),
            }
        return _write_text(self.manifest_path, canonical_json(manifest))


TIMING_KEYS = ("started_at", "finished_at", "wall_seconds")


def manifest_without_timing(manifest: dict) -> dict:
    m = copy.deepcopy(manifest)
    for k in TIMING_KEYS:
        m.pop(k, None)
    return m


def run_pipeline(cfg: PipelineConfig, sources: dict[str, str], command: str = "pipeline") -> tuple[Run, Path]:
    """All stages in order; the manifest is written even when a stage fails."""
    ws = Workspace(cfg.out)
    ws.root.mkdir(parents=True, exist_ok=True)
    run = Run(command, cfg, sources, ws.path("manifest.json"))
    try:
        files = discover_inputs(cfg.inputs)
        run.add_inputs(files)
        run.stage("ingest", lambda: stage_ingest(cfg, ws, files))
        run.stage("analyze", lambda: stage_analyze(cfg, ws))
        run.stage("build-graph", lambda: stage_build_graph(cfg, ws))
        run.stage("embed", lambda: stage_embed(cfg, ws))
        run.stage("gen-pretrain-data", lambda: stage_gen_pretrain(cfg, ws))
        for t in cfg.downstream_tasks:
            run.stage(f"gen-task-data:{t}", lambda t=t: stage_gen_task(cfg, ws, t, require=False))
        run.stage("train-probe", lambda: stage_train_probe(cfg, ws))
    except BaseException as exc:
        run.write("failed", exc)
        raise
    return run, run.write()
