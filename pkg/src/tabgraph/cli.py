"""``tabgraph`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 embedding-provider error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Callable

import click

from .embeddings import embed_graph
from .errors import CheckFailed, DataError, ProviderError
from .graph import build_graph
from .htmltable import parse_html_table
from .numeric import prefix_numeric_cells
from .pipeline import (
    ConfigError,
    PipelineConfig,
    Run,
    StageResult,
    Workspace,
    demo_corpus_dir,
    discover_inputs,
    evaluate_files,
    resolve_config,
    run_pipeline,
    sha256_file,
    stage_analyze,
    stage_build_graph,
    stage_embed,
    stage_gen_pretrain,
    stage_gen_task,
    stage_ingest,
    stage_train_probe,
    stage_train_probe_synthetic,
    tool_version,
)
from .probe import row_labels
from .rgnn import RgnnConfig, grad_check, init_params
from .structure import analyze
from .table import TableGrid, canonical_json

log = logging.getLogger("tabgraph")

EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 1, 2, 3


def _common(fn: Callable) -> Callable:
    """Options shared by every workspace command."""
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="YAML config file."),
        click.option("--out", type=click.Path(file_okay=False), help="Workspace directory."),
        click.option("--seed", type=int, help="Corpus seed."),
        click.option("--strict/--no-strict", default=None, help="Turn per-table problems into errors."),
        click.option("--jobs", type=int, help="Worker threads for per-table work."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _resolve(config_file, **flags) -> tuple[PipelineConfig, dict[str, str]]:
    overrides = {k.replace("__", "."): v for k, v in flags.items()}
    return resolve_config(config_file, overrides)


def _execute(command: str, cfg: PipelineConfig, sources: dict, body: Callable[[Run, Workspace], None]) -> Run:
    """Run ``body`` and write ``<out>/<command>.manifest.json`` either way."""
    ws = Workspace(cfg.out)
    ws.root.mkdir(parents=True, exist_ok=True)
    run = Run(command, cfg, sources, ws.path(f"{command}.manifest.json"))
    try:
        body(run, ws)
    except BaseException as exc:
        run.write("failed", exc)
        raise
    run.write()
    return run


def _summary(result: StageResult) -> None:
    click.echo(json.dumps({"stage": result.name, **result.counts}, ensure_ascii=False))


@click.group()
@click.version_option(tool_version(), prog_name="tabgraph")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def cli(verbose: int) -> None:
    """Complex tables to typed graphs, RGNN encodings and instruction data."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command()
@click.argument("inputs", nargs=-1, required=True)
@_common
@click.option("--auto-orient/--no-auto-orient", default=None, help="Transpose tables classified as vertical.")
def ingest(inputs, config_file, out, seed, strict, jobs, auto_orient):
    """Parse HTML files, directories or globs into canonical table JSON."""
    cfg, sources = _resolve(
        config_file, inputs=list(inputs), out=out, seed=seed, strict=strict, jobs=jobs, auto_orient=auto_orient
    )

    def body(run, ws):
        files = discover_inputs(cfg.inputs)
        run.add_inputs(files)
        _summary(run.stage("ingest", lambda: stage_ingest(cfg, ws, files)))

    _execute("ingest", cfg, sources, body)


@cli.command("analyze")
@_common
def analyze_cmd(config_file, out, seed, strict, jobs):
    """Header rows, row types, cell roles and orientation for every table."""
    cfg, sources = _resolve(config_file, out=out, seed=seed, strict=strict, jobs=jobs)
    _execute("analyze", cfg, sources, lambda run, ws: _summary(run.stage("analyze", lambda: stage_analyze(cfg, ws))))


@cli.command("build-graph")
@_common
@click.option("--header-header", type=click.Choice(["both", "adjacency", "hierarchy"]), help="Header-header linking.")
@click.option("--prefix-numeric/--no-prefix-numeric", default=None, help="Type-prefix numeric cell texts.")
@click.option("--census", is_flag=True, help="Print per-table edge counts by type.")
def build_graph_cmd(config_file, out, seed, strict, jobs, header_header, prefix_numeric, census):
    """Build the heterogeneous graph of every analysed table."""
    cfg, sources = _resolve(
        config_file, out=out, seed=seed, strict=strict, jobs=jobs, header_header=header_header, prefix_numeric=prefix_numeric
    )

    def body(run, ws):
        res = run.stage("build-graph", lambda: stage_build_graph(cfg, ws))
        if census:
            for d in res.diagnostics:
                click.echo(json.dumps({"table": d["table"], **d["census"]}))
        _summary(res)

    _execute("build-graph", cfg, sources, body)


@cli.command()
@_common
@click.option("--embedder", "embedder__kind", type=click.Choice(["test", "remote"]), help="Embedding provider.")
@click.option("--endpoint", "embedder__endpoint", help="Remote embedding endpoint URL.")
@click.option("--batch-size", "embedder__batch_size", type=int, help="Texts per request.")
@click.option("--cache", "embedder__cache_path", type=click.Path(dir_okay=False), help="sqlite cache file.")
@click.option("--max-in-flight", "embedder__max_in_flight", type=int, help="Concurrent requests.")
@click.option("--dim", "embedder__dim", type=int, help="Vector width.")
def embed(config_file, out, seed, strict, jobs, **emb):
    """Embed node texts of every graph."""
    if emb.get("embedder__dim") is not None:
        emb["rgnn__input_dim"] = emb["embedder__dim"]
    cfg, sources = _resolve(config_file, out=out, seed=seed, strict=strict, jobs=jobs, **emb)
    _execute("embed", cfg, sources, lambda run, ws: _summary(run.stage("embed", lambda: stage_embed(cfg, ws))))


def _gen_options(fn):
    fn = click.option("--limit", type=int, help="Use only the first N tables.")(fn)
    fn = click.option("--max-cells", type=int, help="Skip tables with more cells (default 150).")(fn)
    return fn


@cli.command("gen-pretrain-data")
@_common
@_gen_options
@click.option("--tasks", help="Comma-separated subset of trc,tcm,tcg.")
def gen_pretrain_data(config_file, out, seed, strict, jobs, limit, max_cells, tasks):
    """Self-supervised instruction datasets (TRC, TCM, TCG)."""
    cfg, sources = _resolve(
        config_file, out=out, seed=seed, strict=strict, jobs=jobs, limit=limit, max_cells=max_cells, pretrain_tasks=tasks
    )
    _execute(
        "gen-pretrain-data",
        cfg,
        sources,
        lambda run, ws: _summary(run.stage("gen-pretrain-data", lambda: stage_gen_pretrain(cfg, ws))),
    )


@cli.command("gen-task-data")
@_common
@_gen_options
@click.option("--task", type=click.Choice(["ctc", "ttc", "qa"]), required=True, help="Downstream task.")
def gen_task_data(config_file, out, seed, strict, jobs, limit, max_cells, task):
    """Downstream instruction dataset from annotation sidecars."""
    cfg, sources = _resolve(config_file, out=out, seed=seed, strict=strict, jobs=jobs, limit=limit, max_cells=max_cells)
    name = f"gen-task-data:{task}"
    _execute(
        f"gen-task-data-{task}",
        cfg,
        sources,
        lambda run, ws: _summary(run.stage(name, lambda: stage_gen_task(cfg, ws, task))),
    )


def _model_options(fn):
    options = [
        click.option("--layers", "rgnn__num_layers", type=int, help="RGNN layers."),
        click.option("--hidden-dim", "rgnn__hidden_dim", type=int, help="RGNN hidden width."),
        click.option("--activation", "rgnn__activation", type=click.Choice(["relu", "tanh", "identity"])),
        click.option("--self-loop/--no-self-loop", "rgnn__self_loop", default=None, help="Add a self-connection term."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


@cli.command("train-probe")
@_common
@_model_options
@click.option("--steps", "optimizer__steps", type=int, help="Optimizer steps.")
@click.option("--lr", "optimizer__lr", type=float, help="Adam learning rate.")
@click.option("--batch-size", "optimizer__batch_size", type=int, help="Graphs per step.")
@click.option("--synthetic", type=int, help="Train on N generated tables instead of the workspace corpus.")
def train_probe(config_file, out, seed, strict, jobs, synthetic, **model):
    """Train the row-type probe and write params, trace and metrics."""
    cfg, sources = _resolve(config_file, out=out, seed=seed, strict=strict, jobs=jobs, **model)

    def body(run, ws):
        if synthetic is not None:
            res = run.stage("train-probe", lambda: stage_train_probe_synthetic(cfg, ws, synthetic))
        else:
            res = run.stage("train-probe", lambda: stage_train_probe(cfg, ws))
        _summary(res)

    _execute("train-probe", cfg, sources, body)


def _load_grid(path: Path) -> TableGrid:
    text = path.read_text("utf-8")
    if path.suffix.lower() == ".json":
        return TableGrid.from_json(text)
    return parse_html_table(text)


@cli.command("grad-check")
@click.argument("table", required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@_common
@_model_options
@click.option("--step", type=float, default=1e-4, show_default=True, help="Finite-difference step.")
@click.option("--tol", type=float, default=1e-4, show_default=True, help="Maximum relative error.")
@click.option("--max-coords", type=int, default=200, show_default=True, help="Coordinates checked per block.")
def grad_check_cmd(table, config_file, out, seed, strict, jobs, step, tol, max_coords, **model):
    """Compare analytic and numerical gradients on one table.

    Without TABLE the bundled income-statement table is used. Exits with
    code 2 when the tolerance is not met.
    """
    model.setdefault("rgnn__hidden_dim", None)
    if model["rgnn__hidden_dim"] is None:
        model["rgnn__hidden_dim"] = 16
    cfg, sources = _resolve(config_file, out=out, seed=seed, strict=strict, jobs=jobs, **model)
    path = table or demo_corpus_dir() / "income_statement.html"

    def body(run, ws):
        run.inputs[str(path)] = sha256_file(path)

        def stage():
            grid = prefix_numeric_cells(_load_grid(path))
            report = analyze(grid)
            graph = build_graph(grid, report, cfg.graph_config())
            x = embed_graph(graph, cfg.provider())
            rcfg: RgnnConfig = cfg.rgnn_config()
            params = init_params(rcfg, 2, seed=rcfg.seed)
            labels = dict(zip(graph.row_nodes(), row_labels(report)))
            rep = grad_check(graph, x, params, rcfg, labels, step=step, tol=tol, max_coords=max_coords, seed=cfg.seed)
            res = StageResult("grad-check", counts=rep.to_dict())
            out_path = ws.path("grad_check.json")
            out_path.write_text(canonical_json(rep.to_dict()), encoding="utf-8")
            res.outputs.append(out_path)
            return res

        res = run.stage("grad-check", stage)
        click.echo(json.dumps({k: res.counts[k] for k in ("max_rel_err", "passed", "excluded_coordinates")}))
        if not res.counts["passed"]:
            raise CheckFailed(f"max relative error {res.counts['max_rel_err']:.3e} exceeds {tol:g}")

    _execute("grad-check", cfg, sources, body)


@cli.command("eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Predictions JSONL.")
@click.option("--gold", "gold_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Gold JSONL.")
@click.option("--task", type=click.Choice(["ctc", "ttc", "qa"]), required=True)
@_common
def eval_cmd(pred_path, gold_path, task, config_file, out, seed, strict, jobs):
    """Score predictions: Macro-F1 for ctc/ttc, normalized exact match for qa.

    Both files hold one {"id", "answer"} object per line; generated
    dataset files work as gold.
    """
    cfg, sources = _resolve(config_file, out=out, seed=seed, strict=strict, jobs=jobs)

    def body(run, ws):
        run.add_inputs([Path(pred_path), Path(gold_path)])

        def stage():
            metrics = evaluate_files(pred_path, gold_path, task)
            out_path = ws.path(f"eval_{task}.json")
            out_path.write_text(canonical_json(metrics), encoding="utf-8")
            return StageResult("eval", counts=metrics, outputs=[out_path])

        res = run.stage("eval", stage)
        click.echo(json.dumps(res.counts, ensure_ascii=False))

    _execute("eval", cfg, sources, body)


@cli.command()
@click.argument("inputs", nargs=-1)
@_common
@click.option("--demo", is_flag=True, help="Run on the bundled 10-table demo corpus.")
@click.option("--auto-orient/--no-auto-orient", default=None)
@click.option("--embedder", "embedder__kind", type=click.Choice(["test", "remote"]))
@click.option("--endpoint", "embedder__endpoint")
@click.option("--cache", "embedder__cache_path", type=click.Path(dir_okay=False))
@click.option("--tasks", "pretrain_tasks", help="Comma-separated subset of trc,tcm,tcg.")
@click.option("--max-cells", type=int)
@click.option("--limit", type=int)
@click.option("--steps", "optimizer__steps", type=int)
def pipeline(inputs, config_file, demo, **flags):
    """Every stage in order, from HTML to probe metrics, with one manifest."""
    if demo and inputs:
        raise click.UsageError("give either INPUTS or --demo")
    if demo:
        inputs = (str(demo_corpus_dir()),)
    cfg, sources = _resolve(config_file, inputs=list(inputs) or None, **flags)
    if not cfg.inputs:
        raise click.UsageError("no inputs: pass paths, --demo, or set 'inputs' in the config file")
    run, manifest = run_pipeline(cfg, sources)
    for s in run.stages:
        _summary(s)
    click.echo(f"manifest: {manifest}")


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="tabgraph", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except (DataError, ProviderError) as exc:
        stage = getattr(exc, "stage", None)
        where = f"[{stage}] " if stage else ""
        click.echo(f"error: {where}{type(exc).__name__}: {exc}", err=True)
        return EXIT_PROVIDER if isinstance(exc, ProviderError) else EXIT_DATA
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
