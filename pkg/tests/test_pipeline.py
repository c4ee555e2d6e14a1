import json

import pytest

from tabgraph.errors import AlignmentError, DataError
from tabgraph.pipeline import (
    PipelineConfig,
    Workspace,
    discover_inputs,
    evaluate_answers,
    evaluate_files,
    stage_analyze,
    stage_build_graph,
    stage_embed,
    stage_gen_pretrain,
    stage_gen_task,
    stage_ingest,
)
from tabgraph.table import TableGrid

VERTICAL = (
    "<table><tr><th>revenue</th><td>1,200</td><td>1,450</td></tr><tr><th>cost</th><td>800</td><td>900</td></tr>"
    "<tr><th>margin</th><td>33%</td><td>38%</td></tr><tr><th>staff</th><td>12</td><td>14</td></tr></table>"
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_discover_inputs(tmp_path):
    a = write(tmp_path / "a.html", "<table></table>")
    write(tmp_path / "notes.txt", "x")
    sub = tmp_path / "sub"
    sub.mkdir()
    b = write(sub / "b.htm", "<table></table>")
    assert discover_inputs([str(tmp_path), str(tmp_path / "sub" / "*.htm")]) == [a, b]
    write(sub / "a.html", "<table></table>")
    with pytest.raises(DataError, match="duplicate"):
        discover_inputs([str(tmp_path), str(sub)])
    with pytest.raises(DataError, match="no input"):
        discover_inputs([str(tmp_path / "missing*.html")])


def run_front(tmp_path, files, **cfg):
    cfg = PipelineConfig(out=str(tmp_path / "ws"), **cfg)
    ws = Workspace(cfg.out)
    ing = stage_ingest(cfg, ws, files)
    stage_analyze(cfg, ws)
    stage_build_graph(cfg, ws)
    return cfg, ws, ing


def test_sidecar_labels_follow_transposition(tmp_path):
    f = write(tmp_path / "v.html", VERTICAL)
    labels = [{"row": r, "col": c, "label": "header cell" if c == 0 else "data cell"} for r in range(4) for c in range(3)]
    write(tmp_path / "v.annotation.json", json.dumps({"cell_labels": labels, "context": "A profile."}))
    cfg, ws, ing = run_front(tmp_path, [f], auto_orient=True)
    ann = json.loads((ws.root / "tables" / "v.annotation.json").read_text())
    grid = TableGrid.from_dict(json.loads((ws.root / "tables" / "v.json").read_text()))
    assert (grid.n_rows, grid.n_cols) == (3, 4)
    assert {(e["row"], e["col"]): e["label"] for e in ann["cell_labels"]}[(0, 3)] == "header cell"
    assert ann["context"] == "A profile."
    stage_gen_pretrain(cfg, ws)
    tcg = json.loads((ws.root / "datasets" / "tcg.jsonl").read_text())
    assert tcg["answer"] == "A profile." and tcg["meta"]["weak_target"] is False


def test_bad_sidecar_dropped_or_strict(tmp_path):
    f = write(tmp_path / "t.html", "<table><tr><td>a</td><td>b</td></tr></table>")
    write(tmp_path / "t.annotation.json", json.dumps({"cell_labels": [{"row": 0, "col": 0, "label": "x"}]}))
    cfg, ws, ing = run_front(tmp_path, [f])
    assert [d["kind"] for d in ing.diagnostics if d.get("table") == "t"] == ["annotation_dropped"]
    with pytest.raises(DataError):
        stage_ingest(PipelineConfig(out=str(tmp_path / "ws2"), strict=True), Workspace(tmp_path / "ws2"), [f])


def test_max_cells_and_limit(tmp_path):
    big = write(tmp_path / "big.html", "<table>" + "<tr><td>a</td><td>1</td></tr>" * 6 + "</table>")
    small = write(tmp_path / "small.html", "<table><tr><td>a</td></tr></table>")
    cfg, ws, _ = run_front(tmp_path, [big, small], max_cells=10)
    stage_embed(cfg, ws)
    res = stage_gen_pretrain(cfg, ws)
    assert {"table": "big", "kind": "skipped_max_cells", "cells": 12} in res.diagnostics
    lines = (ws.root / "datasets" / "trc.jsonl").read_text().splitlines()
    assert [json.loads(x)["meta"]["table_id"] for x in lines] == ["small"]


def test_numeric_prefix_only_in_graph(tmp_path):
    f = write(tmp_path / "n.html", "<table><tr><td>k</td><td>v</td></tr><tr><td>x</td><td>3.5%</td></tr></table>")
    cfg, ws, _ = run_front(tmp_path, [f])
    raw = json.loads((ws.root / "tables" / "n.json").read_text())
    assert raw["cells"][3]["text"] == "3.5%"
    graph = json.loads((ws.root / "graphs" / "n.json").read_text())
    assert graph["nodes"][-1]["init_text"] == "Percentage Value: 3.5%"


def test_task_stage_requires_usable_table(tmp_path):
    f = write(tmp_path / "t.html", "<table><tr><td>a</td></tr></table>")
    cfg, ws, _ = run_front(tmp_path, [f])
    res = stage_gen_task(cfg, ws, "ttc", require=False)
    assert res.counts["samples"] == 0
    with pytest.raises(DataError):
        stage_gen_task(cfg, ws, "ttc")


def test_evaluate_answers():
    gold = {"a": "finance", "b": "sports", "c": "finance"}
    assert evaluate_answers(gold, dict(gold), "ttc")["score"] == 1.0
    res = evaluate_answers(gold, {"a": "finance", "b": "news", "c": "finance"}, "ttc")
    assert res["score"] == 0.5 and res["per_class_f1"] == {"finance": 1.0, "sports": 0.0}
    qa = evaluate_answers({"q": "53,196,521.18"}, {"q": "53,196,521.18."}, "qa")
    assert qa == {"task": "TableQA", "metric": "exact_match", "n": 1, "score": 1.0}
    with pytest.raises(AlignmentError, match="missing"):
        evaluate_answers(gold, {"a": "x"}, "ttc")
    with pytest.raises(AlignmentError):
        evaluate_answers({"a": "x, y"}, {"a": "x"}, "ctc")


def test_evaluate_files_bad_lines(tmp_path):
    good = write(tmp_path / "g.jsonl", json.dumps({"id": "a", "answer": "x"}) + "\n")
    for body, msg in (("{not json\n", "invalid JSON"), ('{"id": "a"}\n', "needs"),
                      ('{"id": "a", "answer": "x"}\n{"id": "a", "answer": "y"}\n', "duplicate")):
        bad = write(tmp_path / "b.jsonl", body)
        with pytest.raises(AlignmentError, match=msg):
            evaluate_files(bad, good, "ttc")
