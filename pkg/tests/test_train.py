import numpy as np
import pytest

from tabgraph.embeddings import ProviderConfig
from tabgraph.errors import Divergence, ShapeMismatch
from tabgraph.probe import prepare, row_labels, split, trc_example
from tabgraph.rgnn import RgnnConfig, init_params
from tabgraph.structure import analyze
from tabgraph.synthetic import synthetic_corpus
from tabgraph.train import Adam, Example, OptimizerConfig, collate, evaluate, train

from .conftest import star_graph

CFG = RgnnConfig(num_layers=2, hidden_dim=8, input_dim=16, seed=3)


def small_examples(n=12, seed=0):
    out = []
    for t in synthetic_corpus(n, seed):
        graph, report, x = prepare(t.grid, ProviderConfig(dim=16))
        out.append(trc_example(graph, report, x))
    return out


def test_lr_zero_leaves_params():
    ex = small_examples(4)
    p0 = init_params(CFG, 2)
    res = train(ex, CFG, OptimizerConfig(lr=0.0, steps=5, batch_size=2), 2, params=p0)
    for k in p0.blocks:
        np.testing.assert_array_equal(res.params.blocks[k], p0.blocks[k])


def test_same_seed_same_trace():
    ex = small_examples(10)
    opt = OptimizerConfig(lr=1e-2, steps=12, batch_size=4, seed=5)
    a = train(ex[:8], CFG, opt, 2, val=ex[8:])
    b = train(ex[:8], CFG, opt, 2, val=ex[8:])
    assert a.trace == b.trace
    assert [r["step"] for r in a.trace] == list(range(1, 13))
    assert all("val_macro_f1" in r for r in a.trace)


def test_training_reduces_loss():
    ex = small_examples(12)
    res = train(ex, CFG, OptimizerConfig(lr=1e-2, steps=40, batch_size=None), 2)
    assert res.trace[-1]["loss"] < 0.5 * res.trace[0]["loss"]


def test_adam_first_step_is_signed_lr():
    p = init_params(CFG, 2)
    before = p.copy()
    g = p.zeros_like()
    rng = np.random.default_rng(0)
    for k in g.blocks:
        g.blocks[k] = rng.standard_normal(g.blocks[k].shape)
    opt = OptimizerConfig(lr=0.01, eps=0.0)
    Adam(p, opt).step(p, g)
    for k in p.blocks:
        np.testing.assert_allclose(p.blocks[k] - before.blocks[k], -0.01 * np.sign(g.blocks[k]), rtol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_trace():
    x = np.full((3, 16), np.inf)
    ex = [Example.make(star_graph(), x, [0, 1], [0, 1])]
    with pytest.raises(Divergence) as info:
        train(ex, CFG, OptimizerConfig(steps=3), 2)
    assert info.value.trace[-1]["step"] == 1


def test_collate_offsets_nodes():
    ex = small_examples(3)
    batch = collate(ex)
    sizes = [e.graph.num_nodes for e in ex]
    assert batch.graph.num_nodes == sum(sizes)
    np.testing.assert_array_equal(batch.nodes[: len(ex[0].nodes)], ex[0].nodes)
    np.testing.assert_array_equal(batch.nodes[len(ex[0].nodes) :][: len(ex[1].nodes)], ex[1].nodes + sizes[0])
    gold, pred = evaluate(ex, init_params(CFG, 2), CFG)
    assert gold == batch.labels.tolist() and len(pred) == len(gold)


def test_validation_errors():
    with pytest.raises(ShapeMismatch):
        train([], CFG, OptimizerConfig(), 2)
    with pytest.raises(ShapeMismatch):
        Example.make(star_graph(), np.zeros((3, 16)), [0], [0, 1])
    with pytest.raises(ValueError):
        OptimizerConfig(name="sgd")
    with pytest.raises(ValueError):
        OptimizerConfig(lr=-1)


def test_split_is_seeded_partition():
    tr, va = split(50, 0.2, 3)
    assert len(va) == 10 and sorted(tr + va) == list(range(50))
    assert split(50, 0.2, 3) == (tr, va)
    assert split(1, 0.2, 3) == ([0], [])


def test_row_labels_follow_row_types(income):
    assert row_labels(analyze(income)) == [0, 0, 1, 1]
