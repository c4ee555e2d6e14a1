from tabgraph.structure import RowType, analyze
from tabgraph.synthetic import synthetic_corpus


def test_corpus_is_seeded():
    a, b = synthetic_corpus(20, 4), synthetic_corpus(20, 4)
    assert [t.grid for t in a] == [t.grid for t in b]
    assert [t.table_id for t in a] == [f"syn-4-{k:04d}" for k in range(20)]
    assert [t.grid for t in synthetic_corpus(20, 5)] != [t.grid for t in a]


def test_tables_have_both_row_types():
    for t in synthetic_corpus(50, 0):
        types = analyze(t.grid).row_types
        assert types[0] is RowType.HEADER
        assert RowType.DATA in types
        assert t.context
