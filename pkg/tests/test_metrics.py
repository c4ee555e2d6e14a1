import pytest

from tabgraph.errors import AlignmentError
from tabgraph.metrics import exact_match, macro_f1, normalize_answer, per_class_f1, qa_accuracy


def test_perfect_two_class():
    assert macro_f1(["a", "b", "a"], ["a", "b", "a"]) == 1.0


def test_one_class_never_predicted():
    # class b is always predicted as c, which is absent from gold
    gold = ["a", "a", "b", "b"]
    pred = ["a", "a", "c", "c"]
    assert per_class_f1(gold, pred) == {"a": 1.0, "b": 0.0}
    assert macro_f1(gold, pred) == 0.5


def test_hand_computed_mixed():
    gold = ["h", "h", "d", "d", "d"]
    pred = ["h", "d", "d", "d", "h"]
    # h: tp 1, fp 1, fn 1 -> 0.5 ; d: tp 2, fp 1, fn 1 -> 4/6
    assert per_class_f1(gold, pred) == {"h": 0.5, "d": pytest.approx(2 / 3, abs=1e-15)}
    assert abs(macro_f1(gold, pred) - (0.5 + 2 / 3) / 2) <= 1e-12


def test_alignment_errors():
    with pytest.raises(AlignmentError):
        macro_f1(["a"], [])
    with pytest.raises(AlignmentError):
        macro_f1([], [])
    with pytest.raises(AlignmentError):
        qa_accuracy(["a"], ["a", "b"])
    with pytest.raises(AlignmentError):
        qa_accuracy([], [])


@pytest.mark.parametrize(
    "gold, pred, ok",
    [
        ("53,196,521.18", "53,196,521.18.", True),
        ("Income", "  income ", True),
        ("yes", "yes!?", True),
        ("1.5", "15", False),
        ("a b", "ab", False),
    ],
)
def test_exact_match(gold, pred, ok):
    assert exact_match(gold, pred) is ok


def test_normalize_and_accuracy():
    assert normalize_answer(" Total. ") == "total"
    assert qa_accuracy(["a", "b", "c", "d"], ["A", "b.", "x", "d"]) == 0.75
