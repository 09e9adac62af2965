import random

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_doc
from kire.evaluation import f1, gold_facts, ign_f1, metric_report, select_threshold


def preds_from(rows):
    out = {}
    for d, h, t, r, s in rows:
        out.setdefault(d, []).append((h, t, r, s))
    return out


GOLD = {"d": {(0, 1, "r"), (1, 2, "r"), (0, 2, "s")}}


def test_perfect_predictions():
    preds = preds_from([("d", h, t, r, 0.9) for h, t, r in GOLD["d"]])
    assert f1(preds, GOLD) == (1.0, 1.0, 1.0)


def test_hand_enumerated_f1():
    preds = preds_from([("d", 0, 1, "r", 0.9), ("d", 1, 2, "r", 0.8), ("d", 2, 0, "r", 0.7), ("d", 1, 0, "s", 0.6),
                        ("d", 2, 1, "s", 0.1)])
    p, r, f = f1(preds, GOLD, 0.5)
    assert (p, r) == (0.5, 2 / 3)
    assert abs(f - 4 / 7) < 1e-12


def test_empty_predictions():
    assert f1({}, GOLD) == (0.0, 0.0, 0.0)
    assert f1(preds_from([("d", 0, 1, "r", 0.1)]), GOLD, 0.5) == (0.0, 0.0, 0.0)


def test_relation_subset():
    preds = preds_from([("d", 0, 1, "r", 0.9), ("d", 0, 2, "s", 0.2)])
    assert f1(preds, GOLD, 0.5, {"s"}) == (0.0, 0.0, 0.0)
    assert f1(preds, GOLD, 0.5, {"r"})[0] == 1.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.sampled_from("rs"), st.floats(0, 1)),
                max_size=20), st.integers(0, 10 ** 6))
def test_f1_order_invariant_and_recall_monotone(rows, seed):
    rows = list({(h, t, r): s for h, t, r, s in rows}.items())
    a = preds_from([("d", h, t, r, s) for (h, t, r), s in rows])
    random.Random(seed).shuffle(rows)
    b = preds_from([("d", h, t, r, s) for (h, t, r), s in rows])
    assert f1(a, GOLD, 0.5) == f1(b, GOLD, 0.5)
    recalls = [f1(a, GOLD, th)[1] for th in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert all(x >= y for x, y in zip(recalls, recalls[1:]))


# -- Ign F1 ---------------------------------------------------------------------------------

def three_entity_doc(doc_id, names, facts):
    return make_doc([names], [([(0, k, k + 1)],) for k in range(len(names))], facts, doc_id)


def test_ign_equals_f1_without_overlap():
    test_doc = three_entity_doc("t", ["A", "B", "C"], [(0, 1, "r"), (1, 2, "r"), (0, 2, "s")])
    train_doc = three_entity_doc("x", ["X", "Y", "Z"], [(0, 1, "r")])
    preds = preds_from([("t", 0, 1, "r", 0.9), ("t", 2, 1, "r", 0.9)])
    gold = gold_facts([test_doc])
    assert ign_f1(preds, [test_doc], 0.5, [train_doc]) == f1(preds, gold, 0.5)


def test_ign_all_overlap_gives_zero():
    test_doc = three_entity_doc("t", ["A", "B", "C"], [(0, 1, "r")])
    train_doc = three_entity_doc("x", ["a", "b", "q"], [(0, 1, "r")])  # case-folded surfaces match
    preds = preds_from([("t", 0, 1, "r", 0.9)])
    assert ign_f1(preds, [test_doc], 0.5, [train_doc]) == (0.0, 0.0, 0.0)


def test_ign_one_of_three_overlaps():
    test_doc = three_entity_doc("t", ["A", "B", "C"], [(0, 1, "r"), (1, 2, "r"), (0, 2, "s")])
    train_doc = three_entity_doc("x", ["A", "B", "Q"], [(0, 1, "r")])
    preds = preds_from([("t", h, t, r, 0.9) for h, t, r in [(0, 1, "r"), (1, 2, "r"), (0, 2, "s")]])
    assert ign_f1(preds, [test_doc], 0.5, [train_doc]) == (1.0, 1.0, 1.0)
    wrong = preds_from([("t", 1, 2, "r", 0.9)])
    p, r, _ = ign_f1(wrong, [test_doc], 0.5, [train_doc])
    assert (p, r) == (1.0, 0.5)


# -- threshold selection ---------------------------------------------------------------------

def test_threshold_separated_scores_picks_top_of_gap():
    preds = preds_from([("d", 0, 1, "r", 0.95), ("d", 1, 2, "r", 0.9), ("d", 0, 2, "s", 0.92),
                        ("d", 1, 0, "r", 0.1), ("d", 2, 0, "s", 0.05)])
    assert select_threshold(preds, GOLD) == 0.9


def test_threshold_single_correct_and_all_wrong():
    assert select_threshold(preds_from([("d", 0, 1, "r", 0.3)]), GOLD) == 0.3
    wrong = preds_from([("d", 1, 0, "r", 0.3), ("d", 2, 1, "r", 0.7)])
    assert select_threshold(wrong, GOLD) == 0.7
    assert select_threshold({}, GOLD) == 0.5


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.sampled_from("rs"),
                          st.sampled_from([0.1, 0.2, 0.4, 0.5, 0.7, 0.9])), min_size=1, max_size=15))
def test_threshold_is_f1_argmax_with_larger_tie(rows):
    preds = preds_from([("d", h, t, r, s) for (h, t, r), s in {(h, t, r): s for h, t, r, s in rows}.items()])
    theta = select_threshold(preds, GOLD)
    scores = sorted({s for v in preds.values() for *_, s in v})
    best = max(f1(preds, GOLD, s)[2] for s in scores)
    assert f1(preds, GOLD, theta)[2] == best
    assert theta == max(s for s in scores if f1(preds, GOLD, s)[2] == best)


def test_metric_report_fields():
    doc = three_entity_doc("t", ["A", "B", "C"], [(0, 1, "r")])
    report = metric_report("test", preds_from([("t", 0, 1, "r", 0.9)]), [doc], 0.5, [], ("r", "s"))
    assert set(report) == {"split", "theta", "precision", "recall", "f1", "ign_f1", "per_relation"}
    assert report["per_relation"]["r"]["f1"] == 1.0 and report["per_relation"]["s"]["f1"] == 0.0
    assert metric_report("test", {}, [doc], 0.5)["ign_f1"] is None
