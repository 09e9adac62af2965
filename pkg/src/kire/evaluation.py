"""Micro F1 and Ign F1 over predicted relation facts."""

from __future__ import annotations

from typing import Iterable, Mapping, Optional

from kire.datamodel import Document
from kire.ingestion import normalize_surface

# doc_id -> list of (head, tail, relation, score)
PredictionSet = Mapping[str, list[tuple[int, int, str, float]]]
Gold = Mapping[str, set[tuple[int, int, str]]]


def gold_facts(docs: Iterable[Document]) -> dict[str, set[tuple[int, int, str]]]:
    return {d.doc_id: {(f.head, f.tail, f.relation) for f in d.facts} for d in docs}


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def positives(predictions: PredictionSet, theta: float) -> set[tuple[str, int, int, str]]:
    return {(d, h, t, r) for d, preds in predictions.items() for h, t, r, s in preds if s >= theta}


def f1(predictions: PredictionSet, gold: Gold, theta: float = 0.5,
       relations: Optional[set[str]] = None) -> tuple[float, float, float]:
    """Micro precision, recall and F1 with ``score >= theta`` as positive.

    ``relations`` restricts scoring to a subset of labels.
    """
    pred = positives(predictions, theta)
    gold_set = {(d, h, t, r) for d, facts in gold.items() for h, t, r in facts}
    if relations is not None:
        pred = {x for x in pred if x[3] in relations}
        gold_set = {x for x in gold_set if x[3] in relations}
    return _prf(len(pred & gold_set), len(pred), len(gold_set))


def canonical_surface(doc: Document, entity_idx: int) -> str:
    return normalize_surface(doc.entities[entity_idx].mentions[0].surface)


def train_fact_surfaces(train_docs: Iterable[Document]) -> set[tuple[str, str, str]]:
    return {(canonical_surface(d, f.head), canonical_surface(d, f.tail), f.relation)
            for d in train_docs for f in d.facts}


def ign_f1(predictions: PredictionSet, gold_docs: Iterable[Document], theta: float,
           train_docs: Iterable[Document], relations: Optional[set[str]] = None) -> tuple[float, float, float]:
    """F1 after removing every fact whose (head surface, tail surface, relation) occurs in training."""
    seen = train_fact_surfaces(train_docs)
    docs = {d.doc_id: d for d in gold_docs}

    def keep(doc_id, h, t, r):
        doc = docs.get(doc_id)
        if doc is None:
            return True
        return (canonical_surface(doc, h), canonical_surface(doc, t), r) not in seen

    pred = {x for x in positives(predictions, theta) if keep(*x)}
    gold_set = {(d, h, t, r) for d, doc in docs.items() for h, t, r in
                ((f.head, f.tail, f.relation) for f in doc.facts) if keep(d, h, t, r)}
    if relations is not None:
        pred = {x for x in pred if x[3] in relations}
        gold_set = {x for x in gold_set if x[3] in relations}
    return _prf(len(pred & gold_set), len(pred), len(gold_set))


def select_threshold(predictions: PredictionSet, gold: Gold) -> float:
    """Score maximising F1 over the distinct prediction scores; ties go to the larger score."""
    gold_set = {(d, h, t, r) for d, facts in gold.items() for h, t, r in facts}
    scored = sorted(((s, (d, h, t, r) in gold_set) for d, preds in predictions.items() for h, t, r, s in preds),
                    key=lambda x: -x[0])
    if not scored:
        return 0.5
    n_gold = len(gold_set)
    best_theta, best_f = scored[0][0], -1.0
    tp = 0
    i = 0
    while i < len(scored):
        s = scored[i][0]
        while i < len(scored) and scored[i][0] == s:
            tp += scored[i][1]
            i += 1
        f = _prf(tp, i, n_gold)[2]
        # descending scan: a later candidate is smaller, so it only wins on a strict improvement
        if f > best_f:
            best_theta, best_f = s, f
    return best_theta


def metric_report(split_name: str, predictions: PredictionSet, docs: Iterable[Document], theta: float,
                  train_docs: Optional[Iterable[Document]] = None, relation_vocab=()) -> dict:
    docs = list(docs)
    gold = gold_facts(docs)
    p, r, f = f1(predictions, gold, theta)
    report = {"split": split_name, "theta": theta, "precision": p, "recall": r, "f1": f}
    if train_docs is not None:
        train_docs = list(train_docs)
        report["ign_f1"] = ign_f1(predictions, docs, theta, train_docs)[2]
    else:
        report["ign_f1"] = None
    per_rel = {}
    for rel in relation_vocab:
        rp, rr, rf = f1(predictions, gold, theta, {rel})
        per_rel[rel] = {"precision": rp, "recall": rr, "f1": rf}
    report["per_relation"] = per_rel
    return report
