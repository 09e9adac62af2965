"""Acceptance criteria, one test per criterion, each logging a PASS/FAIL line.

The lines are echoed in pytest's terminal summary; ``python tests/test_acceptance.py``
runs the suite directly. The full-data DocRED check runs only when
``KIRE_DOCRED_DIR`` points at the data (see README).
"""

import json
import math
import os
import time
from pathlib import Path

import pytest
import torch

from conftest import make_doc, max_rel_error, record_acceptance, tiny_config
from kire.cli import main as cli_main
from kire.coref import CorefStudent, DistanceBins, bernoulli_kl, context_exchange, coref_loss, write_back
from kire.datamodel import Config, CoreferenceTriple, Mention
from kire.embeddings import random_tables
from kire.encoders import RelationPredictor, mention_pooling, re_loss
from kire.evaluation import f1, gold_facts
from kire.ingestion import KG_RELATION, corpus_vocabulary, synth_corpus
from kire.kg import pretrain_autoencoder, rgat_forward
from kire.model import prepare_split
from kire.reconciliation import Aggregator, alignment_loss, alignment_probs
from kire.training import predict, train
from test_kg import dense_rgat, make_stack, random_graph, toy_attribute_triples, toy_tables

LN2 = math.log(2)


def check(name, ok, detail, started, budget_s):
    elapsed = time.perf_counter() - started
    ok = bool(ok) and elapsed < budget_s
    record_acceptance(name, ok, f"{detail}; {elapsed:.1f}s of {budget_s:g}s budget")
    assert ok, detail


def test_equation_oracles():
    t0 = time.perf_counter()
    f64 = torch.float64
    kl = bernoulli_kl(torch.tensor(1.0, dtype=f64), torch.tensor(0.5, dtype=f64)).item()
    bce = re_loss(torch.zeros(2, 3, dtype=f64), torch.tensor([[1.0, 0, 1], [0, 0, 1]], dtype=f64)).item()
    lin = torch.nn.Linear(2, 2).double()
    torch.nn.init.zeros_(lin.weight)
    torch.nn.init.zeros_(lin.bias)
    align = alignment_loss(torch.ones(1, 2, dtype=f64), torch.randn(2, 2, dtype=f64), torch.tensor([0]), lin).item()
    errs = [abs(kl - LN2), abs(bce - LN2), abs(align - LN2)]
    check("equation oracles (Bernoulli KL, BCE, alignment loss = ln 2)", max(errs) <= 1e-9,
          f"max |err| = {max(errs):.1e}", t0, 1.0)


def test_gradient_suite():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    f64 = torch.float64
    errors = {}

    # L_re on a 12-token document with three entities
    doc = make_doc([["a", "b", "c", "d", "e", "f"], ["g", "h", "i", "j", "k", "l"]],
                   [([(0, 0, 2), (1, 0, 1)],), ([(0, 3, 4)],), ([(1, 2, 5)],)])
    H = torch.randn(12, 5, dtype=f64, requires_grad=True)
    pred = RelationPredictor(5, 2).double()
    P = mention_pooling(doc, dtype=f64)
    pairs = [(h, t) for h in range(3) for t in range(3) if h != t]
    y = torch.randint(0, 2, (len(pairs), 2)).double()
    heads, tails = [h for h, _ in pairs], [t for _, t in pairs]
    errors["L_re"] = max_rel_error(lambda: re_loss(pred((P @ H)[heads], (P @ H)[tails]), y),
                                   [H] + list(pred.parameters()))

    # L_cr
    student, bins = CorefStudent(5, 3, 4).double(), DistanceBins(4, 3).double()
    ms = [Mention(0, sp, "x") for sp in [(0, 2), (3, 4), (8, 11)]]
    triples = [CoreferenceTriple("d", ms[0], ms[1], 0.9, "resolver"), CoreferenceTriple("d", ms[2], ms[0], 1.0)]
    errors["L_cr"] = max_rel_error(lambda: coref_loss(triples, H, student, bins),
                                   [H] + list(student.parameters()) + list(bins.parameters()))

    # L_kg
    kg = torch.randn(3, 4, dtype=f64, requires_grad=True)
    lin = torch.nn.Linear(5, 4).double()
    align = torch.tensor([0, 0, -1, 1, -1, -1, -1, -1, 2, 2, 2, -1])
    errors["L_kg"] = max_rel_error(lambda: alignment_loss(H, kg, align, lin), [H, kg] + list(lin.parameters()))

    # R-GAT forward on a 5-node graph
    g = random_graph(11, max_nodes=5)
    stack = make_stack(g, d_ent=3, d=3, n_layer=2)
    h0 = torch.randn(g.n_nodes, 3, dtype=f64, requires_grad=True)
    target = torch.randn(g.n_nodes, 3, dtype=f64)
    errors["R-GAT"] = max_rel_error(lambda: ((rgat_forward(g, h0, stack) - target) ** 2).sum(),
                                    [h0] + list(stack.parameters()))
    worst = max(errors.values())
    check("gradient suite (central differences, float64, step 1e-5)", worst < 1e-4,
          ", ".join(f"{k} {v:.1e}" for k, v in errors.items()), t0, 60.0)


def test_normalization_suite():
    t0 = time.perf_counter()
    worst_rgat = worst_align = 0.0
    for seed in range(100):
        g = random_graph(seed)
        stack = make_stack(g, seed=seed)
        with torch.no_grad():
            _, atts = stack(torch.randn(g.n_nodes, 4, dtype=torch.float64), g, return_attention=True)
        for alpha in atts:
            sums = torch.zeros(g.n_nodes, stack.n_head, dtype=torch.float64).index_add(0, g.dst, alpha)
            worst_rgat = max(worst_rgat, (sums - 1).abs().max().item())
        torch.manual_seed(seed)
        J, I = int(torch.randint(1, 12, ())), int(torch.randint(1, 5, ()))
        lin = torch.nn.Linear(6, 4).double()
        probs = alignment_probs(torch.randn(J, 6, dtype=torch.float64) * 3, torch.randn(I, 4, dtype=torch.float64), lin)
        worst_align = max(worst_align, (probs.sum(-1) - 1).abs().max().item())
    check("normalization suite (R-GAT rows, alignment softmax; 100 seeds)",
          worst_rgat <= 1e-6 and worst_align <= 1e-6,
          f"R-GAT max dev {worst_rgat:.1e}, alignment max dev {worst_align:.1e}", t0, 60.0)


def test_branch_checks():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    ok = True
    # mention tokens take the exchanged mention representation; other tokens are untouched
    student, bins = CorefStudent(4, 3, 5).double(), DistanceBins(4, 3).double()
    H = torch.randn(10, 4, dtype=torch.float64)
    ms = [Mention(0, sp, "x") for sp in [(0, 2), (4, 5), (6, 9)]]
    triples = [CoreferenceTriple("d", ms[0], ms[1], 0.8, "resolver"), CoreferenceTriple("d", ms[2], ms[0], 1.0)]
    upd = context_exchange(H, triples, student, bins)
    out = write_back(H, upd)
    inside = {j for s, e in upd for j in range(s, e)}
    ok &= all(torch.equal(out[j], upd[sp]) for sp in upd for j in range(*sp))
    ok &= all(torch.equal(out[j], H[j]) for j in range(10) if j not in inside)
    # fusion: unaligned tokens use only the token term under identity activation
    agg = Aggregator(8, 4, 6, n_heads=2, act="identity").double()
    tokens, ents = torch.randn(7, 8, dtype=torch.float64), torch.randn(3, 4, dtype=torch.float64)
    align = torch.tensor([0, -1, 0, 2, -1, -1, 2])
    ht, he = agg.self_attend(tokens, ents)
    fused = agg.fuse(ht, he, align)
    no_entity = agg.fuse_w(ht) + agg.fuse_b
    ok &= all(torch.equal(fused[j], no_entity[j]) for j in range(7) if align[j] < 0)
    ok &= torch.allclose(fused[align >= 0], no_entity[align >= 0] + agg.fuse_e(he)[align[align >= 0]])
    check("write-back / fusion branch checks (exact equality)", ok,
          f"{len(inside)} mention tokens, {int((align < 0).sum())} unaligned tokens", t0, 10.0)


def test_rgat_brute_force_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        g = random_graph(seed)
        stack = make_stack(g, seed=seed)
        h0 = torch.randn(g.n_nodes, 4, dtype=torch.float64)
        with torch.no_grad():
            worst = max(worst, (rgat_forward(g, h0, stack) - dense_rgat(stack, h0, g)).abs().max().item())
    check("R-GAT sparse vs dense evaluation (100 seeds, <= 5 nodes)", worst <= 1e-10,
          f"max |diff| = {worst:.1e}", t0, 60.0)


def test_parameter_count_audit(tmp_path, capsys):
    t0 = time.perf_counter()
    code = cli_main(["param-count", "--work-dir", str(tmp_path), "--log-level", "WARNING"])
    report = json.loads(capsys.readouterr().out)
    f = report["formulas"]
    checks = {c["name"]: c for c in report["checks"]}
    ok = (code == 0 and f["coref_mlp"] == 56520 and f["rgat"] == 90000 and f["aggregator_attention"] == 80000
          and checks["coref_mlp"]["match"] and checks["aggregator_attention"]["match"]
          and all(any(d.startswith(name + ":") for d in report["discrepancies"])
                  for name, c in checks.items() if not c["match"]))
    gaps = [f"{n} {c['implemented']} vs {c['formula']}" for n, c in checks.items() if not c["match"]]
    check("parameter-count audit via param-count", ok,
          f"coref {checks['coref_mlp']['implemented']}, attention {checks['aggregator_attention']['implemented']}"
          f" match; itemized gaps: {'; '.join(gaps)}", t0, 10.0)


def test_synthetic_directional_experiment():
    t0 = time.perf_counter()
    c = synth_corpus(7, 50)
    words, chars = random_tables(corpus_vocabulary(c.splits, c.kg), 100, 7)
    rows = []
    for seed in (0, 1, 2):
        row = {"seed": seed}
        for strategy in ("kire", "none"):
            cfg = Config(seed=seed, fusion_strategy=strategy)
            res = train(c.train, c.validation, c.kg, c.corefs, cfg, words, chars, c.relation_vocab)
            theta = res.state.threshold
            for split in (c.train, c.test):
                docs = prepare_split(split, c.relation_vocab, words, chars, res.model.features, c.kg, c.corefs)
                preds = predict(res.model, docs, inject=True)
                gold = gold_facts(split)
                row[(strategy, split.name)] = f1(preds, gold, theta)[2]
                row[(strategy, split.name, "kg")] = f1(preds, gold, theta, {KG_RELATION})[2]
        rows.append(row)
    gain = sum(r[("kire", "test", "kg")] - r[("none", "test", "kg")] for r in rows) / len(rows)
    train_f1 = [r[("kire", "train")] for r in rows]
    detail = (f"mean test F1 gain on {KG_RELATION} {100 * gain:+.1f} points (KIRE "
              + "/".join(f"{r[('kire', 'test', 'kg')]:.3f}" for r in rows) + " vs none "
              + "/".join(f"{r[('none', 'test', 'kg')]:.3f}" for r in rows) + "); KIRE train F1 "
              + "/".join(f"{x:.3f}" for x in train_f1))
    check("synthetic directional experiment (seeds 0-2)", gain >= 0.05 and min(train_f1) >= 0.95, detail,
          t0, 15 * 60.0)


def test_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    reports = []
    for name in ("a", "b"):
        w = str(tmp_path / name)
        outs = {}
        for cmd in ("synth", "train", "evaluate"):
            code = cli_main([cmd, "--work-dir", w, "--seed", "7", "--log-level", "WARNING"])
            out, err = capsys.readouterr()
            assert code == 0, err
            outs[cmd] = json.loads(out)
        rid = outs["train"]["run_id"]
        reports.append((Path(w) / "reports" / rid / "metrics.json").read_bytes())
    f1s = json.loads(reports[0])["splits"]
    check("determinism (two CLI runs, byte-identical metric reports)", reports[0] == reports[1],
          f"{len(reports[0])} bytes each; F1 " + ", ".join(f"{k} {v['f1']:.3f}" for k, v in f1s.items()),
          t0, 15 * 60.0)


def test_autoencoder_pretraining():
    t0 = time.perf_counter()
    triples = toy_attribute_triples(20)
    words, chars = toy_tables(triples, dim=100)
    run = pretrain_autoencoder(triples, words, chars, epochs=30, seed=0)
    check("autoencoder pretraining (20 triples, 30 epochs)", run.losses[-1] < run.losses[0] / 5,
          f"loss {run.losses[0]:.4g} -> {run.losses[-1]:.4g} ({run.losses[0] / run.losses[-1]:.1f}x)", t0, 60.0)


DOCRED_DIR = os.environ.get("KIRE_DOCRED_DIR")


@pytest.mark.skipif(not DOCRED_DIR, reason="set KIRE_DOCRED_DIR to run the full-data check")
def test_full_docred(tmp_path, capsys):
    """Expects train_annotated.json, dev.json and rel2id.json (plus optional kg_*.jsonl) in KIRE_DOCRED_DIR."""
    t0 = time.perf_counter()
    d = Path(DOCRED_DIR)
    args = ["--work-dir", str(tmp_path), "--log-level", "WARNING", "--relation-vocab", str(d / "rel2id.json"),
            "--train-file", str(d / "train_annotated.json"), "--validation-file", str(d / "dev.json")]
    kg_files = [d / f"kg_{k}.jsonl" for k in ("relations", "attributes", "aliases")]
    if all(p.exists() for p in kg_files):
        args += ["--kg-relations", str(kg_files[0]), "--kg-attributes", str(kg_files[1]), "--kg-aliases", str(kg_files[2])]
    assert cli_main(["prepare", *args]) == 0
    rep = json.loads(capsys.readouterr().out)
    counts = (rep["splits"]["train"]["documents"], rep["splits"]["validation"]["documents"], rep["relations"],
              rep["splits"]["train"]["instances"])
    ok = counts == (3053, 1000, 96, 38269)
    # baseline BiLSTM end to end; embeddings default to seeded random tables unless words/chars are supplied
    from kire.ingestion import load_docred, load_relation_vocab

    data = tmp_path / "data"
    vocab = load_relation_vocab(data / "rel_vocab.txt")
    splits = [load_docred(data / f"{n}.json", vocab, n) for n in ("train", "validation")]
    words, chars = random_tables(corpus_vocabulary(splits), 100, 0)
    cfg = Config(fusion_strategy="none", base_epochs=1, kire_epochs=1)
    res = train(splits[0], splits[1], None, [], cfg, words, chars, vocab, stages=("base",))
    ok &= all(math.isfinite(h["loss"]) for h in res.state.history)
    check("full DocRED loader counts and baseline training", ok,
          f"train/validation docs, relations, instances = {counts}", t0, float("inf"))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
