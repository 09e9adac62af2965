import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_rel_error
from kire.datamodel import KGSubset
from kire.embeddings import random_tables
from kire.kg import (
    AttrCNN,
    KGGraph,
    RGATStack,
    attribute_codes,
    attribute_mask,
    attribute_tokens,
    pretrain_autoencoder,
    rgat_forward,
    segment_softmax,
)


# -- fixtures -----------------------------------------------------------------------------

def toy_attribute_triples(n=20):
    colors = ["red", "green", "blue", "black", "white"]
    kinds = ["city", "river", "person", "company"]
    out = []
    for k in range(n):
        out.append((f"Q{k}", "color" if k % 2 else "kind", colors[k % 5] if k % 2 else kinds[k % 4]))
    return out


def toy_tables(triples, dim=16, seed=0):
    toks = {t for _, a, v in triples for t in attribute_tokens(a, v)}
    return random_tables(toks, dim, seed)


def random_graph(seed, max_nodes=5, n_rel=2):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_nodes + 1))
    ents = tuple(f"E{i}" for i in range(n))
    triples = set()
    for _ in range(int(rng.integers(0, 2 * n))):
        h, t = rng.choice(n, 2, replace=False)
        triples.add((ents[h], f"r{rng.integers(n_rel)}", ents[t]))
    kg = KGSubset(ents, tuple(f"r{k}" for k in range(n_rel)), (), tuple(sorted(triples)))
    return KGGraph.from_kg(kg)


# -- AutoEncoder --------------------------------------------------------------------------

def test_autoencoder_toy_reconstruction_drops_fivefold():
    triples = toy_attribute_triples(20)
    words, chars = toy_tables(triples, dim=100)
    run = pretrain_autoencoder(triples, words, chars, epochs=30, seed=0)  # default d_auto = 50
    assert len(run.losses) == 31
    assert run.losses[-1] < run.losses[0] / 5


def test_autoencoder_deterministic():
    triples = toy_attribute_triples(20)
    words, chars = toy_tables(triples)
    a = pretrain_autoencoder(triples, words, chars, d_auto=4, epochs=2, seed=3).losses
    b = pretrain_autoencoder(triples, words, chars, d_auto=4, epochs=2, seed=3).losses
    assert a == b


def test_attribute_codes_truncate_and_pad():
    triples = [("Q1", "a", "x"), ("Q1", "b", "y"), ("Q1", "c", "z"), ("Q2", "a", "x")]
    kg = KGSubset(("Q1", "Q2", "Q3"), (), ("a", "b", "c"), (), tuple(triples))
    words, chars = toy_tables(triples, dim=6)
    ae = pretrain_autoencoder(triples, words, chars, d_auto=4, epochs=1).model
    codes = attribute_codes(kg, ae, words, chars, n_max=2)
    mask = attribute_mask(kg, 2)
    assert codes.shape == (3, 2, 4)
    assert mask.tolist() == [[True, True], [True, False], [False, False]]
    assert torch.equal(codes[~mask], torch.zeros(3, 4))
    torch.testing.assert_close(codes[0, 0], codes[1, 0])  # same (a, x) sequence


# -- attribute CNN --------------------------------------------------------------------------

def test_cnn_output_width():
    cnn = AttrCNN(5, 7, 3, 9)
    for n in (1, 4, 8):
        assert cnn(torch.randn(n, 5)).shape == (9,)
    assert cnn(torch.randn(3, 8, 5)).shape == (3, 9)


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_cnn_kernel_one_is_permutation_invariant(seed):
    torch.manual_seed(seed)
    cnn = AttrCNN(4, 6, 1, 6)
    x = torch.randn(5, 4)
    perm = torch.randperm(5)
    torch.testing.assert_close(cnn(x), cnn(x[perm]))


def test_cnn_mask_ignores_padding_and_empty_pools_to_zero():
    torch.manual_seed(0)
    cnn = AttrCNN(3, 4, 1, 4)
    x = torch.randn(2, 3)
    padded = torch.cat([x, torch.full((2, 3), 100.0)])
    mask = torch.tensor([True, True, False, False])
    torch.testing.assert_close(cnn(padded, mask), cnn(x))
    assert torch.equal(cnn(padded, torch.zeros(4, dtype=torch.bool)), torch.zeros(4))


# -- graph ------------------------------------------------------------------------------------

def test_graph_edges_and_self_loops():
    kg = KGSubset(("A", "B", "C"), ("r",), (), (("A", "r", "B"),))
    g = KGGraph.from_kg(kg)
    edges = set(zip(g.dst.tolist(), g.src.tolist(), g.etype.tolist()))
    assert edges == {(0, 1, 0), (1, 0, 1), (0, 0, 2), (1, 1, 2), (2, 2, 2)}
    assert g.type_names == ("r", "r^-1", "<self>")
    assert g.neighbourhood([0], 1) == [0, 1]
    sub, keep = g.subgraph([1, 2])
    assert keep.tolist() == [1, 2] and sub.n_nodes == 2 and len(sub.dst) == 2


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.integers(1, 4))
def test_segment_softmax_normalizes(values, n_seg):
    scores = torch.tensor(values, dtype=torch.float64)
    index = torch.arange(len(values)) % n_seg
    a = segment_softmax(scores, index, n_seg)
    sums = torch.zeros(n_seg, dtype=torch.float64).index_add(0, index, a)
    present = torch.bincount(index, minlength=n_seg) > 0
    torch.testing.assert_close(sums[present], torch.ones(int(present.sum()), dtype=torch.float64))


# -- R-GAT -----------------------------------------------------------------------------------

def dense_rgat(stack: RGATStack, h: torch.Tensor, graph: KGGraph) -> torch.Tensor:
    """Hand-rolled evaluation over a dense ``N x N x types`` adjacency tensor."""
    N, T = graph.n_nodes, stack.rel_emb.num_embeddings
    A = torch.zeros(N, N, T, dtype=torch.bool)
    A[graph.dst, graph.src, graph.etype] = True
    M = stack.rel_emb.weight.to(h.dtype)
    d = stack.d_rgat
    for k in range(stack.n_layer):
        heads = []
        for b in range(stack.n_head):
            W = stack.layer_weights(k)[b].to(h.dtype)
            a = stack.w_out[k][b].to(h.dtype)
            Wh = h @ W.t()
            e = ((Wh @ a[:d])[:, None, None] + (Wh @ a[d:2 * d])[None, :, None]
                 + (M @ a[2 * d:])[None, None, :])
            e = F.leaky_relu(e, stack.leaky_slope).masked_fill(~A, float("-inf"))
            alpha = torch.softmax(e.reshape(N, -1), dim=-1).reshape(N, N, T)
            heads.append(torch.relu(torch.einsum("ijr,jd->id", alpha, Wh)))
        h = torch.stack(heads).mean(dim=0)
    return h


def make_stack(graph, d_ent=4, d=4, n_layer=3, n_head=2, seed=0):
    torch.manual_seed(seed)
    return RGATStack(len(graph.type_names), d_ent, d, n_layer, n_head, d_rel=3).double()


def test_rgat_matches_dense_oracle_over_100_seeds():
    for seed in range(100):
        g = random_graph(seed)
        stack = make_stack(g, seed=seed)
        h0 = torch.randn(g.n_nodes, 4, dtype=torch.float64)
        with torch.no_grad():
            sparse = rgat_forward(g, h0, stack)
            dense = dense_rgat(stack, h0, g)
        assert (sparse - dense).abs().max().item() < 1e-10, seed


def test_rgat_attention_rows_sum_to_one_over_100_seeds():
    for seed in range(100):
        g = random_graph(seed)
        stack = make_stack(g, seed=seed)
        h0 = torch.randn(g.n_nodes, 4, dtype=torch.float64)
        with torch.no_grad():
            _, atts = stack(h0, g, return_attention=True)
        assert len(atts) == stack.n_layer
        for alpha in atts:
            sums = torch.zeros(g.n_nodes, stack.n_head, dtype=torch.float64).index_add(0, g.dst, alpha)
            assert (sums - 1).abs().max().item() < 1e-6, seed


def test_rgat_gradients_match_finite_differences():
    g = random_graph(4, max_nodes=5)
    stack = make_stack(g, d_ent=3, d=3, n_layer=2)
    h0 = torch.randn(g.n_nodes, 3, dtype=torch.float64, requires_grad=True)
    target = torch.randn(g.n_nodes, 3, dtype=torch.float64)
    params = [h0] + list(stack.parameters())
    err = max_rel_error(lambda: ((rgat_forward(g, h0, stack) - target) ** 2).sum(), params)
    assert err < 1e-4


def test_rgat_automorphic_nodes_identical():
    # a 4-cycle with one relation type: every node is automorphic to every other
    ents = ("A", "B", "C", "D")
    kg = KGSubset(ents, ("r",), (), (("A", "r", "B"), ("B", "r", "C"), ("C", "r", "D"), ("D", "r", "A")))
    g = KGGraph.from_kg(kg)
    stack = make_stack(g)
    h0 = torch.randn(1, 4, dtype=torch.float64).expand(4, -1)
    with torch.no_grad():
        out = rgat_forward(g, h0, stack)
    torch.testing.assert_close(out, out[:1].expand_as(out), rtol=0, atol=1e-12)


def test_rgat_layer_zero_shares_projection():
    g = random_graph(0)
    stack = make_stack(g, d_ent=5, d=4)
    assert stack.w_in[0].shape == (1, 4, 5)
    assert stack.layer_weights(0).shape == (2, 4, 5)
    assert stack.weight_count() == 4 * 5 + 2 * 2 * 4 * 4


def test_rgat_weight_count_vs_formula_at_defaults():
    stack = RGATStack(5, 100, 100, 3, 2)
    formula = 2 * (3 - 1) * 2 * 100 ** 2 + 100 * 100
    assert formula == 90000
    # one square W_in per head after layer 0: half of the formula's first term
    assert stack.weight_count() == (3 - 1) * 2 * 100 ** 2 + 100 * 100 == 50000


@pytest.mark.parametrize("seed", range(5))
def test_rgat_output_finite_and_nonnegative(seed):
    g = random_graph(seed)
    stack = make_stack(g, seed=seed)
    out = rgat_forward(g, torch.randn(g.n_nodes, 4, dtype=torch.float64), stack)
    assert torch.isfinite(out).all() and (out >= 0).all()
