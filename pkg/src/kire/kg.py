"""KG entity encoding: attribute AutoEncoder, attribute CNN and a relational GAT."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence, pad_sequence

from kire.datamodel import KGSubset
from kire.embeddings import EmbeddingTable, lookup
from kire.errors import DataError

logger = logging.getLogger(__name__)

SELF_LOOP = "<self>"


# -- attribute AutoEncoder ---------------------------------------------------

def attribute_tokens(attribute: str, value: str) -> list[str]:
    toks = f"{attribute} {value}".split()
    return toks or [attribute]


def embed_tokens(tokens: Sequence[str], words: EmbeddingTable, chars: EmbeddingTable) -> torch.Tensor:
    return torch.as_tensor(np.stack([lookup(t, words, chars) for t in tokens]), dtype=torch.float32)


class AttrAutoEncoder(nn.Module):
    """BiLSTM sequence autoencoder; the code is a ``d_auto`` vector per sequence."""

    def __init__(self, d_in: int, d_auto: int = 50, d_hidden: int | None = None):
        super().__init__()
        d_hidden = d_hidden or d_auto
        self.d_auto = d_auto
        self.encoder = nn.LSTM(d_in, d_hidden, batch_first=True, bidirectional=True)
        self.to_code = nn.Linear(2 * d_hidden, d_auto)
        self.decoder = nn.LSTM(d_auto, d_hidden, batch_first=True, bidirectional=True)
        self.to_input = nn.Linear(2 * d_hidden, d_in)

    def encode(self, seqs: list[torch.Tensor]) -> torch.Tensor:
        lengths = torch.tensor([len(s) for s in seqs])
        padded = pad_sequence(seqs, batch_first=True)
        packed = pack_padded_sequence(padded, lengths, batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.encoder(packed)
        return torch.tanh(self.to_code(torch.cat([h_n[0], h_n[1]], dim=-1)))

    def decode(self, codes: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        steps = int(lengths.max())
        inp = codes.unsqueeze(1).expand(-1, steps, -1)
        packed = pack_padded_sequence(inp, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.decoder(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=steps)
        return self.to_input(out)

    def reconstruction_loss(self, seqs: list[torch.Tensor]) -> torch.Tensor:
        lengths = torch.tensor([len(s) for s in seqs])
        target = pad_sequence(seqs, batch_first=True)
        recon = self.decode(self.encode(seqs), lengths)
        mask = (torch.arange(target.shape[1])[None, :] < lengths[:, None]).to(target.dtype)
        sq = ((recon - target) ** 2).sum(-1) * mask
        return sq.sum() / (mask.sum() * target.shape[-1])


@dataclass
class AutoEncoderRun:
    model: AttrAutoEncoder
    losses: list[float]


def pretrain_autoencoder(attr_triples: Iterable[tuple[str, str, str]], words: EmbeddingTable,
                         chars: EmbeddingTable, d_auto: int = 50, epochs: int = 30, seed: int = 0,
                         lr: float = 0.01, batch_size: int = 32) -> AutoEncoderRun:
    """Train the autoencoder to reconstruct the embedded ``[attribute; value]`` sequences.

    ``losses[0]`` is the loss before any update and ``losses[k]`` the mean
    epoch loss after epoch ``k``, evaluated on the full set.
    """
    triples = list(attr_triples)
    if not triples:
        raise DataError("cannot pretrain the autoencoder without attribute triples")
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    dim = words.dim or chars.dim
    seqs = [embed_tokens(attribute_tokens(a, v), words, chars) for _, a, v in triples]
    ae = AttrAutoEncoder(dim, d_auto)
    opt = torch.optim.Adam(ae.parameters(), lr=lr)

    def full_loss():
        with torch.no_grad():
            return float(ae.reconstruction_loss(seqs))

    losses = [full_loss()]
    for _ in range(epochs):
        order = torch.randperm(len(seqs), generator=gen).tolist()
        for i in range(0, len(order), batch_size):
            batch = [seqs[k] for k in order[i:i + batch_size]]
            opt.zero_grad()
            loss = ae.reconstruction_loss(batch)
            loss.backward()
            opt.step()
        losses.append(full_loss())
    logger.info("autoencoder reconstruction loss %.4g -> %.4g", losses[0], losses[-1])
    ae.eval()
    return AutoEncoderRun(ae, losses)


def encode_attribute_triple(attribute: str, value: str, ae: AttrAutoEncoder, words: EmbeddingTable,
                            chars: EmbeddingTable) -> torch.Tensor:
    with torch.no_grad():
        return ae.encode([embed_tokens(attribute_tokens(attribute, value), words, chars)])[0]


def _attributes_by_entity(kg: KGSubset) -> dict[str, list[tuple[str, str]]]:
    by_entity: dict[str, list[tuple[str, str]]] = {e: [] for e in kg.entities}
    for e, a, v in kg.attribute_triples:
        by_entity.setdefault(e, []).append((a, v))
    return by_entity


def attribute_mask(kg: KGSubset, n_max: int) -> torch.Tensor:
    """``|U| x n_max`` bool mask of the slots holding a real attribute code."""
    by_entity = _attributes_by_entity(kg)
    counts = torch.tensor([min(len(by_entity[e]), n_max) for e in kg.entities], dtype=torch.long)
    return torch.arange(n_max)[None, :] < counts[:, None]


def attribute_codes(kg: KGSubset, ae: AttrAutoEncoder, words: EmbeddingTable, chars: EmbeddingTable,
                    n_max: int) -> torch.Tensor:
    """``|U| x n_max x d_auto`` stack of attribute codes, truncated or zero-padded in file order."""
    by_entity = _attributes_by_entity(kg)
    out = torch.zeros(len(kg.entities), n_max, ae.d_auto)
    seqs, slots = [], []
    for i, e in enumerate(kg.entities):
        for k, (a, v) in enumerate(by_entity[e][:n_max]):
            seqs.append(embed_tokens(attribute_tokens(a, v), words, chars))
            slots.append((i, k))
    if seqs:
        with torch.no_grad():
            codes = ae.encode(seqs)
        for (i, k), c in zip(slots, codes):
            out[i, k] = c
    return out


class AttrCNN(nn.Module):
    """1-D convolution along the attribute axis followed by max-pooling over it."""

    def __init__(self, d_auto: int, n_kernel: int, d_kernel: int, d_ent: int):
        super().__init__()
        self.conv = nn.Conv1d(d_auto, n_kernel, d_kernel, padding="same")
        self.proj = nn.Identity() if n_kernel == d_ent else nn.Linear(n_kernel, d_ent)

    def forward(self, stack: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """``stack``: ``(n_max, d_auto)`` or ``(batch, n_max, d_auto)``.

        ``mask`` marks real attribute slots; padded slots are left out of the
        max-pool and an entity without attributes pools to zeros.
        """
        single = stack.dim() == 2
        x = stack.unsqueeze(0) if single else stack
        h = self.conv(x.transpose(1, 2))
        if mask is None:
            h = h.max(dim=-1).values
        else:
            m = (mask.unsqueeze(0) if single else mask)[:, None, :]
            h = h.masked_fill(~m, float("-inf")).max(dim=-1).values
            h = torch.where(m.any(-1), h, torch.zeros_like(h))
        h = self.proj(h)
        return h[0] if single else h


def entity_attr_rep(stack: torch.Tensor, cnn: AttrCNN) -> torch.Tensor:
    return cnn(stack)


# -- relational graph attention ----------------------------------------------

@dataclass
class KGGraph:
    """Augmented entity-relation graph.

    ``dst[k]`` attends to ``src[k]`` over an edge of type ``etype[k]``: every
    relation triple ``(h, r, t)`` yields ``h <- t`` (type ``r``) and
    ``t <- h`` (type ``r^-1``), and each node has a self-loop.
    """

    nodes: tuple[str, ...]
    type_names: tuple[str, ...]
    dst: torch.Tensor
    src: torch.Tensor
    etype: torch.Tensor

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_kg(cls, kg: KGSubset, relation_types: Sequence[str] | None = None) -> "KGGraph":
        rels = tuple(relation_types) if relation_types is not None else kg.relations
        type_names = rels + tuple(f"{r}^-1" for r in rels) + (SELF_LOOP,)
        rel_idx = {r: i for i, r in enumerate(rels)}
        node_idx = {e: i for i, e in enumerate(kg.entities)}
        dst, src, et = [], [], []
        for h, r, t in kg.relation_triples:
            if r not in rel_idx:
                continue
            hi, ti = node_idx[h], node_idx[t]
            dst += [hi, ti]
            src += [ti, hi]
            et += [rel_idx[r], rel_idx[r] + len(rels)]
        n = len(kg.entities)
        dst += list(range(n))
        src += list(range(n))
        et += [len(type_names) - 1] * n
        as_t = lambda v: torch.tensor(v, dtype=torch.long)  # noqa: E731
        return cls(tuple(kg.entities), type_names, as_t(dst), as_t(src), as_t(et))

    def neighbourhood(self, seeds: Iterable[int], hops: int) -> list[int]:
        """Sorted node ids within ``hops`` edges of ``seeds``."""
        reached = set(seeds)
        frontier = set(reached)
        dst = self.dst.tolist()
        src = self.src.tolist()
        adj: dict[int, set[int]] = {}
        for d, s in zip(dst, src):
            adj.setdefault(d, set()).add(s)
        for _ in range(hops):
            nxt = set()
            for v in frontier:
                nxt |= adj.get(v, set())
            frontier = nxt - reached
            reached |= nxt
        return sorted(reached)

    def subgraph(self, nodes: Sequence[int]) -> tuple["KGGraph", torch.Tensor]:
        """Induced subgraph and the index tensor mapping its nodes to the full graph."""
        keep = torch.tensor(sorted(nodes), dtype=torch.long)
        remap = torch.full((self.n_nodes,), -1, dtype=torch.long)
        remap[keep] = torch.arange(len(keep))
        mask = (remap[self.dst] >= 0) & (remap[self.src] >= 0)
        sub = KGGraph(tuple(self.nodes[i] for i in keep.tolist()), self.type_names,
                      remap[self.dst[mask]], remap[self.src[mask]], self.etype[mask])
        return sub, keep


def segment_softmax(scores: torch.Tensor, index: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax of ``scores`` within groups sharing the same ``index`` value."""
    shape = (n_segments,) + scores.shape[1:]
    idx = index.view(-1, *([1] * (scores.dim() - 1))).expand_as(scores)
    seg_max = torch.full(shape, float("-inf"), dtype=scores.dtype).scatter_reduce(
        0, idx, scores, reduce="amax", include_self=True)
    ex = torch.exp(scores - seg_max[index].detach())
    denom = torch.zeros(shape, dtype=scores.dtype).index_add(0, index, ex)
    return ex / denom[index]


class RGATStack(nn.Module):
    """K relational graph-attention layers with B heads each.

    Layer 0 uses one input projection ``d_ent -> d_rgat`` shared by its heads;
    later layers have a square ``W_in`` per head. Each head scores an edge
    with ``W_out . [W_in h_i; W_in h_j; M(r_ij)]``.
    """

    def __init__(self, n_edge_types: int, d_ent: int, d_rgat: int, n_layer: int = 3, n_head: int = 2,
                 d_rel: int = 20, leaky_slope: float = 0.2):
        super().__init__()
        self.n_layer, self.n_head, self.d_rgat = n_layer, n_head, d_rgat
        self.leaky_slope = leaky_slope
        self.rel_emb = nn.Embedding(n_edge_types, d_rel)
        self.w_in = nn.ParameterList()
        self.w_out = nn.ParameterList()
        for k in range(n_layer):
            if k == 0:
                w = torch.empty(1, d_rgat, d_ent)
            else:
                w = torch.empty(n_head, d_rgat, d_rgat)
            # He init keeps activation scale through the ReLU stack
            self.w_in.append(nn.Parameter(w.normal_(0.0, np.sqrt(2.0 / w.shape[-1]))))
            a = torch.empty(n_head, 2 * d_rgat + d_rel)
            self.w_out.append(nn.Parameter(a.uniform_(-1.0 / np.sqrt(a.shape[-1]), 1.0 / np.sqrt(a.shape[-1]))))

    def layer_weights(self, k: int) -> torch.Tensor:
        w = self.w_in[k]
        return w.expand(self.n_head, -1, -1) if w.shape[0] == 1 else w

    def forward(self, h: torch.Tensor, graph: KGGraph, return_attention: bool = False):
        attentions = []
        rel = self.rel_emb(graph.etype).to(h.dtype)
        d = self.d_rgat
        for k in range(self.n_layer):
            W = self.layer_weights(k).to(h.dtype)  # (B, d, d_in)
            a = self.w_out[k].to(h.dtype)  # (B, 2d + d_rel)
            Wh = torch.einsum("bij,nj->nbi", W, h)  # (N, B, d)
            e = ((Wh[graph.dst] * a[:, :d]).sum(-1) + (Wh[graph.src] * a[:, d:2 * d]).sum(-1)
                 + rel @ a[:, 2 * d:].t())  # (E, B)
            alpha = segment_softmax(F.leaky_relu(e, self.leaky_slope), graph.dst, graph.n_nodes)
            msg = alpha.unsqueeze(-1) * Wh[graph.src]
            agg = torch.zeros(graph.n_nodes, self.n_head, d, dtype=h.dtype).index_add(0, graph.dst, msg)
            h = torch.relu(agg).mean(dim=1)
            attentions.append(alpha)
        return (h, attentions) if return_attention else h

    def weight_count(self) -> int:
        return sum(p.numel() for p in self.w_in)

    def other_count(self) -> dict[str, int]:
        return {"attention vectors W_out": sum(p.numel() for p in self.w_out),
                "relation embeddings M": self.rel_emb.weight.numel()}


def rgat_forward(graph: KGGraph, init_reps: torch.Tensor, stack: RGATStack) -> torch.Tensor:
    return stack(init_reps, graph)
