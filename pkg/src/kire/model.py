"""End-to-end RE model: encoder, knowledge injection layer and relation predictor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from kire.coref import CorefStudent, DistanceBins, context_exchange, pair_probs, bernoulli_kl, write_back
from kire.datamodel import Config, CoreferenceTriple, Document, KGSubset, entity_pairs
from kire.embeddings import EmbeddingTable, lookup
from kire.encoders import (
    DocEncoder,
    FeatureBuilder,
    RelationPredictor,
    mention_pooling,
    re_loss,
    relation_targets,
)
from kire.ingestion import DatasetSplit, derive_alias_corefs
from kire.kg import AttrCNN, KGGraph, RGATStack, attribute_mask
from kire.reconciliation import FusionVariant, Reconciler, alignment_loss

PARAMETER_GROUPS = ("base", "coref", "kg", "reconcile")


@dataclass
class PreparedDoc:
    doc: Document
    word_vecs: torch.Tensor
    type_ids: torch.Tensor
    cluster_ids: torch.Tensor
    pooling: torch.Tensor
    pairs: list[tuple[int, int]]
    targets: torch.Tensor
    triples: list[CoreferenceTriple] = field(default_factory=list)
    align: torch.Tensor = None  # token -> candidate index, -1 if unaligned
    candidates: list[int] = field(default_factory=list)  # KG node ids


def token_alignment(doc: Document, node_index: dict[str, int]) -> tuple[torch.Tensor, list[int]]:
    """Align mention tokens of linked entities to in-document candidate KG entities.

    Candidates are the distinct linked entities in entity order; a token keeps
    its first alignment if mentions overlap.
    """
    align = torch.full((len(doc.tokens),), -1, dtype=torch.long)
    candidates: list[int] = []
    local: dict[int, int] = {}
    for ent in doc.entities:
        node = node_index.get(ent.kg_link) if ent.kg_link is not None else None
        if node is None:
            continue
        if node not in local:
            local[node] = len(candidates)
            candidates.append(node)
        for m in ent.mentions:
            for j in range(m.start, m.end):
                if align[j] < 0:
                    align[j] = local[node]
    return align, candidates


def prepare_split(split: DatasetSplit | Iterable[Document], relation_vocab: Sequence[str],
                  words: EmbeddingTable, chars: EmbeddingTable, features: FeatureBuilder,
                  kg: Optional[KGSubset] = None, corefs: Iterable[CoreferenceTriple] = ()) -> list[PreparedDoc]:
    rel_index = {r: i for i, r in enumerate(relation_vocab)}
    node_index = {e: i for i, e in enumerate(kg.entities)} if kg is not None else {}
    by_doc: dict[str, list[CoreferenceTriple]] = {}
    for tr in corefs:
        by_doc.setdefault(tr.doc_id, []).append(tr)
    out = []
    for doc in split:
        vecs = torch.as_tensor(np.stack([lookup(t, words, chars) for t in doc.tokens]), dtype=torch.float32)
        type_ids, cluster_ids = features.ids_for(doc)
        pairs = entity_pairs(doc)
        triples = list(derive_alias_corefs(doc, kg)) if kg is not None else []
        triples += by_doc.get(doc.doc_id, [])
        align, candidates = token_alignment(doc, node_index)
        out.append(PreparedDoc(doc, vecs, type_ids, cluster_ids, mention_pooling(doc), pairs,
                               relation_targets(doc, pairs, rel_index), triples, align, candidates))
    return out


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    l_re: torch.Tensor
    l_cr: torch.Tensor
    l_kg: torch.Tensor


class KIREModel(nn.Module):
    def __init__(self, config: Config, relation_vocab: Sequence[str], entity_types: Sequence[str],
                 kg: Optional[KGSubset] = None, attr_codes: Optional[torch.Tensor] = None):
        super().__init__()
        c = config
        self.config = c
        self.relation_vocab = tuple(relation_vocab)
        self.features = FeatureBuilder(entity_types, c.d_type, c.d_cluster, c.max_entities)
        self.encoder = DocEncoder(c.encoder, c.d_word + c.d_type + c.d_cluster, c.d_token,
                                  c.cnn_layers, c.cnn_kernel)
        self.predictor = RelationPredictor(c.d_token, len(self.relation_vocab))

        self.bins = DistanceBins(c.beta, c.d_dist)
        self.student = CorefStudent(c.d_token, c.d_dist, c.d_mlp)

        self.graph = KGGraph.from_kg(kg) if kg is not None else None
        n_types = len(self.graph.type_names) if self.graph is not None else 1
        if attr_codes is None:
            n_nodes = len(kg.entities) if kg is not None else 0
            attr_codes = torch.zeros(n_nodes, c.n_max, c.d_auto)
        self.register_buffer("attr_codes", attr_codes.to(torch.float32))
        # derived from the KG, so kept out of the state dict
        self.attr_mask = attribute_mask(kg, c.n_max) if kg is not None else torch.zeros(0, c.n_max, dtype=torch.bool)
        self.attr_cnn = AttrCNN(c.d_auto, c.n_kernel, c.d_kernel, c.d_ent)
        self.rgat = RGATStack(n_types, c.d_ent, c.d_rgat, c.n_layer, c.n_head, c.d_rel, c.leaky_slope)

        if c.fusion_strategy in ("rep_avg", "rep_concat", "mlp"):
            self.reconciler = FusionVariant(c.fusion_strategy, c.d_token, c.d_ent)
        else:
            self.reconciler = Reconciler(c.d_token, c.d_ent, c.d_out, c.n_agg, c.n_attn_heads, c.activation)
        self.align_linear = nn.Linear(c.d_token, c.d_ent)

    def groups(self) -> dict[str, list[nn.Module]]:
        return {
            "base": [self.features, self.encoder, self.predictor],
            "coref": [self.bins, self.student],
            "kg": [self.attr_cnn, self.rgat],
            "reconcile": [self.reconciler, self.align_linear],
        }

    def group_parameters(self, name: str) -> list[nn.Parameter]:
        return [p for m in self.groups()[name] for p in m.parameters()]

    def encode(self, pd: PreparedDoc) -> torch.Tensor:
        dtype = self.predictor.linear.weight.dtype
        x = self.features(pd.word_vecs.to(dtype), pd.type_ids, pd.cluster_ids)
        return self.encoder(x)

    def kg_representations(self, candidates: Sequence[int]) -> torch.Tensor:
        """Final R-GAT representations of the candidate KG nodes."""
        dtype = self.predictor.linear.weight.dtype
        if not candidates or self.graph is None:
            return torch.zeros(0, self.config.d_ent, dtype=dtype)
        nodes = self.graph.neighbourhood(candidates, self.config.n_layer)
        sub, keep = self.graph.subgraph(nodes)
        h0 = self.attr_cnn(self.attr_codes[keep].to(dtype), self.attr_mask[keep])
        h = self.rgat(h0, sub)
        pos = {n: i for i, n in enumerate(keep.tolist())}
        return h[torch.tensor([pos[n] for n in candidates])]

    def inject(self, pd: PreparedDoc, H: torch.Tensor):
        c = self.config
        zero = H.new_zeros(())
        l_cr, l_kg = zero, zero
        if c.fusion_strategy == "none":
            return H, l_cr, l_kg
        if c.use_coref and pd.triples:
            probs = pair_probs(H, pd.triples, self.student, self.bins)
            p = torch.tensor([t.p_cr for t in pd.triples], dtype=H.dtype)
            l_cr = bernoulli_kl(p, probs).sum()
            H = write_back(H, context_exchange(H, pd.triples, self.student, self.bins, probs=probs))
        if c.use_kg:
            kg_reps = self.kg_representations(pd.candidates)
            align = pd.align if kg_reps.shape[0] else torch.full_like(pd.align, -1)
            H, _ = self.reconciler(H, kg_reps, align)
            if c.fusion_strategy == "kire":
                l_kg = alignment_loss(H, kg_reps, align, self.align_linear)
        return H, l_cr, l_kg

    def forward(self, pd: PreparedDoc, inject: bool = True) -> ForwardOutput:
        H = self.encode(pd)
        if inject:
            H, l_cr, l_kg = self.inject(pd, H)
        else:
            l_cr = l_kg = H.new_zeros(())
        E = pd.pooling.to(H.dtype) @ H
        if pd.pairs:
            heads = torch.tensor([h for h, _ in pd.pairs])
            tails = torch.tensor([t for _, t in pd.pairs])
            logits = self.predictor(E[heads], E[tails])
        else:
            logits = H.new_zeros(0, len(self.relation_vocab))
        return ForwardOutput(logits, re_loss(logits, pd.targets), l_cr, l_kg)
