"""Baseline document encoders and the multi-label relation predictor."""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from kire.datamodel import Document, Entity
from kire.errors import DataError


class FeatureBuilder(nn.Module):
    """Per-token input features: word vector, entity-type embedding, entity-cluster embedding.

    Row 0 of both trainable tables is the all-zero padding row used for
    tokens outside every entity mention.
    """

    def __init__(self, entity_types: Sequence[str], d_type: int, d_cluster: int, max_entities: int):
        super().__init__()
        self.type_index = {t: i + 1 for i, t in enumerate(sorted(set(entity_types)))}
        self.max_entities = max_entities
        self.type_emb = nn.Embedding(len(self.type_index) + 2, d_type, padding_idx=0)
        self.cluster_emb = nn.Embedding(max_entities + 1, d_cluster, padding_idx=0)

    def ids_for(self, doc: Document) -> tuple[torch.Tensor, torch.Tensor]:
        J = len(doc.tokens)
        type_ids = torch.zeros(J, dtype=torch.long)
        cluster_ids = torch.zeros(J, dtype=torch.long)
        unk = len(self.type_index) + 1
        for ent in doc.entities:
            tid = self.type_index.get(ent.entity_type, unk)
            cid = min(ent.entity_id + 1, self.max_entities)
            for m in ent.mentions:
                type_ids[m.start:m.end] = tid
                cluster_ids[m.start:m.end] = cid
        return type_ids, cluster_ids

    def forward(self, word_vecs, type_ids, cluster_ids):
        return torch.cat([word_vecs, self.type_emb(type_ids), self.cluster_emb(cluster_ids)], dim=-1)


class DocEncoder(nn.Module):
    """Maps a ``J x d_in`` feature matrix to ``J x d_token`` hidden states."""

    def __init__(self, variant: str, d_in: int, d_token: int, cnn_layers: int = 2, cnn_kernel: int = 3):
        super().__init__()
        self.variant = variant
        self.d_token = d_token
        if variant == "cnn":
            if cnn_kernel % 2 == 0:
                raise ValueError("cnn_kernel must be odd for same-padding")
            dims = [d_in] + [d_token] * cnn_layers
            self.convs = nn.ModuleList(
                nn.Conv1d(a, b, cnn_kernel, padding=cnn_kernel // 2) for a, b in zip(dims[:-1], dims[1:])
            )
        elif variant == "lstm":
            self.rnn = nn.LSTM(d_in, d_token, batch_first=True)
        elif variant in ("bilstm", "context_aware"):
            self.rnn = nn.LSTM(d_in, d_token, batch_first=True, bidirectional=True)
            self.proj = nn.Linear(2 * d_token, d_token)
            if variant == "context_aware":
                self.attn_proj = nn.Linear(2 * d_token, d_token)
        else:
            raise ValueError(f"unknown encoder variant {variant!r}")

    def halves(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Forward and backward recurrent outputs of the bidirectional variants."""
        out, _ = self.rnn(x.unsqueeze(0))
        out = out.squeeze(0)
        return out[:, : self.d_token], out[:, self.d_token:]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] == 0:
            raise DataError("cannot encode an empty document")
        if self.variant == "cnn":
            h = x.t().unsqueeze(0)
            for k, conv in enumerate(self.convs):
                h = conv(h)
                if k < len(self.convs) - 1:
                    h = torch.relu(h)
            return h.squeeze(0).t()
        if self.variant == "lstm":
            out, _ = self.rnn(x.unsqueeze(0))
            return out.squeeze(0)
        fwd, bwd = self.halves(x)
        h = self.proj(torch.cat([fwd, bwd], dim=-1))
        if self.variant == "bilstm":
            return h
        scores = h @ h.t() / math.sqrt(self.d_token)
        ctx = torch.softmax(scores, dim=-1) @ h
        return self.attn_proj(torch.cat([h, ctx], dim=-1))


def mention_pooling(doc: Document, entities: Sequence[Entity] | None = None, dtype=torch.float32) -> torch.Tensor:
    """``n_entities x J`` matrix whose product with H gives mean-of-mention-means entity reps."""
    ents = doc.entities if entities is None else entities
    P = torch.zeros(len(ents), len(doc.tokens), dtype=dtype)
    for k, ent in enumerate(ents):
        w = 1.0 / len(ent.mentions)
        for m in ent.mentions:
            P[k, m.start:m.end] += w / (m.end - m.start)
    return P


def entity_representation(H: torch.Tensor, entity: Entity) -> torch.Tensor:
    reps = [H[m.start:m.end].mean(dim=0) for m in entity.mentions]
    return torch.stack(reps).mean(dim=0)


class RelationPredictor(nn.Module):
    """Scores an ordered entity pair: ``h^T W_r t + v_r^T [h; t] + b_r`` per relation."""

    def __init__(self, d_in: int, n_relations: int):
        super().__init__()
        self.bilinear = nn.Bilinear(d_in, d_in, n_relations, bias=False)
        self.linear = nn.Linear(2 * d_in, n_relations)
        self.threshold = 0.5

    def forward(self, head: torch.Tensor, tail: torch.Tensor) -> torch.Tensor:
        """Logits of shape ``(..., n_relations)``."""
        return self.bilinear(head, tail) + self.linear(torch.cat([head, tail], dim=-1))


def predict_pair(head_rep, tail_rep, predictor: RelationPredictor) -> torch.Tensor:
    return torch.sigmoid(predictor(head_rep, tail_rep))


def re_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over (pair, relation) cells, computed from logits."""
    if logits.numel() == 0:
        return logits.sum()
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


def relation_targets(doc: Document, pairs, rel_index: dict[str, int], dtype=torch.float32) -> torch.Tensor:
    index = {p: k for k, p in enumerate(pairs)}
    y = torch.zeros(len(pairs), len(rel_index), dtype=dtype)
    for f in doc.facts:
        k = index.get((f.head, f.tail))
        if k is not None and f.relation in rel_index:
            y[k, rel_index[f.relation]] = 1.0
    return y
