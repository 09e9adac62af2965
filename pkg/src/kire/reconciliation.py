"""Fusion of token representations with KG entity representations.

``align`` tensors map each token to the local index of the entity it is
aligned to, or -1 for unaligned tokens.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from kire.errors import AlignmentError


def activation(name: str):
    if name == "gelu":
        return F.gelu
    if name == "identity":
        return lambda x: x
    raise ValueError(f"unknown activation {name!r}")


def sinusoidal_positions(n: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : d // 2]
    return pe.to(dtype)


def check_alignment(align: torch.Tensor, n_entities: int) -> None:
    if align.numel() and (int(align.max()) >= n_entities or int(align.min()) < -1):
        raise AlignmentError(f"token aligned to unknown entity (have {n_entities} candidates)")


class Aggregator(nn.Module):
    def __init__(self, d_token: int, d_ent: int, d_out: int, n_heads: int = 4, act: str = "gelu"):
        super().__init__()
        self.token_attn = nn.MultiheadAttention(d_token, n_heads, batch_first=True)
        self.entity_attn = nn.MultiheadAttention(d_ent, n_heads, batch_first=True)
        self.token_norm = nn.LayerNorm(d_token)
        self.entity_norm = nn.LayerNorm(d_ent)
        self.fuse_w = nn.Linear(d_token, d_out, bias=False)
        self.fuse_e = nn.Linear(d_ent, d_out, bias=False)
        self.fuse_b = nn.Parameter(torch.zeros(d_out))
        self.rec_w = nn.Linear(d_out, d_token)
        self.rec_e = nn.Linear(d_out, d_ent)
        self.sigma = activation(act)

    def self_attend(self, tokens: torch.Tensor, entities: torch.Tensor):
        """Transformer attention sublayer, ``LayerNorm(x + MHA(x))``, on each sequence."""
        ht, _ = self.token_attn(tokens[None], tokens[None], tokens[None], need_weights=False)
        ht = self.token_norm(tokens + ht[0])
        if entities.shape[0]:
            he, _ = self.entity_attn(entities[None], entities[None], entities[None], need_weights=False)
            he = self.entity_norm(entities + he[0])
        else:
            he = entities
        return ht, he

    def fuse(self, ht: torch.Tensor, he: torch.Tensor, align: torch.Tensor) -> torch.Tensor:
        """One fused vector per token; aligned tokens also receive their entity's term."""
        pre = self.fuse_w(ht) + self.fuse_b
        mask = align >= 0
        if bool(mask.any()):
            ent_term = self.fuse_e(he)[align.clamp_min(0)]
            pre = pre + ent_term * mask[:, None].to(pre.dtype)
        return self.sigma(pre)

    def forward(self, tokens: torch.Tensor, entities: torch.Tensor, align: torch.Tensor):
        check_alignment(align, entities.shape[0])
        ht, he = self.self_attend(tokens, entities)
        fused = self.fuse(ht, he, align)
        new_tokens = self.sigma(self.rec_w(fused))
        mask = align >= 0
        if not bool(mask.any()):
            return new_tokens, entities
        I = entities.shape[0]
        ent_out = self.sigma(self.rec_e(fused[mask]))
        idx = align[mask]
        sums = torch.zeros(I, entities.shape[1], dtype=entities.dtype).index_add(0, idx, ent_out)
        counts = torch.zeros(I, dtype=entities.dtype).index_add(0, idx, torch.ones_like(idx, dtype=entities.dtype))
        updated = counts > 0
        new_entities = torch.where(updated[:, None], sums / counts.clamp_min(1)[:, None], entities)
        return new_tokens, new_entities

    def attention_weight_count(self) -> int:
        return sum(m.in_proj_weight.numel() + m.out_proj.weight.numel()
                   for m in (self.token_attn, self.entity_attn))

    def attention_bias_count(self) -> int:
        return sum(m.in_proj_bias.numel() + m.out_proj.bias.numel() for m in (self.token_attn, self.entity_attn))


class Reconciler(nn.Module):
    """N stacked aggregators; sinusoidal positions are added before the first one."""

    def __init__(self, d_token: int, d_ent: int, d_out: int, n_agg: int = 2, n_heads: int = 4,
                 act: str = "gelu", positions: bool = True):
        super().__init__()
        self.positions = positions
        self.aggregators = nn.ModuleList(Aggregator(d_token, d_ent, d_out, n_heads, act) for _ in range(n_agg))

    def forward(self, tokens: torch.Tensor, entities: torch.Tensor, align: torch.Tensor):
        if self.positions:
            tokens = tokens + sinusoidal_positions(tokens.shape[0], tokens.shape[1], tokens.dtype)
        for agg in self.aggregators:
            tokens, entities = agg(tokens, entities, align)
        return tokens, entities


def aggregate(H: torch.Tensor, kg_reps: torch.Tensor, align: torch.Tensor, reconciler: Reconciler):
    return reconciler(H, kg_reps, align)


def alignment_probs(tokens: torch.Tensor, kg_reps: torch.Tensor, linear: nn.Linear) -> torch.Tensor:
    """``J x I`` matrix of P(entity i | token j) over the candidate entities."""
    return torch.softmax(linear(tokens) @ kg_reps.t(), dim=-1)


def alignment_loss(tokens: torch.Tensor, kg_reps: torch.Tensor, align: torch.Tensor,
                   linear: nn.Linear) -> torch.Tensor:
    """Negative log-likelihood of the gold entity, summed over aligned tokens."""
    mask = align >= 0
    if kg_reps.shape[0] == 0 or not bool(mask.any()):
        return tokens.new_zeros(())
    check_alignment(align, kg_reps.shape[0])
    logp = torch.log_softmax(linear(tokens[mask]) @ kg_reps.t(), dim=-1)
    return -logp.gather(1, align[mask][:, None]).sum()


class FusionVariant(nn.Module):
    """Simpler fusion baselines that touch aligned tokens only.

    ``rep_avg``: mean of the token row and the projected entity vector;
    ``rep_concat``: ``[token; entity]`` projected back to ``d_token``;
    ``mlp``: a two-layer MLP over ``[token; entity]``.
    """

    def __init__(self, strategy: str, d_token: int, d_ent: int):
        super().__init__()
        self.strategy = strategy
        if strategy == "rep_avg":
            self.proj = nn.Linear(d_ent, d_token)
        elif strategy == "rep_concat":
            self.proj = nn.Linear(d_token + d_ent, d_token)
        elif strategy == "mlp":
            self.proj = nn.Sequential(nn.Linear(d_token + d_ent, d_token), nn.GELU(), nn.Linear(d_token, d_token))
        else:
            raise ValueError(f"unknown fusion variant {strategy!r}")

    def forward(self, tokens: torch.Tensor, entities: torch.Tensor, align: torch.Tensor):
        check_alignment(align, entities.shape[0])
        mask = align >= 0
        if not bool(mask.any()):
            return tokens, entities
        t = tokens[mask]
        e = entities[align[mask]]
        if self.strategy == "rep_avg":
            new = (t + self.proj(e)) / 2
        else:
            new = self.proj(torch.cat([t, e], dim=-1))
        out = tokens.clone()
        out[mask] = new
        return out, entities


def fuse_variant(H, kg_reps, align, variant: FusionVariant):
    return variant(H, kg_reps, align)[0]
