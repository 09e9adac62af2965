"""Coreference distillation and context exchanging.

A student scorer estimates the probability that two mentions co-refer and is
trained to match fixed teacher probabilities with a Bernoulli KL loss. Each
source mention is then enriched with the representation of its most probable
counterpart, and the enriched mention vectors are written back onto tokens.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import nn

from kire.datamodel import CoreferenceTriple, Mention, Span
from kire.errors import DataError

KL_EPS = 1e-7


def mention_rep(H: torch.Tensor, mention: Mention | Span) -> torch.Tensor:
    s, e = mention.span if isinstance(mention, Mention) else mention
    return H[s:e].mean(dim=0)


def span_pooling(spans: Sequence[Span], n_tokens: int, dtype=torch.float32) -> torch.Tensor:
    P = torch.zeros(len(spans), n_tokens, dtype=dtype)
    for k, (s, e) in enumerate(spans):
        P[k, s:e] = 1.0 / (e - s)
    return P


def token_distance(a: Mention | Span, b: Mention | Span) -> int:
    """Tokens strictly between two disjoint spans, floored at 1."""
    (s1, e1) = a.span if isinstance(a, Mention) else a
    (s2, e2) = b.span if isinstance(b, Mention) else b
    if s1 < e2 and s2 < e1:
        raise DataError(f"overlapping spans ({s1}, {e1}) and ({s2}, {e2}) have no distance")
    gap = s2 - e1 if e1 <= s2 else s1 - e2
    return max(1, gap)


def distance_bin(psi: int, beta: int) -> int:
    """``floor(log2(psi))`` clamped to ``[0, beta]``."""
    if psi < 1:
        raise ValueError("distance must be >= 1")
    return min(int(psi).bit_length() - 1, beta)


class DistanceBins(nn.Module):
    def __init__(self, beta: int, d_dist: int):
        super().__init__()
        self.beta = beta
        self.table = nn.Embedding(beta + 1, d_dist)

    def forward(self, psi) -> torch.Tensor:
        if isinstance(psi, int):
            return self.table.weight[distance_bin(psi, self.beta)]
        idx = torch.tensor([distance_bin(int(p), self.beta) for p in psi], dtype=torch.long)
        return self.table(idx)


class CorefStudent(nn.Module):
    """Student coreference scorer.

    ``logit = sum_h tanh(W1 x + b1)_h / sqrt(d_mlp) + w . [m_s; m_t] + b``
    with ``x = [m_s; m_t; dist]``. The hidden units are pooled without
    parameters and the pair term is a direct linear read-out of the mention
    pair, so the weight matrices hold exactly
    ``d_mlp * (2 d_token + d_dist) + 2 d_token`` entries.
    """

    def __init__(self, d_token: int, d_dist: int, d_mlp: int):
        super().__init__()
        self.d_mlp = d_mlp
        self.hidden = nn.Linear(2 * d_token + d_dist, d_mlp)
        self.pair = nn.Linear(2 * d_token, 1, bias=False)
        self.out_bias = nn.Parameter(torch.zeros(1))

    def logit(self, m_s, m_t, dist_vec) -> torch.Tensor:
        pair = torch.cat([m_s, m_t], dim=-1)
        h = torch.tanh(self.hidden(torch.cat([pair, dist_vec], dim=-1)))
        return h.sum(dim=-1) / math.sqrt(self.d_mlp) + self.pair(pair).squeeze(-1) + self.out_bias.squeeze(-1)

    def forward(self, m_s, m_t, dist_vec) -> torch.Tensor:
        return torch.sigmoid(self.logit(m_s, m_t, dist_vec))

    def weight_count(self) -> int:
        return self.hidden.weight.numel() + self.pair.weight.numel()

    def bias_count(self) -> int:
        return self.hidden.bias.numel() + self.out_bias.numel()


def student_prob(m_s_rep, m_t_rep, psi: int, student: CorefStudent, bins: DistanceBins) -> torch.Tensor:
    return student(m_s_rep, m_t_rep, bins(psi))


def bernoulli_kl(p: torch.Tensor, q: torch.Tensor, eps: float = KL_EPS) -> torch.Tensor:
    """KL(Bernoulli(p) || Bernoulli(q)) elementwise, with 0 log 0 = 0 and q clamped to [eps, 1-eps]."""
    p = torch.as_tensor(p, dtype=q.dtype)
    q = q.clamp(eps, 1 - eps)
    pos = torch.where(p > 0, p * (torch.log(p.clamp_min(eps)) - torch.log(q)), torch.zeros_like(q))
    neg = torch.where(p < 1, (1 - p) * (torch.log((1 - p).clamp_min(eps)) - torch.log1p(-q)), torch.zeros_like(q))
    return pos + neg


def pair_probs(H: torch.Tensor, triples: Sequence[CoreferenceTriple], student: CorefStudent,
               bins: DistanceBins) -> torch.Tensor:
    """Student probabilities for each triple, evaluated on the rows of ``H``."""
    if not triples:
        return H.new_zeros(0)
    J = H.shape[0]
    Ps = span_pooling([t.m_s.span for t in triples], J, H.dtype)
    Pt = span_pooling([t.m_t.span for t in triples], J, H.dtype)
    dist = bins([token_distance(t.m_s, t.m_t) for t in triples])
    return student(Ps @ H, Pt @ H, dist.to(H.dtype))


def coref_loss(triples: Sequence[CoreferenceTriple], H: torch.Tensor, student: CorefStudent,
               bins: DistanceBins) -> torch.Tensor:
    """Sum of Bernoulli KL divergences between teacher and student over all triples."""
    if not triples:
        return H.new_zeros(())
    q = pair_probs(H, triples, student, bins)
    p = torch.tensor([t.p_cr for t in triples], dtype=H.dtype)
    return bernoulli_kl(p, q).sum()


def context_exchange(H: torch.Tensor, triples: Sequence[CoreferenceTriple], student: CorefStudent,
                     bins: DistanceBins, probs: torch.Tensor | None = None) -> dict[Span, torch.Tensor]:
    """Updated representation ``m_s + m_t*`` for every source mention.

    ``t*`` maximises the student probability among the triples sharing the
    source. Probabilities are computed on the pre-update rows and all updates
    are simultaneous; ties go to the target with the smallest span, so the
    result does not depend on triple order.
    """
    if not triples:
        return {}
    if probs is None:
        probs = pair_probs(H, triples, student, bins)
    pv = probs.detach().tolist()
    best: dict[Span, tuple[float, Span]] = {}
    for t, p in zip(triples, pv):
        s, tgt = t.m_s.span, t.m_t.span
        cur = best.get(s)
        if cur is None or p > cur[0] or (p == cur[0] and tgt < cur[1]):
            best[s] = (p, tgt)
    return {s: mention_rep(H, s) + mention_rep(H, tgt) for s, (_, tgt) in sorted(best.items())}


def write_back(H: torch.Tensor, updated: dict[Span, torch.Tensor]) -> torch.Tensor:
    """Copy each updated mention vector onto its tokens.

    A token covered by several updated mentions takes the one with the
    earliest start, then the longest span. Other rows are unchanged.
    """
    if not updated:
        return H
    owner: dict[int, Span] = {}
    for span in sorted(updated, key=lambda sp: (sp[0], -(sp[1] - sp[0]))):
        for j in range(span[0], span[1]):
            owner.setdefault(j, span)
    out = H.clone()
    for j, span in sorted(owner.items()):
        out[j] = updated[span]
    return out

