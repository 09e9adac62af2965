"""Domain types shared across the package.

All types are frozen dataclasses. Token spans are half-open ``(start, end)``
ranges in document-level token offsets.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

Span = tuple[int, int]

FUSION_STRATEGIES = ("kire", "rep_avg", "rep_concat", "mlp", "none")
ENCODER_VARIANTS = ("cnn", "lstm", "bilstm", "context_aware")


@dataclass(frozen=True)
class Mention:
    sent_idx: int
    span: Span
    surface: str

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]

    def __len__(self) -> int:
        return self.span[1] - self.span[0]


@dataclass(frozen=True)
class Entity:
    entity_id: int
    entity_type: str
    mentions: tuple[Mention, ...]
    kg_link: Optional[str] = None


@dataclass(frozen=True)
class RelationFact:
    head: int
    tail: int
    relation: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]
    sentence_bounds: tuple[Span, ...]
    entities: tuple[Entity, ...]
    facts: tuple[RelationFact, ...] = ()
    # non-entity spans introduced by an external coreference resolver
    extra_mentions: tuple[Mention, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)

    def sentence_of(self, token_idx: int) -> int:
        for i, (s, e) in enumerate(self.sentence_bounds):
            if s <= token_idx < e:
                return i
        raise IndexError(f"token {token_idx} outside document {self.doc_id!r}")

    def all_mentions(self) -> list[Mention]:
        out = [m for ent in self.entities for m in ent.mentions]
        out.extend(self.extra_mentions)
        return out

    def mention_at(self, span: Span) -> Optional[Mention]:
        for m in self.all_mentions():
            if m.span == tuple(span):
                return m
        return None


@dataclass(frozen=True)
class CoreferenceTriple:
    """A (mention, mention, probability) coreference assertion."""

    doc_id: str
    m_s: Mention
    m_t: Mention
    p_cr: float
    source: str = "alias"  # alias | resolver

    def __post_init__(self):
        if not 0.0 <= self.p_cr <= 1.0:
            raise ValueError(f"p_cr must lie in [0, 1], got {self.p_cr}")
        if self.m_s.span == self.m_t.span:
            raise ValueError("coreference triple links a mention to itself")
        if self.source not in ("alias", "resolver"):
            raise ValueError(f"unknown coreference source {self.source!r}")


@dataclass(frozen=True)
class KGSubset:
    entities: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()
    attributes: tuple[str, ...] = ()
    relation_triples: tuple[tuple[str, str, str], ...] = ()
    attribute_triples: tuple[tuple[str, str, str], ...] = ()
    aliases: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def check(self) -> list[str]:
        """Return the list of violated invariants (empty when consistent)."""
        ents = set(self.entities)
        rels = set(self.relations)
        attrs = set(self.attributes)
        problems = []
        for h, r, t in self.relation_triples:
            if h not in ents or t not in ents:
                problems.append(f"relation triple ({h}, {r}, {t}): endpoint not in U")
            if r not in rels:
                problems.append(f"relation triple ({h}, {r}, {t}): relation not in R")
        for e, a, _ in self.attribute_triples:
            if e not in ents:
                problems.append(f"attribute triple of {e}: entity not in U")
            if a not in attrs:
                problems.append(f"attribute triple of {e}: attribute {a} not in A")
        return problems

    def attributes_of(self, entity: str) -> list[tuple[str, str]]:
        return [(a, v) for e, a, v in self.attribute_triples if e == entity]


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class Config:
    # document encoder
    encoder: str = "bilstm"
    d_word: int = 100
    d_char: int = 100
    d_type: int = 20
    d_cluster: int = 20
    max_entities: int = 64
    d_token: int = 100
    cnn_layers: int = 2
    cnn_kernel: int = 3
    # coreference distillation
    d_mlp: int = 256
    d_dist: int = 20
    beta: int = 8
    # KG encoding
    d_auto: int = 50
    n_max: int = 8
    n_kernel: int = 100
    d_kernel: int = 3
    n_layer: int = 3
    n_head: int = 2
    d_rgat: int = 100
    d_ent: int = 100
    d_rel: int = 20
    leaky_slope: float = 0.2
    # reconciliation
    n_agg: int = 2
    d_out: int = 0  # 0 means "same as d_token"
    n_attn_heads: int = 4
    activation: str = "gelu"  # gelu | identity
    fusion_strategy: str = "kire"
    use_coref: bool = True
    use_kg: bool = True
    # multi-task loss
    alpha1: float = 1.0
    alpha2: float = 0.01
    alpha3: float = 0.01
    # optimisation
    learning_rate: float = 0.0005
    batch_size: int = 4
    base_epochs: int = 30
    kire_epochs: int = 30
    ae_epochs: int = 30
    ae_learning_rate: float = 0.01
    grad_clip: float = 1.0
    freeze_base: bool = False
    seed: int = 0
    num_threads: int = 1

    def __post_init__(self):
        if self.d_out == 0:
            object.__setattr__(self, "d_out", self.d_token)
        problems = self.check()
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))

    def check(self) -> list[str]:
        problems = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and f.name not in ("seed", "beta") and v <= 0:
                problems.append(f"{f.name} must be a positive integer")
        if self.beta < 0:
            problems.append("beta must be >= 0")
        for name in ("alpha1", "alpha2", "alpha3"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be nonnegative")
        if self.d_word != self.d_char:
            problems.append("d_word must equal d_char")
        if self.d_rgat != self.d_ent:
            problems.append("d_rgat must equal d_ent")
        if self.encoder not in ENCODER_VARIANTS:
            problems.append(f"encoder must be one of {ENCODER_VARIANTS}")
        if self.fusion_strategy not in FUSION_STRATEGIES:
            problems.append(f"fusion_strategy must be one of {FUSION_STRATEGIES}")
        if self.activation not in ("gelu", "identity"):
            problems.append("activation must be gelu or identity")
        if self.d_token % self.n_attn_heads or self.d_ent % self.n_attn_heads:
            problems.append("n_attn_heads must divide d_token and d_ent")
        return problems

    def replace(self, **changes: Any) -> "Config":
        if changes.get("d_out") is None and "d_token" in changes and self.d_out == self.d_token:
            changes.setdefault("d_out", 0)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


def validate_document(doc: Document, relation_vocab=None) -> list[Violation]:
    """Check every Document/Entity/Mention invariant; violations are returned, not raised."""
    out: list[Violation] = []
    J = len(doc.tokens)
    pos = 0
    for i, (s, e) in enumerate(doc.sentence_bounds):
        if s != pos or e <= s:
            out.append(Violation(f"sentence_bounds[{i}]", "sentences must be ordered, disjoint and contiguous",
                                 f"({s}, {e})"))
        pos = e
    if pos != J:
        out.append(Violation("sentence_bounds", "sentences must cover all tokens", f"cover {pos} of {J}"))

    def check_mention(where: str, m: Mention):
        s, e = m.span
        if e <= s:
            out.append(Violation(where, "empty span", f"({s}, {e})"))
            return
        if s < 0 or e > J:
            out.append(Violation(where, "span out of range", f"({s}, {e})"))
            return
        if not (0 <= m.sent_idx < len(doc.sentence_bounds)):
            out.append(Violation(where, "sentence index out of range", str(m.sent_idx)))
            return
        ss, se = doc.sentence_bounds[m.sent_idx]
        if s < ss or e > se:
            out.append(Violation(where, "span crosses sentence boundary", f"({s}, {e}) vs ({ss}, {se})"))
        if m.surface != " ".join(doc.tokens[s:e]):
            out.append(Violation(where, "surface mismatch", m.surface))

    for k, ent in enumerate(doc.entities):
        if ent.entity_id != k:
            out.append(Violation(f"entities[{k}].entity_id", "entity ids must equal their position"))
        if not ent.mentions:
            out.append(Violation(f"entities[{k}].mentions", "no mentions"))
        for n, m in enumerate(ent.mentions):
            check_mention(f"entities[{k}].mentions[{n}]", m)
    for n, m in enumerate(doc.extra_mentions):
        check_mention(f"extra_mentions[{n}]", m)

    n_ent = len(doc.entities)
    for k, f in enumerate(doc.facts):
        if not (0 <= f.head < n_ent and 0 <= f.tail < n_ent):
            out.append(Violation(f"facts[{k}]", "entity index out of range", f"({f.head}, {f.tail})"))
        elif f.head == f.tail:
            out.append(Violation(f"facts[{k}]", "self-relation", str(f.head)))
        if relation_vocab is not None and f.relation not in relation_vocab:
            out.append(Violation(f"facts[{k}].relation", "unknown relation", f.relation))
    return out


def entity_pairs(doc: Document) -> list[tuple[int, int]]:
    n = len(doc.entities)
    return [(h, t) for h in range(n) for t in range(n) if h != t]


# -- plain-dict serialisation ------------------------------------------------

def _mention_to_dict(m: Mention) -> dict:
    return {"sent_idx": m.sent_idx, "span": list(m.span), "surface": m.surface}


def _mention_from_dict(d: dict) -> Mention:
    return Mention(int(d["sent_idx"]), (int(d["span"][0]), int(d["span"][1])), d["surface"])


def document_to_dict(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "tokens": list(doc.tokens),
        "sentence_bounds": [list(b) for b in doc.sentence_bounds],
        "entities": [
            {
                "entity_id": e.entity_id,
                "entity_type": e.entity_type,
                "kg_link": e.kg_link,
                "mentions": [_mention_to_dict(m) for m in e.mentions],
            }
            for e in doc.entities
        ],
        "facts": [[f.head, f.tail, f.relation] for f in doc.facts],
        "extra_mentions": [_mention_to_dict(m) for m in doc.extra_mentions],
    }


def document_from_dict(d: dict) -> Document:
    return Document(
        doc_id=d["doc_id"],
        tokens=tuple(d["tokens"]),
        sentence_bounds=tuple((int(s), int(e)) for s, e in d["sentence_bounds"]),
        entities=tuple(
            Entity(
                entity_id=int(e["entity_id"]),
                entity_type=e["entity_type"],
                mentions=tuple(_mention_from_dict(m) for m in e["mentions"]),
                kg_link=e.get("kg_link"),
            )
            for e in d["entities"]
        ),
        facts=tuple(RelationFact(int(h), int(t), r) for h, t, r in d.get("facts", [])),
        extra_mentions=tuple(_mention_from_dict(m) for m in d.get("extra_mentions", [])),
    )
