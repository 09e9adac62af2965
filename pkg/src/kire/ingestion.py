"""Loaders for DocRED-format corpora, KG subsets and external coreference output.

Also hosts the synthetic corpus generator used for desk-scale experiments.
"""

from __future__ import annotations

import json
import logging
import os
import random
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence

from kire.datamodel import (
    CoreferenceTriple,
    Document,
    Entity,
    KGSubset,
    Mention,
    RelationFact,
    Span,
)
from kire.errors import (
    DocumentReferenceError,
    ParseError,
    RecordError,
    SpanError,
    VocabularyError,
)

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    documents: tuple[Document, ...]

    def __post_init__(self):
        seen = set()
        for d in self.documents:
            if d.doc_id in seen:
                raise ValueError(f"duplicate doc_id {d.doc_id!r} in split {self.name!r}")
            seen.add(d.doc_id)

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def by_id(self) -> dict[str, Document]:
        return {d.doc_id: d for d in self.documents}

    @property
    def n_facts(self) -> int:
        return sum(len(d.facts) for d in self.documents)


def normalize_surface(text: str) -> str:
    return unicodedata.normalize("NFC", text).casefold()


# -- relation vocabulary -----------------------------------------------------

def load_relation_vocab(path) -> tuple[str, ...]:
    """Read a relation vocabulary.

    Accepts either one label per line, or a DocRED ``rel2id.json`` mapping
    (ordered by index; the ``Na`` entry is dropped since absence encodes N/A).
    """
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        mapping = json.loads(text)
        labels = [k for k, _ in sorted(mapping.items(), key=lambda kv: kv[1])]
        return tuple(k for k in labels if k not in ("Na", "NA", "N/A"))
    if stripped.startswith("["):
        return tuple(json.loads(text))
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def write_relation_vocab(vocab: Sequence[str], path) -> None:
    Path(path).write_text("".join(f"{r}\n" for r in vocab), encoding="utf-8")


# -- DocRED format -----------------------------------------------------------

def _iter_json_array(text: str) -> Iterator[tuple[int, object]]:
    dec = json.JSONDecoder()
    pos = 0
    n = len(text)

    def skip_ws(p):
        while p < n and text[p] in " \t\r\n":
            p += 1
        return p

    pos = skip_ws(pos)
    if pos >= n or text[pos] != "[":
        raise ParseError("expected a JSON array at top level")
    pos = skip_ws(pos + 1)
    if pos < n and text[pos] == "]":
        return
    idx = 0
    while True:
        try:
            obj, pos = dec.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise ParseError(f"element {idx}: malformed JSON ({exc.msg})") from None
        yield idx, obj
        idx += 1
        pos = skip_ws(pos)
        if pos < n and text[pos] == ",":
            pos = skip_ws(pos + 1)
            continue
        if pos < n and text[pos] == "]":
            return
        raise ParseError(f"element {idx}: malformed JSON (expected ',' or ']')")


def _docred_element_to_document(idx: int, item, vocab: set[str], seen_ids: set[str]) -> Document:
    if not isinstance(item, dict):
        raise ParseError(f"element {idx}: expected an object")
    for key in ("title", "sents", "vertexSet"):
        if key not in item:
            raise ParseError(f"element {idx}: missing field {key!r}")
    sents = item["sents"]
    tokens: list[str] = []
    bounds: list[Span] = []
    for sent in sents:
        start = len(tokens)
        tokens.extend(str(t) for t in sent)
        bounds.append((start, len(tokens)))

    entities = []
    for k, cluster in enumerate(item["vertexSet"]):
        mentions = []
        kg_link = None
        for m in cluster:
            try:
                sid = int(m["sent_id"])
                s, e = int(m["pos"][0]), int(m["pos"][1])
            except (KeyError, IndexError, TypeError, ValueError):
                raise ParseError(f"element {idx}: malformed mention in vertexSet[{k}]") from None
            if not 0 <= sid < len(bounds):
                raise SpanError(f"element {idx}: vertexSet[{k}] sent_id {sid} out of range")
            ss, se = bounds[sid]
            if not (0 <= s < e <= se - ss):
                raise SpanError(f"element {idx}: vertexSet[{k}] pos {[s, e]} out of range "
                                f"for sentence {sid} of length {se - ss}")
            span = (ss + s, ss + e)
            mentions.append(Mention(sid, span, " ".join(tokens[span[0]:span[1]])))
            kg_link = kg_link or m.get("kg_id")
        etype = cluster[0].get("type", "") if cluster else ""
        entities.append(Entity(k, etype, tuple(mentions), kg_link))

    facts = []
    for lab in item.get("labels", []) or []:
        try:
            h, t, r = int(lab["h"]), int(lab["t"]), str(lab["r"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"element {idx}: malformed label {lab!r}") from None
        if r not in vocab:
            raise VocabularyError(f"element {idx}: unknown relation id {r!r}")
        facts.append(RelationFact(h, t, r))

    doc_id = str(item["title"])
    if doc_id in seen_ids:
        k = 1
        while f"{doc_id}#{k}" in seen_ids:
            k += 1
        doc_id = f"{doc_id}#{k}"
    seen_ids.add(doc_id)
    return Document(doc_id, tuple(tokens), tuple(bounds), tuple(entities), tuple(facts))


def load_docred(path, relation_vocab, name: str = "train") -> DatasetSplit:
    """Load a DocRED-format JSON array into a :class:`DatasetSplit`.

    ``relation_vocab`` is either a path to a vocabulary file or a sequence of
    labels.
    """
    if isinstance(relation_vocab, (str, os.PathLike)):
        relation_vocab = load_relation_vocab(relation_vocab)
    vocab = set(relation_vocab)
    text = Path(path).read_text(encoding="utf-8")
    seen: set[str] = set()
    docs = [_docred_element_to_document(i, item, vocab, seen) for i, item in _iter_json_array(text)]
    return DatasetSplit(name, tuple(docs))


def document_to_docred(doc: Document) -> dict:
    sents = [list(doc.tokens[s:e]) for s, e in doc.sentence_bounds]
    vertex_set = []
    for ent in doc.entities:
        cluster = []
        for m in ent.mentions:
            ss = doc.sentence_bounds[m.sent_idx][0]
            rec = {"name": m.surface, "sent_id": m.sent_idx, "pos": [m.start - ss, m.end - ss],
                   "type": ent.entity_type}
            if ent.kg_link is not None:
                rec["kg_id"] = ent.kg_link
            cluster.append(rec)
        vertex_set.append(cluster)
    labels = [{"h": f.head, "t": f.tail, "r": f.relation, "evidence": []} for f in doc.facts]
    return {"title": doc.doc_id, "sents": sents, "vertexSet": vertex_set, "labels": labels}


def dump_docred(split: DatasetSplit | Iterable[Document], path) -> None:
    data = [document_to_docred(d) for d in split]
    Path(path).write_text(json.dumps(data, ensure_ascii=False, sort_keys=True), encoding="utf-8")


# -- KG subsets --------------------------------------------------------------

def _read_jsonl(path, required: Sequence[str]) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            for key in required:
                if not isinstance(rec, dict) or key not in rec:
                    raise RecordError(f"{path}:{lineno}: missing field {key!r}")
            yield lineno, rec


def load_kg_subset(relations_path, attributes_path, aliases_path) -> KGSubset:
    entities: dict[str, None] = {}
    relations: dict[str, None] = {}
    attributes: dict[str, None] = {}
    rel_triples: dict[tuple[str, str, str], None] = {}
    attr_triples: dict[tuple[str, str, str], None] = {}
    aliases: dict[str, list[str]] = {}

    for _, rec in _read_jsonl(relations_path, ("h", "r", "t")):
        h, r, t = str(rec["h"]), str(rec["r"]), str(rec["t"])
        entities.setdefault(h)
        entities.setdefault(t)
        relations.setdefault(r)
        rel_triples.setdefault((h, r, t))
    for _, rec in _read_jsonl(attributes_path, ("e", "a", "v")):
        e, a, v = str(rec["e"]), str(rec["a"]), str(rec["v"])
        entities.setdefault(e)
        attributes.setdefault(a)
        attr_triples.setdefault((e, a, v))
    for lineno, rec in _read_jsonl(aliases_path, ("e", "aliases")):
        e = str(rec["e"])
        if not isinstance(rec["aliases"], list):
            raise RecordError(f"{aliases_path}:{lineno}: field 'aliases' must be a list")
        entities.setdefault(e)
        bucket = aliases.setdefault(e, [])
        for a in rec["aliases"]:
            if a not in bucket:
                bucket.append(str(a))

    return KGSubset(
        entities=tuple(entities),
        relations=tuple(relations),
        attributes=tuple(attributes),
        relation_triples=tuple(rel_triples),
        attribute_triples=tuple(attr_triples),
        aliases={k: tuple(v) for k, v in aliases.items()},
    )


def dump_kg_subset(kg: KGSubset, relations_path, attributes_path, aliases_path) -> None:
    def write(path, rows):
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    write(relations_path, ({"h": h, "r": r, "t": t} for h, r, t in kg.relation_triples))
    write(attributes_path, ({"e": e, "a": a, "v": v} for e, a, v in kg.attribute_triples))
    write(aliases_path, ({"e": e, "aliases": list(al)} for e, al in kg.aliases.items()))


def filter_test_leakage(kg: KGSubset, test_split: DatasetSplit) -> KGSubset:
    """Drop KG relation triples whose endpoints co-occur as linked entities of a test document.

    Every entity pair of a test document is a pair to be labelled, so the
    filter does not depend on (possibly hidden) gold labels.
    """
    banned = set()
    for doc in test_split:
        linked = [e.kg_link for e in doc.entities if e.kg_link is not None]
        for a in linked:
            for b in linked:
                if a != b:
                    banned.add((a, b))
    kept = tuple(tr for tr in kg.relation_triples if (tr[0], tr[2]) not in banned)
    dropped = len(kg.relation_triples) - len(kept)
    if dropped:
        logger.info("leakage filter dropped %d relation triples", dropped)
    return replace(kg, relation_triples=kept)


# -- coreference triples -----------------------------------------------------

def derive_alias_corefs(doc: Document, kg: KGSubset) -> list[CoreferenceTriple]:
    """Coreference triples between distinct-alias mentions of the same linked entity."""
    out = []
    for ent in doc.entities:
        if ent.kg_link is None or ent.kg_link not in kg.aliases:
            continue
        alias_set = {normalize_surface(a) for a in kg.aliases[ent.kg_link]}
        matching = [m for m in ent.mentions if normalize_surface(m.surface) in alias_set]
        for i in range(len(matching)):
            for j in range(i + 1, len(matching)):
                a, b = matching[i], matching[j]
                if normalize_surface(a.surface) == normalize_surface(b.surface):
                    continue
                out.append(CoreferenceTriple(doc.doc_id, a, b, 1.0, "alias"))
    return out


def _resolve_local_span(doc: Document, raw, lineno: int, path) -> Mention:
    try:
        sid, s, e = (int(x) for x in raw)
    except (TypeError, ValueError):
        raise RecordError(f"{path}:{lineno}: span must be [sent_idx, start, end]") from None
    if not 0 <= sid < len(doc.sentence_bounds):
        raise SpanError(f"{path}:{lineno}: sentence {sid} out of range in {doc.doc_id!r}")
    ss, se = doc.sentence_bounds[sid]
    if not (0 <= s < e <= se - ss):
        raise SpanError(f"{path}:{lineno}: span [{s}, {e}) outside sentence {sid} of {doc.doc_id!r}")
    span = (ss + s, ss + e)
    existing = doc.mention_at(span)
    if existing is not None:
        return existing
    return Mention(sid, span, " ".join(doc.tokens[span[0]:span[1]]))


def load_coref_predictions(path, split: DatasetSplit) -> list[CoreferenceTriple]:
    """Read resolver output; spans are sentence-local ``[sent_idx, start, end]``.

    Probabilities outside [0, 1] are clamped with a warning. Spans that match
    no known mention become free :class:`Mention` values; use
    :func:`attach_free_mentions` to record them on the documents.
    """
    docs = split.by_id()
    out = []
    for lineno, rec in _read_jsonl(path, ("doc_id", "s", "t", "p")):
        doc = docs.get(str(rec["doc_id"]))
        if doc is None:
            raise DocumentReferenceError(f"{path}:{lineno}: unknown doc_id {rec['doc_id']!r}")
        m_s = _resolve_local_span(doc, rec["s"], lineno, path)
        m_t = _resolve_local_span(doc, rec["t"], lineno, path)
        if m_s.span == m_t.span:
            raise RecordError(f"{path}:{lineno}: triple links a span to itself")
        p = float(rec["p"])
        if not 0.0 <= p <= 1.0:
            clamped = min(1.0, max(0.0, p))
            logger.warning("%s:%d: coreference probability %g clamped to %g", path, lineno, p, clamped)
            p = clamped
        out.append(CoreferenceTriple(doc.doc_id, m_s, m_t, p, "resolver"))
    return out


def attach_free_mentions(split: DatasetSplit, triples: Iterable[CoreferenceTriple]) -> DatasetSplit:
    extra: dict[str, dict[Span, Mention]] = {}
    docs = split.by_id()
    for tr in triples:
        doc = docs[tr.doc_id]
        for m in (tr.m_s, tr.m_t):
            if doc.mention_at(m.span) is None:
                extra.setdefault(tr.doc_id, {})[m.span] = m
    new_docs = []
    for d in split:
        if d.doc_id in extra:
            ms = sorted(extra[d.doc_id].values(), key=lambda m: m.span)
            d = replace(d, extra_mentions=d.extra_mentions + tuple(ms))
        new_docs.append(d)
    return DatasetSplit(split.name, tuple(new_docs))


def dump_coref_predictions(triples: Iterable[CoreferenceTriple], split: DatasetSplit, path) -> None:
    docs = split.by_id()

    def local(doc, m):
        ss = doc.sentence_bounds[m.sent_idx][0]
        return [m.sent_idx, m.start - ss, m.end - ss]

    with open(path, "w", encoding="utf-8") as fh:
        for tr in triples:
            doc = docs[tr.doc_id]
            rec = {"doc_id": tr.doc_id, "s": local(doc, tr.m_s), "t": local(doc, tr.m_t), "p": tr.p_cr}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_entity_links(path, split: DatasetSplit) -> DatasetSplit:
    """Apply entity-linker output ``{"doc_id", "entity", "kg_id"}`` to a split."""
    links: dict[str, dict[int, str]] = {}
    docs = split.by_id()
    for lineno, rec in _read_jsonl(path, ("doc_id", "entity", "kg_id")):
        doc = docs.get(str(rec["doc_id"]))
        if doc is None:
            raise DocumentReferenceError(f"{path}:{lineno}: unknown doc_id {rec['doc_id']!r}")
        k = int(rec["entity"])
        if not 0 <= k < len(doc.entities):
            raise RecordError(f"{path}:{lineno}: entity index {k} out of range")
        links.setdefault(doc.doc_id, {})[k] = str(rec["kg_id"])
    new_docs = []
    for d in split:
        if d.doc_id in links:
            ents = tuple(replace(e, kg_link=links[d.doc_id].get(e.entity_id, e.kg_link)) for e in d.entities)
            d = replace(d, entities=ents)
        new_docs.append(d)
    return DatasetSplit(split.name, tuple(new_docs))


# -- synthetic corpus --------------------------------------------------------

KG_RELATION = "kg_same_cat"
NAME_POOL = 12
PRONOUNS = ("it", "he", "she", "they")
ENTITY_TYPES = ("PER", "ORG", "LOC")


class SynthCorpus(NamedTuple):
    train: DatasetSplit
    validation: DatasetSplit
    test: DatasetSplit
    kg: KGSubset
    corefs: tuple[CoreferenceTriple, ...]
    relation_vocab: tuple[str, ...]

    @property
    def splits(self) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
        return (self.train, self.validation, self.test)

    def kg_relations(self) -> tuple[str, ...]:
        """Labels decidable only through the KG."""
        return (KG_RELATION,)


def corpus_vocabulary(splits: Iterable[Iterable[Document]], kg: Optional[KGSubset] = None) -> list[str]:
    """Sorted tokens of the documents plus the words of the KG attribute triples."""
    vocab = {t for split in splits for d in split for t in d.tokens}
    if kg is not None:
        vocab.update(t for _, a, v in kg.attribute_triples for t in f"{a} {v}".split())
        vocab.update(kg.attributes)
    return sorted(vocab)


def split_sizes(n_docs: int) -> tuple[int, int, int]:
    n_val = n_docs // 10
    n_test = n_docs // 10
    return n_docs - n_val - n_test, n_val, n_test


def synth_corpus(seed: int, n_docs: int, vocab_size: int = 40, n_relations: int = 2,
                 kg_size: int = 150, n_categories: int = 3) -> SynthCorpus:
    """Generate a deterministic toy corpus with a KG-only relation label.

    Label ``kg_same_cat`` holds for an ordered pair iff both entities share the
    KG attribute ``category``. Nothing in the text reveals the category: it is
    drawn from its own random stream, so the documents are identical for every
    category assignment, and surface names come from a small pool shared by
    entities of every category (distinct within a document). KG entities are
    partitioned across splits. Labels ``co_k`` hold iff the sentence
    ``<head> trig<k> <tail> .`` occurs in the document.
    """
    if min(seed + 1, n_docs, vocab_size, n_relations, kg_size, n_categories) <= 0:
        raise ValueError("synth_corpus parameters must be positive")
    rng = random.Random(seed)
    kg_rng = random.Random(f"kg-{seed}")  # categories and KG relations never touch the text stream
    relation_vocab = (KG_RELATION,) + tuple(f"co_{k}" for k in range(1, n_relations))
    fillers = [f"w{k}" for k in range(vocab_size)]

    # KG: names, aliases, categories, two attributes and random relation triples
    kg_ids = [f"Q{k}" for k in range(kg_size)]
    category = {q: kg_rng.randrange(n_categories) for q in kg_ids}
    etype = {q: rng.choice(ENTITY_TYPES) for q in kg_ids}
    n_names = min(kg_size, NAME_POOL)
    name = {q: f"ent{k % n_names}" for k, q in enumerate(kg_ids)}
    alias = {q: f"alt{k % n_names}" for k, q in enumerate(kg_ids)}
    attr_triples = []
    for q in kg_ids:
        attrs = [("category", f"cat{category[q]}"), ("label", name[q])]
        kg_rng.shuffle(attrs)
        attr_triples.extend((q, a, v) for a, v in attrs)
    rel_triples = []
    seen_edges = set()
    # relation triples only join entities of one category, so graph neighbours agree on it
    by_cat: dict[int, list[str]] = {}
    for q in kg_ids:
        by_cat.setdefault(category[q], []).append(q)
    for _ in range(kg_size):
        members = by_cat[category[kg_rng.choice(kg_ids)]]
        if len(members) < 2:
            continue
        h, t = kg_rng.sample(members, 2)
        r = f"kgrel{kg_rng.randrange(2)}"
        if (h, r, t) not in seen_edges:
            seen_edges.add((h, r, t))
            rel_triples.append((h, r, t))
    kg = KGSubset(
        entities=tuple(kg_ids),
        relations=tuple(sorted({r for _, r, _ in rel_triples})),
        attributes=("category", "label"),
        relation_triples=tuple(rel_triples),
        attribute_triples=tuple(attr_triples),
        aliases={q: (name[q], alias[q]) for q in kg_ids},
    )

    sizes = split_sizes(n_docs)
    shuffled = kg_ids[:]
    rng.shuffle(shuffled)
    cut1 = round(kg_size * 0.8)
    cut2 = cut1 + (kg_size - cut1) // 2
    pools = (shuffled[:cut1], shuffled[cut1:cut2], shuffled[cut2:])
    if any(len(p) < 2 for p in pools):
        raise ValueError("kg_size too small to give every split at least two entities")
    if any(len({name[q] for q in p}) < 2 for p in pools):
        raise ValueError("every split needs entities with at least two distinct names")

    def fill(lo, hi):
        return [rng.choice(fillers) for _ in range(rng.randint(lo, hi))]

    splits = []
    corefs: list[CoreferenceTriple] = []
    doc_counter = 0
    for split_name, size, pool in zip(SPLIT_NAMES, sizes, pools):
        docs = []
        for _ in range(size):
            doc_id = f"synth{seed}_{doc_counter:05d}"
            doc_counter += 1
            distinct = {name[q]: q for q in pool}
            n_ent = rng.randint(2, min(6, len(distinct)))
            ents = []
            for q in rng.sample(pool, len(pool)):
                if len(ents) < n_ent and name[q] not in {name[e] for e in ents}:
                    ents.append(q)
            extra = [rng.randint(0, 3) for _ in ents]

            # sentences hold (token, owner, kind) where owner is an entity index
            intro = []
            for k, q in enumerate(ents):
                intro.append([(name[q], k, "name")] + [(w, None, None) for w in fill(1, 3)] + [(".", None, None)])
            rng.shuffle(intro)
            body = []
            facts = set()
            if n_relations > 1:
                # each entity joins at most one trigger sentence and triggers differ within a
                # document, so the label stays decidable from pooled entity representations
                free_rel = list(range(1, n_relations))
                used: set[int] = set()
                for _ in range(rng.randint(1, 2)):
                    cands = [(h, t) for h in range(n_ent) for t in range(n_ent)
                             if h != t and extra[h] > 0 and extra[t] > 0 and not {h, t} & used]
                    if not cands or not free_rel:
                        break
                    h, t = rng.choice(cands)
                    r = free_rel.pop(rng.randrange(len(free_rel)))
                    used.update((h, t))
                    extra[h] -= 1
                    extra[t] -= 1
                    hs = rng.choice((name[ents[h]], alias[ents[h]]))
                    ts = rng.choice((name[ents[t]], alias[ents[t]]))
                    sent = [(hs, h, "name"), (f"trig{r}", None, None), (ts, t, "name"), (".", None, None)]
                    body.append(sent)
                    facts.add((h, t, f"co_{r}"))
            for k, q in enumerate(ents):
                for _ in range(extra[k]):
                    if rng.random() < 0.5:
                        tok = (rng.choice(PRONOUNS), k, "pronoun")
                    else:
                        tok = (alias[q], k, "name")
                    body.append([tok] + [(w, None, None) for w in fill(1, 3)] + [(".", None, None)])
            rng.shuffle(body)

            tokens: list[str] = []
            bounds: list[Span] = []
            mentions: list[list[tuple[Mention, str]]] = [[] for _ in ents]
            for sid, sent in enumerate(intro + body):
                start = len(tokens)
                for tok, owner, kind in sent:
                    if owner is not None:
                        p = len(tokens)
                        mentions[owner].append((Mention(sid, (p, p + 1), tok), kind))
                    tokens.append(tok)
                bounds.append((start, len(tokens)))

            entities = tuple(
                Entity(k, etype[q], tuple(m for m, _ in mentions[k]), q) for k, q in enumerate(ents)
            )
            for h in range(n_ent):
                for t in range(n_ent):
                    if h != t and category[ents[h]] == category[ents[t]]:
                        facts.add((h, t, KG_RELATION))
            doc = Document(doc_id, tuple(tokens), tuple(bounds), entities,
                           tuple(RelationFact(h, t, r) for h, t, r in sorted(facts)))
            for k in range(n_ent):
                antecedent = mentions[k][0][0]
                for m, kind in mentions[k][1:]:
                    if kind == "pronoun":
                        p = round(rng.uniform(0.75, 0.99), 4)
                        corefs.append(CoreferenceTriple(doc_id, m, antecedent, p, "resolver"))
            docs.append(doc)
        splits.append(DatasetSplit(split_name, tuple(docs)))

    return SynthCorpus(splits[0], splits[1], splits[2], kg, tuple(corefs), relation_vocab)


def write_corpus(corpus: SynthCorpus, out_dir) -> dict[str, Path]:
    """Write a synthetic corpus in the on-disk interchange formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "relation_vocab": out / "rel_vocab.txt",
        "kg_relations": out / "kg_relations.jsonl",
        "kg_attributes": out / "kg_attributes.jsonl",
        "kg_aliases": out / "kg_aliases.jsonl",
    }
    write_relation_vocab(corpus.relation_vocab, paths["relation_vocab"])
    dump_kg_subset(corpus.kg, paths["kg_relations"], paths["kg_attributes"], paths["kg_aliases"])
    for split in corpus.splits:
        paths[split.name] = out / f"{split.name}.json"
        dump_docred(split, paths[split.name])
        ids = {d.doc_id for d in split}
        paths[f"coref_{split.name}"] = out / f"coref_{split.name}.jsonl"
        dump_coref_predictions([c for c in corpus.corefs if c.doc_id in ids], split,
                               paths[f"coref_{split.name}"])
    return paths
