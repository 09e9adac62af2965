from pathlib import Path

import pytest
import torch

from kire.datamodel import Config, Document, Entity, Mention, RelationFact

FIXTURES = Path(__file__).parent / "fixtures"

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_config(**kw) -> Config:
    """Small dimensions that keep forward passes cheap."""
    base = dict(d_word=8, d_char=8, d_type=4, d_cluster=4, d_token=8, d_mlp=6, d_dist=3, beta=4,
                d_auto=5, n_max=3, n_kernel=6, d_kernel=3, n_layer=2, n_head=2, d_rgat=8, d_ent=8,
                d_rel=3, n_agg=1, n_attn_heads=2, base_epochs=1, kire_epochs=1, ae_epochs=1)
    base.update(kw)
    return Config(**base)


def make_doc(sentences, entities, facts=(), doc_id="doc") -> Document:
    """``sentences``: token lists; ``entities``: lists of (sent_idx, local_start, local_end) plus type/link."""
    tokens, bounds = [], []
    for sent in sentences:
        bounds.append((len(tokens), len(tokens) + len(sent)))
        tokens.extend(sent)
    ents = []
    for k, item in enumerate(entities):
        spans, etype, link = item[0], item[1] if len(item) > 1 else "PER", item[2] if len(item) > 2 else None
        mentions = []
        for sid, s, e in spans:
            off = bounds[sid][0]
            mentions.append(Mention(sid, (off + s, off + e), " ".join(tokens[off + s: off + e])))
        ents.append(Entity(k, etype, tuple(mentions), link))
    return Document(doc_id, tuple(tokens), tuple(bounds), tuple(ents),
                    tuple(RelationFact(h, t, r) for h, t, r in facts))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def double_precision():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def max_rel_error(loss_fn, tensors, step: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative gap between autograd and central finite differences over ``tensors``.

    ``loss_fn()`` must return a float64 scalar computed from ``tensors``.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for t in tensors:
            analytic = t.grad.detach().clone().reshape(-1)
            flat = t.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                a = analytic[i].item()
                worst = max(worst, abs(a - numeric) / max(floor, abs(a), abs(numeric)))
    return worst
