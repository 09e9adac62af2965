"""Two-stage multi-task training, checkpoints and the parameter-count audit."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from kire.datamodel import Config, CoreferenceTriple, KGSubset
from kire.embeddings import EmbeddingTable
from kire.errors import DataError, DivergenceError
from kire.evaluation import f1, gold_facts, select_threshold
from kire.ingestion import DatasetSplit
from kire.kg import AttrAutoEncoder, attribute_codes, pretrain_autoencoder
from kire.model import PARAMETER_GROUPS, KIREModel, PreparedDoc, prepare_split

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "kire-checkpoint-v1"


def total_loss(l_re, l_cr, l_kg, config: Config):
    return config.alpha1 * l_re + config.alpha2 * l_cr + config.alpha3 * l_kg


@dataclass
class TrainState:
    stage: str = "base"
    epoch: int = 0
    seed: int = 0
    history: list[dict] = field(default_factory=list)
    best_f1: float = -1.0
    threshold: float = 0.5

    def advance(self, stage: str) -> None:
        order = ("base", "kire")
        if order.index(stage) < order.index(self.stage):
            raise ValueError(f"stage transition {self.stage} -> {stage} is not allowed")
        self.stage = stage
        self.epoch = 0


@dataclass
class TrainResult:
    model: KIREModel
    state: TrainState
    autoencoder: Optional[AttrAutoEncoder] = None


def seed_everything(config: Config) -> None:
    torch.manual_seed(config.seed)
    torch.set_num_threads(config.num_threads)


# -- prediction --------------------------------------------------------------

def predict(model: KIREModel, docs: Sequence[PreparedDoc], inject: bool = True) -> dict:
    """Scores for every ordered pair and relation: ``doc_id -> [(h, t, r, score)]``."""
    out = {}
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for pd in docs:
            # float64 keeps saturated scores distinct for threshold selection
            probs = torch.sigmoid(model(pd, inject=inject).logits.double()).tolist()
            out[pd.doc.doc_id] = [(h, t, r, float(p)) for (h, t), row in zip(pd.pairs, probs)
                                  for r, p in zip(model.relation_vocab, row)]
    model.train(was_training)
    return out


def evaluate_docs(model: KIREModel, docs: Sequence[PreparedDoc], inject: bool,
                  theta: Optional[float] = None) -> tuple[float, float]:
    """(F1, theta); theta is selected on ``docs`` when not given."""
    preds = predict(model, docs, inject)
    gold = gold_facts(pd.doc for pd in docs)
    if theta is None:
        theta = select_threshold(preds, gold)
    return f1(preds, gold, theta)[2], theta


# -- training loop -----------------------------------------------------------

def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    g = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    return torch.randperm(n, generator=g).tolist()


def run_stage(model: KIREModel, stage: str, train_docs: Sequence[PreparedDoc],
              val_docs: Sequence[PreparedDoc], config: Config, epochs: int, state: TrainState,
              on_epoch: Optional[Callable[[dict, KIREModel], None]] = None, restore_best: bool = True) -> dict:
    """Train one stage; with ``restore_best`` leave the best-on-validation parameters in ``model``.

    Returns the best state dict. ``on_epoch`` is called with each history
    record and the current model.
    """
    inject = stage == "kire"
    if inject:
        params = []
        for g in PARAMETER_GROUPS:
            frozen = g == "base" and config.freeze_base
            for p in model.group_parameters(g):
                p.requires_grad_(not frozen)
                if not frozen:
                    params.append(p)
    else:
        params = model.group_parameters("base")
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    best_sd = copy.deepcopy(model.state_dict())
    best_f1 = -1.0
    state.advance(stage)
    model.train()
    for epoch in range(epochs):
        order = epoch_order(len(train_docs), config.seed, epoch)
        sums = {"l_re": 0.0, "l_cr": 0.0, "l_kg": 0.0, "loss": 0.0}
        n_batches = 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_docs[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            loss = 0.0
            parts = {"l_re": 0.0, "l_cr": 0.0, "l_kg": 0.0}
            for pd in batch:
                out = model(pd, inject=inject)
                if inject:
                    doc_loss = total_loss(out.l_re, out.l_cr, out.l_kg, config)
                else:
                    doc_loss = config.alpha1 * out.l_re
                loss = loss + doc_loss / len(batch)
                for k in parts:
                    parts[k] += getattr(out, k).item() / len(batch)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss in stage {stage}, epoch {epoch}, batch {b}",
                                      batch_id=f"{stage}:{epoch}:{b}")
            loss.backward()
            if config.grad_clip > 0:
                nn.utils.clip_grad_norm_([p for p in params if p.grad is not None], config.grad_clip)
            opt.step()
            for k, v in parts.items():
                sums[k] += v
            sums["loss"] += loss.item()
            n_batches += 1
        val_f1, theta = evaluate_docs(model, val_docs, inject) if val_docs else (0.0, 0.5)
        record = {"stage": stage, "epoch": epoch + 1, "val_f1": val_f1, "theta": theta}
        record.update({k: v / max(n_batches, 1) for k, v in sums.items()})
        state.history.append(record)
        state.epoch = epoch + 1
        logger.info("%s epoch %d loss %.4f val F1 %.4f", stage, epoch + 1, record["loss"], val_f1)
        if on_epoch is not None:
            on_epoch(record, model)
        if val_f1 >= best_f1:  # ties go to the later, longer-trained epoch
            best_f1 = val_f1
            best_sd = copy.deepcopy(model.state_dict())
    if restore_best:
        model.load_state_dict(best_sd)
    for p in model.parameters():
        p.requires_grad_(True)
    state.best_f1 = best_f1
    return best_sd


def build_model(config: Config, relation_vocab: Sequence[str], splits: Iterable[DatasetSplit],
                kg: Optional[KGSubset], words: EmbeddingTable, chars: EmbeddingTable,
                autoencoder: Optional[AttrAutoEncoder] = None) -> tuple[KIREModel, Optional[AttrAutoEncoder]]:
    seed_everything(config)
    types = sorted({e.entity_type for s in splits for d in s for e in d.entities})
    codes = None
    if kg is not None and config.use_kg and config.fusion_strategy != "none":
        if autoencoder is None:
            if not kg.attribute_triples:
                raise DataError("KG subset has no attribute triples to pretrain the autoencoder")
            autoencoder = pretrain_autoencoder(kg.attribute_triples, words, chars, config.d_auto,
                                               config.ae_epochs, config.seed, config.ae_learning_rate).model
        codes = attribute_codes(kg, autoencoder, words, chars, config.n_max)
    seed_everything(config)
    return KIREModel(config, relation_vocab, types, kg, codes), autoencoder


def train(train_split: DatasetSplit, val_split: DatasetSplit, kg: Optional[KGSubset],
          corefs: Iterable[CoreferenceTriple], config: Config, words: EmbeddingTable, chars: EmbeddingTable,
          relation_vocab: Sequence[str], autoencoder: Optional[AttrAutoEncoder] = None,
          stages: Sequence[str] = ("base", "kire"),
          on_epoch: Optional[Callable[[dict, KIREModel], None]] = None) -> TrainResult:
    """Stage ``base`` fits the plain RE model on L_re; stage ``kire`` continues from the
    trained base parameters and fits the weighted multi-task loss through the injection
    layer. The last stage run keeps its best-on-validation parameters."""
    corefs = list(corefs)
    model, autoencoder = build_model(config, relation_vocab, (train_split, val_split), kg, words, chars,
                                     autoencoder)
    train_docs = prepare_split(train_split, relation_vocab, words, chars, model.features, kg, corefs)
    val_docs = prepare_split(val_split, relation_vocab, words, chars, model.features, kg, corefs)
    state = TrainState(seed=config.seed)
    if "base" in stages:
        # a following kire stage fine-tunes the fully trained base model; selection happens there
        run_stage(model, "base", train_docs, val_docs, config, config.base_epochs, state, on_epoch,
                  restore_best="kire" not in stages)
    if "kire" in stages:
        run_stage(model, "kire", train_docs, val_docs, config, config.kire_epochs, state, on_epoch)
    inject = state.stage == "kire"
    _, state.threshold = evaluate_docs(model, val_docs, inject) if val_docs else (0.0, 0.5)
    model.predictor.threshold = state.threshold
    return TrainResult(model, state, autoencoder)


# -- checkpoints -------------------------------------------------------------

def _group_tensors(model: nn.Module, groups: dict[str, list[nn.Module]]) -> dict[str, list[tuple[str, torch.Tensor]]]:
    """Partition the state dict by parameter group; tensors owned by no group go to ``buffers``."""
    names = {id(m): n for n, m in model.named_modules()}
    # the root module owns every tensor, so its prefix is empty
    prefixes = {g: tuple(names[id(m)] + "." if names[id(m)] else "" for m in mods) for g, mods in groups.items()}
    out: dict[str, list[tuple[str, torch.Tensor]]] = {g: [] for g in groups}
    out["buffers"] = []
    for name, t in model.state_dict().items():
        gname = next((g for g, pre in prefixes.items() if name.startswith(pre)), "buffers")
        out[gname].append((name, t))
    return {g: v for g, v in out.items() if v}


def save_checkpoint(model: nn.Module, directory, config: Optional[Config] = None, stage: str = "",
                    history: Optional[list] = None, extra: Optional[dict] = None,
                    groups: Optional[dict[str, list[nn.Module]]] = None) -> Path:
    """Write ``manifest.json`` plus one little-endian float32 blob per parameter group."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if groups is None:
        groups = model.groups() if hasattr(model, "groups") else {"all": [model]}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict() if config is not None else None,
        "stage": stage,
        "history": history or [],
        "extra": extra or {},
        "groups": [],
    }
    for gname, tensors in _group_tensors(model, groups).items():
        fname = f"{gname}.f32"
        offset = 0
        entries = []
        chunks = []
        for name, t in tensors:
            arr = t.detach().cpu().to(torch.float32).numpy().astype("<f4", copy=False)
            raw = np.ascontiguousarray(arr).tobytes()
            entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        (directory / fname).write_bytes(b"".join(chunks))
        manifest["groups"].append({"name": gname, "file": fname, "tensors": entries})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def read_manifest(directory) -> dict:
    manifest = json.loads((Path(directory) / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{directory}: not a checkpoint directory")
    return manifest


def load_state(directory) -> dict[str, torch.Tensor]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    sd = {}
    for group in manifest["groups"]:
        blob = (directory / group["file"]).read_bytes()
        for ent in group["tensors"]:
            raw = blob[ent["offset"]: ent["offset"] + ent["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f4").reshape(ent["shape"])
            sd[ent["name"]] = torch.from_numpy(arr.copy())
    return sd


def load_checkpoint(model: nn.Module, directory) -> dict:
    sd = load_state(directory)
    own = model.state_dict()
    missing = set(own) - set(sd)
    if missing:
        raise DataError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
    model.load_state_dict({k: v.to(own[k].dtype) for k, v in sd.items()})
    return read_manifest(directory)


# -- parameter-count audit ---------------------------------------------------

def _count(modules) -> tuple[int, int]:
    """(weight entries, bias entries) of a set of modules; biases are 1-D tensors named *bias*."""
    w = b = 0
    for m in modules:
        for name, p in m.named_parameters():
            if "bias" in name.rsplit(".", 1)[-1]:
                b += p.numel()
            else:
                w += p.numel()
    return w, b


def formula_values(config: Config, n_token: int = 0, n_align: int = 0) -> dict[str, int]:
    c = config
    coref = c.d_mlp * (2 * c.d_token + c.d_dist) + 2 * c.d_token
    attr = c.d_auto * c.n_max * c.n_kernel * (c.d_kernel ** 2 + 1)
    rgat = 2 * (c.n_layer - 1) * c.n_head * c.d_rgat ** 2 + c.d_rgat * c.d_ent
    attn = 4 * c.d_token ** 2 + 4 * c.d_ent ** 2
    fusion = c.d_out * (n_token + n_align) + n_token
    recon = 2 * n_align * (c.d_out + 1)
    total_attr = c.d_auto * c.n_max * (c.d_kernel ** 2 + 1)
    return {
        "coref_mlp": coref,
        "attribute_cnn": attr,
        "rgat": rgat,
        "aggregator_attention": attn,
        "aggregator_fusion": fusion,
        "aggregator_reconstruction": recon,
        "reconciliation_total": c.n_agg * (attn + fusion + recon),
        "kire_total": coref + total_attr + rgat + c.n_agg * (attn + fusion + recon),
    }


def count_parameters(model: KIREModel, n_token: int = 0, n_align: int = 0) -> dict:
    """Implemented counts per module, the reference formulas at the current config, and the gaps.

    ``n_token`` / ``n_align`` are per-document quantities used only by the
    fusion/reconstruction formulas.
    """
    c = model.config
    formulas = formula_values(c, n_token, n_align)
    modules = {}
    for g, mods in model.groups().items():
        w, b = _count(mods)
        modules[g] = {"weights": w, "biases": b}

    checks = []

    def check(name, implemented, convention, extra=None):
        entry = {"name": name, "formula": formulas[name], "implemented": implemented,
                 "match": implemented == formulas[name], "convention": convention}
        if extra:
            entry["not_in_formula"] = extra
        checks.append(entry)

    checks_extra_student = {"biases": model.student.bias_count(), "distance vectors": model.bins.table.weight.numel()}
    check("coref_mlp", model.student.weight_count(),
          "hidden layer W1 of shape d_mlp x (2 d_token + d_dist) plus a length-2 d_token pair read-out; "
          "hidden units are sum-pooled without parameters",
          checks_extra_student)

    conv = model.attr_cnn.conv
    extra_attr = {"conv bias": conv.bias.numel()}
    proj_w, proj_b = _count([model.attr_cnn.proj])
    if proj_w:
        extra_attr["projection n_kernel -> d_ent"] = proj_w + proj_b
    check("attribute_cnn", conv.weight.numel(),
          "Conv1d weight n_kernel x d_auto x d_kernel sliding along the attribute axis", extra_attr)

    check("rgat", model.rgat.weight_count(),
          "layer 0 shares one d_rgat x d_ent input map across heads; later layers hold one square "
          "W_in per head", model.rgat.other_count())

    if isinstance(model.reconciler, nn.Module) and hasattr(model.reconciler, "aggregators"):
        agg = model.reconciler.aggregators[0]
        check("aggregator_attention", agg.attention_weight_count(),
              "query/key/value/output maps of the token and entity self-attention, per aggregator",
              {"attention biases": agg.attention_bias_count()})
        fw, fb = _count([agg.fuse_w, agg.fuse_e])
        check("aggregator_fusion", fw + agg.fuse_b.numel(),
              "token-independent W~_w, W~_e, b~ shared by all tokens",
              None)
        rw, rb = _count([agg.rec_w, agg.rec_e])
        check("aggregator_reconstruction", rw + rb, "W_w, b_w, W_e, b_e shared by all tokens", None)

    discrepancies = [
        f"{e['name']}: formula {e['formula']} vs implemented {e['implemented']} "
        f"(difference {e['implemented'] - e['formula']:+d})"
        for e in checks if not e["match"]
    ]
    discrepancies.append(
        "kire_total: the reference total uses d_auto*n_max*(d_kernel^2+1) for the attribute term, "
        "dropping the n_kernel factor present in the per-module attribute formula")
    discrepancies.append(
        "coref_mlp: a standard two-layer MLP with a scalar output would count "
        f"{c.d_mlp * (2 * c.d_token + c.d_dist) + c.d_mlp} weights (d_mlp instead of 2 d_token in the last term)")
    all_w, all_b = _count([model])
    return {
        "config": {k: getattr(c, k) for k in ("d_mlp", "d_token", "d_dist", "d_auto", "n_max", "n_kernel",
                                              "d_kernel", "n_layer", "n_head", "d_rgat", "d_ent", "n_agg",
                                              "d_out")},
        "n_token": n_token,
        "n_align": n_align,
        "formulas": formulas,
        "modules": modules,
        "checks": checks,
        "discrepancies": discrepancies,
        "total_implemented": {"weights": all_w, "biases": all_b},
    }
