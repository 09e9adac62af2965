"""Command-line entry point: ``kire <command> [--config FILE] [--key value ...]``.

Configuration is a flat YAML mapping whose keys are the model/training keys of
:class:`kire.datamodel.Config` plus the run keys in ``RUN_KEYS``; any key may
be overridden on the command line as ``--key value`` (dashes and underscores
are interchangeable). Work-directory layout::

    <work_dir>/data/                  datasets, KG subset, corefs, embeddings
    <work_dir>/checkpoints/<run_id>/  model/ and autoencoder/ checkpoints
    <work_dir>/reports/<run_id>/      config, training log, metrics, predictions

``run_id`` hashes the resolved model/training config, seed included. Outputs
are staged and moved into place only when a command succeeds. Failures print
one JSON line on stderr and exit with 2 (config), 3 (data), 4 (divergence) or
1 (anything else).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
import uuid
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch
import yaml

from kire.datamodel import Config, validate_document
from kire.embeddings import EmbeddingTable, load_embeddings, random_tables
from kire.errors import ConfigError, DataError, KIREError
from kire.evaluation import metric_report, positives
from kire.ingestion import (
    DatasetSplit,
    attach_free_mentions,
    corpus_vocabulary,
    derive_alias_corefs,
    dump_coref_predictions,
    dump_docred,
    dump_kg_subset,
    filter_test_leakage,
    load_coref_predictions,
    load_docred,
    load_entity_links,
    load_kg_subset,
    load_relation_vocab,
    synth_corpus,
    write_corpus,
    write_relation_vocab,
)
from kire.kg import AttrAutoEncoder, pretrain_autoencoder
from kire.model import KIREModel, prepare_split
from kire.training import (
    count_parameters,
    load_checkpoint,
    predict,
    read_manifest,
    save_checkpoint,
    train,
)

logger = logging.getLogger("kire")

SPLITS = ("train", "validation", "test")
COMMANDS = ("prepare", "pretrain-ae", "train", "evaluate", "predict", "param-count", "synth", "multi-seed")

# run keys beyond Config: name -> default (the default's type drives parsing; None means a path)
RUN_KEYS: dict[str, Any] = {
    "work_dir": "work",
    # raw inputs for `prepare`
    "train_file": None,
    "validation_file": None,
    "test_file": None,
    "entity_links": None,
    "coref_train": None,
    "coref_validation": None,
    "coref_test": None,
    # shared inputs; unset paths default to files under <work_dir>/data
    "relation_vocab": None,
    "kg_relations": None,
    "kg_attributes": None,
    "kg_aliases": None,
    "words": None,
    "chars": None,
    # synth
    "n_docs": 50,
    "n_relations": 2,
    "vocab_size": 40,
    "kg_size": 150,
    # predict / param-count / multi-seed
    "split": "test",
    "n_token": 0,
    "n_align": 0,
    "k": 5,
    "parallel": False,
}
CONFIG_KEYS = {f.name: f for f in dataclasses.fields(Config)}


# -- configuration -------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _coerce(key: str, value: Any) -> Any:
    if key in CONFIG_KEYS:
        default = CONFIG_KEYS[key].default
    elif key in RUN_KEYS:
        default = RUN_KEYS[key]
    else:
        raise ConfigError(f"unknown config key {key!r}")
    if default is None:
        return None if value is None else str(value)
    try:
        if isinstance(default, bool):
            return value if isinstance(value, bool) else _parse_bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
    return str(value)


def parse_overrides(tokens: list[str]) -> dict[str, Any]:
    """``['--key', 'value', '--other=v']`` -> ``{'key': 'value', 'other': 'v'}``."""
    out: dict[str, Any] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


@dataclasses.dataclass
class RunConfig:
    config: Config
    run: dict[str, Any]

    @property
    def work_dir(self) -> Path:
        return Path(self.run["work_dir"])

    @property
    def run_id(self) -> str:
        return run_id(self.config)

    def path(self, key: str, default: str) -> Path:
        value = self.run.get(key)
        return Path(value) if value else self.work_dir / "data" / default

    def resolved(self) -> dict[str, Any]:
        return {**self.config.to_dict(), **self.run}


def run_id(config: Config) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def resolve_config(config_file: Optional[str], overrides: dict[str, Any]) -> RunConfig:
    data: dict[str, Any] = {}
    if config_file:
        try:
            loaded = yaml.safe_load(Path(config_file).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_file}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{config_file}: invalid YAML ({' '.join(str(exc).split())})") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict) or any(isinstance(v, (dict, list)) for v in loaded.values()):
            raise ConfigError(f"{config_file}: expected a flat key-value mapping")
        data.update({str(k).replace("-", "_"): v for k, v in loaded.items()})
    data.update(overrides)
    values = {k: _coerce(k, v) for k, v in data.items()}
    model_keys = {k: v for k, v in values.items() if k in CONFIG_KEYS}
    try:
        config = Config(**model_keys)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    run = dict(RUN_KEYS)
    run.update({k: v for k, v in values.items() if k in RUN_KEYS})
    return RunConfig(config, run)


# -- staged outputs ------------------------------------------------------------

class Staging:
    """Collect outputs under a private directory; move them into place on success only."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.dir = self.root / f".staging-{uuid.uuid4().hex}"

    def path(self, relative: str | Path) -> Path:
        p = self.dir / relative
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def directory(self, relative: str | Path) -> Path:
        p = self.dir / relative
        p.mkdir(parents=True, exist_ok=True)
        return p

    def files(self) -> list[str]:
        return sorted(str(p.relative_to(self.dir)) for p in self.dir.rglob("*") if p.is_file())

    def __enter__(self):
        self.dir.mkdir(parents=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self._commit()
        finally:
            shutil.rmtree(self.dir, ignore_errors=True)
        return False

    def _commit(self) -> None:
        for src in sorted(p for p in self.dir.rglob("*") if p.is_file()):
            dst = self.root / src.relative_to(self.dir)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- shared loading ------------------------------------------------------------

def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def load_vocab(rc: RunConfig) -> tuple[str, ...]:
    return load_relation_vocab(_require(rc.path("relation_vocab", "rel_vocab.txt"), "relation vocabulary"))


def load_split(rc: RunConfig, name: str, vocab, required: bool = True) -> Optional[DatasetSplit]:
    path = rc.path(f"{name}_file", f"{name}.json")
    if not path.exists():
        if required:
            raise DataError(f"{name} split not found: {path}")
        return None
    split = load_docred(path, vocab, name)
    coref_path = rc.path(f"coref_{name}", f"coref_{name}.jsonl")
    if coref_path.exists():
        split = attach_free_mentions(split, load_coref_predictions(coref_path, split))
    return split


def load_corefs(rc: RunConfig, splits) -> list:
    out = []
    for split in splits:
        if split is None:
            continue
        path = rc.path(f"coref_{split.name}", f"coref_{split.name}.jsonl")
        if path.exists():
            out.extend(load_coref_predictions(path, split))
    return out


def load_kg(rc: RunConfig):
    paths = [rc.path("kg_relations", "kg_relations.jsonl"), rc.path("kg_attributes", "kg_attributes.jsonl"),
             rc.path("kg_aliases", "kg_aliases.jsonl")]
    if not any(p.exists() for p in paths):
        return None
    for p in paths:
        _require(p, "KG subset file")
    return load_kg_subset(*paths)


def load_tables(rc: RunConfig) -> tuple[EmbeddingTable, EmbeddingTable]:
    words = load_embeddings(_require(rc.path("words", "words.txt"), "word embeddings"), "word")
    chars = load_embeddings(_require(rc.path("chars", "chars.txt"), "char embeddings"), "char")
    for table in (words, chars):
        if table.dim is not None and table.dim != rc.config.d_word:
            raise ConfigError(f"{table.kind} embeddings have dimension {table.dim}, config d_word is {rc.config.d_word}")
    return words, chars


def load_dataset(rc: RunConfig, need_test: bool = False):
    vocab = load_vocab(rc)
    train_split = load_split(rc, "train", vocab)
    val_split = load_split(rc, "validation", vocab)
    test_split = load_split(rc, "test", vocab, required=need_test)
    return vocab, train_split, val_split, test_split


def checkpoint_dir(rc: RunConfig, kind: str) -> Path:
    return rc.work_dir / "checkpoints" / rc.run_id / kind


def report_dir(rc: RunConfig) -> Path:
    return Path("reports") / rc.run_id


def load_autoencoder(rc: RunConfig, dim: int) -> Optional[AttrAutoEncoder]:
    path = checkpoint_dir(rc, "autoencoder")
    if not (path / "manifest.json").exists():
        return None
    ae = AttrAutoEncoder(dim, rc.config.d_auto)
    load_checkpoint(ae, path)
    return ae


def load_model(rc: RunConfig, kg) -> tuple[KIREModel, dict]:
    path = checkpoint_dir(rc, "model")
    if not (path / "manifest.json").exists():
        raise DataError(f"no trained model for run {rc.run_id} (expected {path}); run `train` first")
    extra = read_manifest(path)["extra"]
    model = KIREModel(rc.config, extra["relation_vocab"], extra["entity_types"], kg)
    manifest = load_checkpoint(model, path)
    model.predictor.threshold = extra["threshold"]
    return model, manifest


# -- commands ------------------------------------------------------------------

def cmd_synth(rc: RunConfig, stage: Staging) -> dict:
    r = rc.run
    corpus = synth_corpus(rc.config.seed, r["n_docs"], r["vocab_size"], r["n_relations"], r["kg_size"])
    write_corpus(corpus, stage.directory("data"))
    words, chars = random_tables(corpus_vocabulary(corpus.splits, corpus.kg), rc.config.d_word, rc.config.seed)
    words.save(stage.path("data/words.txt"))
    chars.save(stage.path("data/chars.txt"))
    return {"command": "synth", "sizes": {s.name: len(s) for s in corpus.splits}, "files": stage.files()}


def cmd_prepare(rc: RunConfig, stage: Staging) -> dict:
    r = rc.run
    if not r["train_file"] or not r["validation_file"] or not r["relation_vocab"]:
        raise ConfigError("prepare needs train_file, validation_file and relation_vocab")
    vocab = load_relation_vocab(_require(Path(r["relation_vocab"]), "relation vocabulary"))
    splits, resolver = {}, {}
    for name in SPLITS:
        src = r[f"{name}_file"]
        if not src:
            continue
        split = load_docred(_require(Path(src), f"{name} split"), vocab, name)
        if r["entity_links"]:
            split = load_entity_links(_require(Path(r["entity_links"]), "entity links"), split)
        if r[f"coref_{name}"]:
            triples = load_coref_predictions(_require(Path(r[f"coref_{name}"]), "coreference output"), split)
            split = attach_free_mentions(split, triples)
            resolver[name] = triples
        problems = [(d.doc_id, v) for d in split for v in validate_document(d, vocab)]
        if problems:
            doc_id, v = problems[0]
            raise DataError(f"{name}: {len(problems)} invalid document(s); first: {doc_id}: {v}")
        splits[name] = split

    kg = None
    kg_inputs = [r["kg_relations"], r["kg_attributes"], r["kg_aliases"]]
    if any(kg_inputs):
        if not all(kg_inputs):
            raise ConfigError("kg_relations, kg_attributes and kg_aliases must be given together")
        kg = load_kg_subset(*(_require(Path(p), "KG subset file") for p in kg_inputs))
        if "test" in splits:
            kg = filter_test_leakage(kg, splits["test"])

    write_relation_vocab(vocab, stage.path("data/rel_vocab.txt"))
    counts = {}
    for name, split in splits.items():
        dump_docred(split, stage.path(f"data/{name}.json"))
        if name in resolver:
            dump_coref_predictions(resolver[name], split, stage.path(f"data/coref_{name}.jsonl"))
        counts[name] = {"documents": len(split), "instances": split.n_facts}
        if kg is not None:
            alias = [t for d in split for t in derive_alias_corefs(d, kg)]
            dump_coref_predictions(alias, split, stage.path(f"data/alias_coref_{name}.jsonl"))
            counts[name]["alias_corefs"] = len(alias)
    if kg is not None:
        dump_kg_subset(kg, stage.path("data/kg_relations.jsonl"), stage.path("data/kg_attributes.jsonl"),
                       stage.path("data/kg_aliases.jsonl"))
    report = {"command": "prepare", "relations": len(vocab), "splits": counts,
              "kg": None if kg is None else {"entities": len(kg.entities),
                                             "relation_triples": len(kg.relation_triples),
                                             "attribute_triples": len(kg.attribute_triples)}}
    write_json(stage.path("reports/prepare.json"), report)
    return report


def cmd_pretrain_ae(rc: RunConfig, stage: Staging) -> dict:
    kg = load_kg(rc)
    if kg is None:
        raise DataError("pretrain-ae needs a KG subset (kg_relations / kg_attributes / kg_aliases)")
    words, chars = load_tables(rc)
    c = rc.config
    run = pretrain_autoencoder(kg.attribute_triples, words, chars, c.d_auto, c.ae_epochs, c.seed, c.ae_learning_rate)
    out = stage.directory(Path("checkpoints") / rc.run_id / "autoencoder")
    save_checkpoint(run.model, out, c, "autoencoder", extra={"losses": run.losses},
                    groups={"autoencoder": [run.model]})
    return {"command": "pretrain-ae", "run_id": rc.run_id, "initial_loss": run.losses[0], "final_loss": run.losses[-1]}


def _train(rc: RunConfig) -> tuple[Any, dict]:
    vocab, train_split, val_split, _ = load_dataset(rc)
    kg = load_kg(rc)
    words, chars = load_tables(rc)
    corefs = load_corefs(rc, (train_split, val_split))
    ae = load_autoencoder(rc, words.dim or chars.dim)
    result = train(train_split, val_split, kg, corefs, rc.config, words, chars, vocab, autoencoder=ae)
    extra = {
        "relation_vocab": list(vocab),
        "entity_types": sorted(result.model.features.type_index),
        "threshold": result.state.threshold,
        "best_val_f1": result.state.best_f1,
    }
    return result, extra


def cmd_train(rc: RunConfig, stage: Staging) -> dict:
    result, extra = _train(rc)
    ck = Path("checkpoints") / rc.run_id
    save_checkpoint(result.model, stage.directory(ck / "model"), rc.config, result.state.stage,
                    result.state.history, extra)
    if result.autoencoder is not None and not (checkpoint_dir(rc, "autoencoder") / "manifest.json").exists():
        save_checkpoint(result.autoencoder, stage.directory(ck / "autoencoder"), rc.config, "autoencoder",
                        groups={"autoencoder": [result.autoencoder]})
    log = {"run_id": rc.run_id, "stage": result.state.stage, "threshold": result.state.threshold,
           "best_val_f1": result.state.best_f1, "history": result.state.history}
    write_json(stage.path(report_dir(rc) / "train_log.json"), log)
    return {"command": "train", "run_id": rc.run_id, "best_val_f1": result.state.best_f1,
            "threshold": result.state.threshold}


def _evaluate(rc: RunConfig) -> dict:
    vocab, train_split, val_split, test_split = load_dataset(rc)
    kg = load_kg(rc)
    words, chars = load_tables(rc)
    model, manifest = load_model(rc, kg)
    inject = manifest["stage"] == "kire"
    theta = model.predictor.threshold
    corefs = load_corefs(rc, (train_split, val_split, test_split))
    reports = {}
    for split in (train_split, val_split, test_split):
        if split is None:
            continue
        docs = prepare_split(split, vocab, words, chars, model.features, kg, corefs)
        preds = predict(model, docs, inject)
        reports[split.name] = metric_report(split.name, preds, split, theta, train_split, vocab)
    return {"run_id": rc.run_id, "stage": manifest["stage"], "theta": theta, "splits": reports}


def cmd_evaluate(rc: RunConfig, stage: Staging) -> dict:
    metrics = _evaluate(rc)
    write_json(stage.path(report_dir(rc) / "metrics.json"), metrics)
    return {"command": "evaluate", **{k: v for k, v in metrics.items() if k != "splits"},
            "f1": {k: v["f1"] for k, v in metrics["splits"].items()},
            "ign_f1": {k: v["ign_f1"] for k, v in metrics["splits"].items()}}


def cmd_predict(rc: RunConfig, stage: Staging) -> dict:
    name = rc.run["split"]
    if name not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    vocab = load_vocab(rc)
    split = load_split(rc, name, vocab)
    kg = load_kg(rc)
    words, chars = load_tables(rc)
    model, manifest = load_model(rc, kg)
    docs = prepare_split(split, vocab, words, chars, model.features, kg, load_corefs(rc, (split,)))
    preds = predict(model, docs, manifest["stage"] == "kire")
    theta = model.predictor.threshold
    chosen = positives(preds, theta)
    out = {doc_id: [{"head": h, "tail": t, "relation": r, "score": s, "positive": (doc_id, h, t, r) in chosen}
                    for h, t, r, s in rows] for doc_id, rows in preds.items()}
    write_json(stage.path(report_dir(rc) / f"predictions_{name}.json"), {"theta": theta, "documents": out})
    return {"command": "predict", "run_id": rc.run_id, "split": name, "documents": len(out),
            "positive_facts": len(chosen)}


def cmd_param_count(rc: RunConfig, stage: Staging) -> dict:
    vocab_path = rc.path("relation_vocab", "rel_vocab.txt")
    vocab = load_relation_vocab(vocab_path) if vocab_path.exists() else ("relation",)
    kg = load_kg(rc)
    model = KIREModel(rc.config, vocab, (), kg)
    report = count_parameters(model, rc.run["n_token"], rc.run["n_align"])
    write_json(stage.path(report_dir(rc) / "param_count.json"), report)
    return {"command": "param-count", "run_id": rc.run_id, **report}


def _seed_run(args: tuple[dict, dict]) -> dict:
    config_dict, run = args
    rc = RunConfig(Config(**config_dict), run)
    torch.set_num_threads(rc.config.num_threads)
    result, extra = _train(rc)
    with Staging(rc.work_dir) as stage:
        ck = Path("checkpoints") / rc.run_id
        save_checkpoint(result.model, stage.directory(ck / "model"), rc.config, result.state.stage,
                        result.state.history, extra)
    metrics = _evaluate(rc)
    return {"seed": rc.config.seed, "run_id": rc.run_id, "metrics": metrics}


def cmd_multi_seed(rc: RunConfig, stage: Staging) -> dict:
    k = rc.run["k"]
    if k <= 0:
        raise ConfigError("k must be a positive integer")
    jobs = [(rc.config.replace(seed=rc.config.seed + i).to_dict(), rc.run) for i in range(k)]
    if rc.run["parallel"] and k > 1:
        with ProcessPoolExecutor(max_workers=min(k, os.cpu_count() or 1)) as pool:
            runs = list(pool.map(_seed_run, jobs))
    else:
        runs = [_seed_run(j) for j in jobs]
    summary: dict[str, dict] = {}
    for split in runs[0]["metrics"]["splits"]:
        for metric in ("precision", "recall", "f1", "ign_f1"):
            vals = [r["metrics"]["splits"][split][metric] for r in runs]
            if any(v is None for v in vals):
                continue
            arr = np.asarray(vals, dtype=np.float64)
            summary[f"{split}.{metric}"] = {
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "values": [float(v) for v in arr],
            }
    report = {"k": k, "seeds": [r["seed"] for r in runs], "run_ids": [r["run_id"] for r in runs],
              "summary": summary}
    write_json(stage.path(report_dir(rc) / "multi_seed.json"), report)
    return {"command": "multi-seed", "run_id": rc.run_id, **report}


HANDLERS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "pretrain-ae": cmd_pretrain_ae,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "param-count": cmd_param_count,
    "multi-seed": cmd_multi_seed,
}


def build_parser() -> argparse.ArgumentParser:
    keys = sorted(set(CONFIG_KEYS) | set(RUN_KEYS))
    epilog = ("config keys (YAML file or --key value): " + ", ".join(keys)
              + ". Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.")
    p = argparse.ArgumentParser(prog="kire", description="Entity-knowledge-injected document-level relation extraction.",
                                epilog=epilog)
    p.add_argument("command", choices=COMMANDS, help="pipeline step to run")
    p.add_argument("--config", default=None, help="flat YAML config file")
    p.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    return p


def _error_line(exc: BaseException, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "exit_code": code, "message": " ".join(str(exc).split())})


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rc = resolve_config(args.config, parse_overrides(rest))
        logger.info("resolved config %s", json.dumps(rc.resolved(), sort_keys=True))
        torch.set_num_threads(rc.config.num_threads)
        rc.work_dir.mkdir(parents=True, exist_ok=True)
        with Staging(rc.work_dir) as stage:
            if args.command not in ("synth", "prepare"):
                write_json(stage.path(report_dir(rc) / "config.json"), rc.resolved())
            result = HANDLERS[args.command](rc, stage)
    except KIREError as exc:
        print(_error_line(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(_error_line(exc, DataError.exit_code), file=sys.stderr)
        return DataError.exit_code
    except Exception as exc:  # noqa: BLE001 - every failure must end in one parsable line
        print(_error_line(exc, 1), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
