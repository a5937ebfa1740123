"""Training loop and evaluation shared by the command-line entry points."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import clamp
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import PairRecord, SplitSpec, ValidationPolicy, batches, load_manifest, load_structure, split, validate
from .crystal import CrystalGraph, build_graph
from .encoders import Vocab, build_vocab, tokenize_batch
from .numcore import AdamState, NumericError, Tape, adam_step

log = logging.getLogger(__name__)

RECALL_KS = (1, 5, 10)


class DataError(ValueError):
    """Unusable input data (maps to exit code 2)."""


@dataclass
class Model:
    run: RunConfig
    vocab: Vocab
    params: dict[str, np.ndarray]

    @property
    def cfg(self) -> clamp.ModelConfig:
        return self.run.model(len(self.vocab))

    def graph(self, record: PairRecord) -> CrystalGraph:
        return build_graph(load_structure(record), self.run.cutoff, self.run.max_neighbors, self.run.gaussian)

    def embed_graphs(self, graphs: Sequence[CrystalGraph]) -> np.ndarray:
        return clamp.embed_crystals(list(graphs), self.params, self.cfg)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return clamp.embed_texts(list(texts), self.vocab, self.params, self.cfg)

    def to_checkpoint(self, history=None) -> Checkpoint:
        return Checkpoint(self.run.to_dict(), list(self.vocab.tokens), self.params, history or {})

    @classmethod
    def load(cls, path) -> "Model":
        ckpt = load_checkpoint(path)
        run = RunConfig.from_dict(ckpt.config)
        vocab = Vocab(ckpt.vocab, run.max_len)
        expected = run.model(len(vocab)).shapes()
        ckpt = load_checkpoint(path, expected)
        return cls(run, vocab, ckpt.params)


def retrieval_metrics(C: np.ndarray, T: np.ndarray) -> dict:
    c2t, t2c = clamp.pair_matching_accuracy(C, T)
    out = {"n": len(C), "accuracy_crystal_to_text": c2t, "accuracy_text_to_crystal": t2c}
    for k in RECALL_KS:
        kk = min(k, len(C))
        out[f"recall@{k}_crystal_to_text"] = clamp.recall_at_k(C, T, kk, "crystal_to_text")
        out[f"recall@{k}_text_to_crystal"] = clamp.recall_at_k(C, T, kk, "text_to_crystal")
    return out


def zero_shot_accuracy(C: np.ndarray, label_embeddings: np.ndarray, targets: Sequence[int]) -> float:
    chosen = [clamp.rank_labels(c, label_embeddings).chosen for c in C]
    return float(np.mean(np.asarray(chosen) == np.asarray(targets)))


@dataclass
class TrainResult:
    final: Model
    best: Model
    report: dict
    wall_clock: float = 0.0
    history: list = field(default_factory=list)


def prepare_records(run: RunConfig, manifest: Path):
    try:
        records = load_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from None
    report, passed = validate(records, ValidationPolicy(run.exclude_partial))
    if report["excluded"]:
        log.warning("%d of %d records excluded by validation", report["excluded"], report["total"])
    try:
        train, val = split(passed, SplitSpec(run.val_fraction, run.seed))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if len(train) < run.batch_size:
        raise DataError(f"{len(train)} training records is fewer than batch size {run.batch_size}")
    return train, val


def train(run: RunConfig, manifest: Path) -> TrainResult:
    """Full training run. Raises DataError or NumericError."""
    started = time.perf_counter()
    train_recs, val_recs = prepare_records(run, manifest)
    vocab = build_vocab([r.text for r in train_recs], run.vocab_size, run.max_len)
    cfg = run.model(len(vocab))
    log.info("train=%d val=%d vocab=%d", len(train_recs), len(val_recs), len(vocab))

    graphs = {r.id: build_graph(load_structure(r), run.cutoff, run.max_neighbors, run.gaussian)
              for r in sorted(train_recs + val_recs, key=lambda r: r.id)}
    by_id = {r.id: r for r in train_recs}
    val_sorted = sorted(val_recs, key=lambda r: r.id)
    val_graphs = [graphs[r.id] for r in val_sorted]
    val_texts = [r.text for r in val_sorted]

    params = clamp.init_params(cfg, run.seed, run.np_dtype)
    state = AdamState.for_params(params)
    epochs = []
    best_params, best_acc, best_epoch = params, -1.0, -1
    for epoch in range(run.epochs):
        losses = []
        for ids in batches(train_recs, run.batch_size, run.seed, epoch):
            recs = [by_id[i] for i in ids]
            tok, eos = tokenize_batch([r.text for r in recs], vocab)
            tape = Tape(run.np_dtype)
            P = tape.leaves(params)
            loss = clamp.batch_loss(tape, P, [graphs[i] for i in ids], tok, eos, cfg)
            if not math.isfinite(float(loss.value)):
                raise NumericError("non-finite training loss")
            tape.backward(loss)
            grads = {k: n.grad for k, n in P.items()}
            params, state = adam_step(params, grads, state, run.lr, run.beta1, run.beta2, run.adam_eps)
            losses.append(float(loss.value))
        C = clamp.embed_crystals(val_graphs, params, cfg)
        T = clamp.embed_texts(val_texts, vocab, params, cfg)
        metrics = retrieval_metrics(C, T)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "batches": len(losses),
                 "val": metrics}
        epochs.append(entry)
        log.info("epoch %d loss %.4f val c2t %.3f t2c %.3f", epoch, entry["train_loss"],
                 metrics["accuracy_crystal_to_text"], metrics["accuracy_text_to_crystal"])
        if metrics["accuracy_crystal_to_text"] > best_acc:
            best_params, best_acc, best_epoch = params, metrics["accuracy_crystal_to_text"], epoch

    report = {
        "seed": run.seed,
        "train_records": len(train_recs),
        "val_records": len(val_recs),
        "vocab_size": len(vocab),
        "epochs": epochs,
        "best_epoch": best_epoch,
        "best_val_accuracy_crystal_to_text": best_acc,
    }
    history = {"train_loss": [e["train_loss"] for e in epochs],
               "val_accuracy_crystal_to_text": [e["val"]["accuracy_crystal_to_text"] for e in epochs],
               "best_epoch": best_epoch}
    return TrainResult(Model(run, vocab, params), Model(run, vocab, best_params), report,
                       time.perf_counter() - started, history)


def write_outputs(result: TrainResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "final.clmp", result.final.to_checkpoint(result.history))
    save_checkpoint(out_dir / "best.clmp", result.best.to_checkpoint(result.history))
    (out_dir / "metrics.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    (out_dir / "timing.json").write_text(json.dumps({"wall_clock_s": result.wall_clock}) + "\n",
                                         encoding="utf-8")
