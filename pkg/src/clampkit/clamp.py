"""Shared crystal/text embedding space, contrastive objective and retrieval metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .crystal import CrystalGraph
from .encoders import (CgcnnConfig, GraphBatch, TextConfig, Vocab, cgcnn_encode, init_cgcnn,
                       init_text, text_encode, tokenize_batch)
from .numcore import Node, Tape, seeded_init
from .rng import derive_seed

MAX_LOGIT_SCALE = 100.0
INIT_LOG_SCALE = math.log(1 / 0.07)


@dataclass(frozen=True)
class ModelConfig:
    cgcnn: CgcnnConfig
    text: TextConfig
    d: int = 64

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("embedding dimension must be at least 2")

    def shapes(self) -> dict[str, tuple]:
        shapes = dict(self.cgcnn.shapes())
        shapes.update(self.text.shapes())
        shapes.update({"proj.crystal": (self.cgcnn.d_v, self.d),
                       "proj.text": (self.text.d_m, self.d),
                       "log_scale": ()})
        return shapes


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32,
                log_scale: float = INIT_LOG_SCALE) -> dict[str, np.ndarray]:
    params = {}
    params.update(init_cgcnn(cfg.cgcnn, derive_seed(seed, "cgcnn"), np.float64))
    params.update(init_text(cfg.text, derive_seed(seed, "text"), np.float64))
    for name in ("proj.crystal", "proj.text"):
        params[name] = seeded_init(cfg.shapes()[name], "uniform", derive_seed(seed, name))
    params["log_scale"] = seeded_init((), "constant", 0, value=log_scale)
    return {k: v.astype(dtype) for k, v in sorted(params.items())}


def logit_scale(tape: Tape, log_scale: Node) -> Node:
    """exp(log_scale), clamped at 100 (no gradient once clamped)."""
    if float(log_scale.value) >= math.log(MAX_LOGIT_SCALE):
        return tape.const(np.asarray(MAX_LOGIT_SCALE))
    return tape.exp(log_scale)


def crystal_embeddings(tape: Tape, graphs, P: Mapping[str, Node], cfg: ModelConfig) -> Node:
    batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.from_graphs(list(graphs))
    return tape.l2_normalize_rows(cgcnn_encode(tape, batch, P, cfg.cgcnn) @ P["proj.crystal"])


def text_embeddings(tape: Tape, ids, eos, P: Mapping[str, Node], cfg: ModelConfig) -> Node:
    return tape.l2_normalize_rows(text_encode(tape, ids, eos, P, cfg.text) @ P["proj.text"])


def similarity_logits(tape: Tape, C: Node, T: Node, s: Node, tol: float = 1e-4) -> Node:
    """``s * C @ T.T`` for unit-row embedding matrices."""
    if C.shape != T.shape:
        raise ValueError(f"embedding matrices differ in shape: {C.shape} vs {T.shape}")
    for name, m in (("crystal", C), ("text", T)):
        if np.any(np.abs(np.linalg.norm(m.value, axis=-1) - 1.0) > tol):
            raise ValueError(f"{name} embeddings are not unit rows")
    return (C @ tape.transpose(T)) * s


def clamp_loss(tape: Tape, logits: Node) -> Node:
    """Symmetric cross-entropy with matching pairs on the diagonal."""
    n, m = logits.shape
    if n != m or n < 1:
        raise ValueError("contrastive loss needs a non-empty square logit matrix")
    target = np.arange(n)
    rows = tape.cross_entropy_rows(logits, target)
    cols = tape.cross_entropy_rows(tape.transpose(logits), target)
    return (rows + cols) * 0.5


def batch_loss(tape: Tape, P: Mapping[str, Node], graphs, ids, eos, cfg: ModelConfig) -> Node:
    C = crystal_embeddings(tape, graphs, P, cfg)
    T = text_embeddings(tape, ids, eos, P, cfg)
    return clamp_loss(tape, similarity_logits(tape, C, T, logit_scale(tape, P["log_scale"])))


# ---------------------------------------------------------------------------
# inference helpers (no gradients kept)


def _eval_tape(params: Mapping[str, np.ndarray]):
    dtype = next(iter(params.values())).dtype
    tape = Tape(dtype)
    return tape, tape.leaves(params)


def embed_crystals(graphs: Sequence[CrystalGraph], params: Mapping[str, np.ndarray],
                   cfg: ModelConfig, chunk: int = 256) -> np.ndarray:
    out = []
    for lo in range(0, len(graphs), chunk):
        tape, P = _eval_tape(params)
        out.append(crystal_embeddings(tape, graphs[lo:lo + chunk], P, cfg).value)
    return np.concatenate(out) if out else np.zeros((0, cfg.d))


def embed_texts(texts: Sequence[str], vocab: Vocab, params: Mapping[str, np.ndarray],
                cfg: ModelConfig, chunk: int = 256) -> np.ndarray:
    out = []
    for lo in range(0, len(texts), chunk):
        ids, eos = tokenize_batch(texts[lo:lo + chunk], vocab)
        tape, P = _eval_tape(params)
        out.append(text_embeddings(tape, ids, eos, P, cfg).value)
    return np.concatenate(out) if out else np.zeros((0, cfg.d))


def embed_crystal(graph: CrystalGraph, params, cfg: ModelConfig) -> np.ndarray:
    return embed_crystals([graph], params, cfg)[0]


def embed_text(text: str, vocab: Vocab, params, cfg: ModelConfig) -> np.ndarray:
    return embed_texts([text], vocab, params, cfg)[0]


# ---------------------------------------------------------------------------
# zero-shot and metrics


@dataclass
class ZeroShotResult:
    ranking: list[tuple[int, float]]  # (label index, cosine), best first

    @property
    def chosen(self) -> int:
        return self.ranking[0][0]


def rank_labels(crystal: np.ndarray, labels: np.ndarray) -> ZeroShotResult:
    """Order label embeddings by cosine to ``crystal``; ties keep the lower index first."""
    labels = np.atleast_2d(labels)
    if labels.shape[0] == 0:
        raise ValueError("no label prompts given")
    scores = labels.astype(np.float64) @ np.asarray(crystal, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return ZeroShotResult([(int(i), float(np.clip(scores[i], -1.0, 1.0))) for i in order])


def zero_shot(crystal: np.ndarray, prompts: Sequence[str], vocab: Vocab, params,
              cfg: ModelConfig) -> ZeroShotResult:
    if not prompts:
        raise ValueError("no label prompts given")
    return rank_labels(crystal, embed_texts(list(prompts), vocab, params, cfg))


def _partner_ranks(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Rank (0 = best) of row i's true partner among all gallery rows.

    Equal scores are ordered by gallery index, matching argmax tie-breaking.
    """
    sims = query.astype(np.float64) @ gallery.astype(np.float64).T
    n = sims.shape[0]
    own = sims[np.arange(n), np.arange(n)][:, None]
    idx = np.arange(n)
    better = (sims > own) | ((sims == own) & (idx[None, :] < idx[:, None]))
    return better.sum(axis=1)


def pair_matching_accuracy(C: np.ndarray, T: np.ndarray) -> tuple[float, float]:
    """(crystal->text, text->crystal) top-1 accuracy over the full gallery."""
    if len(C) == 0:
        raise ValueError("empty gallery")
    if C.shape != T.shape:
        raise ValueError("embedding matrices differ in shape")
    return float(np.mean(_partner_ranks(C, T) == 0)), float(np.mean(_partner_ranks(T, C) == 0))


def recall_at_k(C: np.ndarray, T: np.ndarray, k: int, direction: str = "crystal_to_text") -> float:
    n = len(C)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    if direction == "crystal_to_text":
        ranks = _partner_ranks(C, T)
    elif direction == "text_to_crystal":
        ranks = _partner_ranks(T, C)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return float(np.mean(ranks < k))
