"""Crystal graph convolution tower and causal transformer text tower.

Parameters live in flat ``{name: array}`` dicts so they can be put on a tape
as named leaves and written to checkpoints section by section.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .crystal import CrystalGraph
from .elements import Z_MAX
from .numcore import Node, Tape, seeded_init
from .rng import derive_seed

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
_WORD_SPLIT = re.compile(r"[^a-z0-9]+")


# ---------------------------------------------------------------------------
# crystal tower


@dataclass(frozen=True)
class CgcnnConfig:
    d_v: int = 64
    layers: int = 3
    edge_width: int = 41
    z_max: int = Z_MAX
    conv_norm: bool = True

    def shapes(self) -> dict[str, tuple]:
        d, k = self.d_v, self.edge_width
        shapes = {"cgcnn.embedding": (self.z_max + 1, d)}
        for t in range(self.layers):
            p = f"cgcnn.conv{t}"
            shapes.update({f"{p}.W_f": (2 * d + k, d), f"{p}.b_f": (d,),
                           f"{p}.W_s": (2 * d + k, d), f"{p}.b_s": (d,)})
            if self.conv_norm:
                shapes.update({f"{p}.norm_gain": (d,), f"{p}.norm_bias": (d,)})
        return shapes


def init_cgcnn(cfg: CgcnnConfig, seed: int, dtype=np.float64) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in cfg.shapes().items():
        s = derive_seed(seed, name)
        if name.endswith("embedding"):
            # a lookup is a product with a one-hot row, so fan-in is 1
            params[name] = seeded_init(shape, "uniform", s, fan_in=1, dtype=dtype)
        elif ".W_" in name:
            params[name] = seeded_init(shape, "uniform", s, dtype=dtype)
        elif name.endswith("norm_gain"):
            params[name] = seeded_init(shape, "constant", s, value=1.0, dtype=dtype)
        else:
            params[name] = seeded_init(shape, "zeros", s, dtype=dtype)
    return params


@dataclass
class GraphBatch:
    """Several crystal graphs merged into one disconnected graph."""
    elements: np.ndarray       # (N,)
    src: np.ndarray            # (E,)
    dst: np.ndarray            # (E,)
    edge_features: np.ndarray  # (E, K)
    graph_index: np.ndarray    # (N,) owning graph of each node
    num_graphs: int

    @classmethod
    def from_graphs(cls, graphs: Sequence[CrystalGraph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty graph batch")
        offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
        k = graphs[0].edge_features.shape[1]
        return cls(
            elements=np.concatenate([g.node_elements for g in graphs]),
            src=np.concatenate([g.src + o for g, o in zip(graphs, offsets)]).astype(np.int64),
            dst=np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]).astype(np.int64),
            edge_features=np.concatenate([g.edge_features.reshape(-1, k) for g in graphs]),
            graph_index=np.repeat(np.arange(len(graphs)), [g.num_nodes for g in graphs]),
            num_graphs=len(graphs),
        )


def cgcnn_encode(tape: Tape, batch: GraphBatch | CrystalGraph, P: Mapping[str, Node],
                 cfg: CgcnnConfig) -> Node:
    """Gated graph convolutions then mean pooling; returns (graphs, d_v).

    Per layer, for every directed edge i -> j with features u_ij::

        z_ij = [v_i, v_j, u_ij]
        v_i <- norm(v_i + sum_j sigmoid(z_ij W_f + b_f) * softplus(z_ij W_s + b_s))
    """
    if isinstance(batch, CrystalGraph):
        batch = GraphBatch.from_graphs([batch])
    n = len(batch.elements)
    v = tape.embedding_lookup(P["cgcnn.embedding"], batch.elements)
    edges = tape.const(batch.edge_features)
    zeros = tape.const(np.zeros((n, cfg.d_v)))
    for t in range(cfg.layers):
        p = f"cgcnn.conv{t}"
        z = tape.concat([tape.gather_rows(v, batch.src), tape.gather_rows(v, batch.dst), edges], axis=1)
        gate = tape.sigmoid(z @ P[f"{p}.W_f"] + P[f"{p}.b_f"])
        core = tape.softplus(z @ P[f"{p}.W_s"] + P[f"{p}.b_s"])
        v = v + tape.scatter_add_rows(zeros, gate * core, batch.src)
        if cfg.conv_norm:
            v = tape.layer_norm_rows(v, P[f"{p}.norm_gain"], P[f"{p}.norm_bias"])
    counts = np.bincount(batch.graph_index, minlength=batch.num_graphs).astype(np.float64)
    pooled = tape.scatter_add_rows(tape.const(np.zeros((batch.num_graphs, cfg.d_v))), v, batch.graph_index)
    return pooled * tape.const((1.0 / counts)[:, None])


# ---------------------------------------------------------------------------
# vocabulary


def words(text: str) -> list[str]:
    return [w for w in _WORD_SPLIT.split(text.lower()) if w]


@dataclass
class Vocab:
    tokens: list[str]
    max_len: int = 64

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if self.max_len < 2:
            raise ValueError("max_len must leave room for bos and eos")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary token")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, word):
        return word in self.index


def build_vocab(texts: Iterable[str], max_size: int, max_len: int = 64) -> Vocab:
    """Most frequent ``max_size - 4`` words; ties go to the lexicographically smaller word."""
    if max_size < 5:
        raise ValueError("max_size must be at least 5")
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in texts:
        counts.update(words(text))
        n_texts += 1
    if n_texts == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: max_size - 4]
    return Vocab(list(RESERVED) + [w for w, _ in ranked], max_len)


def tokenize(text: str, vocab: Vocab) -> tuple[np.ndarray, int]:
    """Fixed-length ids ``[bos, w..., eos, pad...]`` and the eos position."""
    body = [vocab.index.get(w, UNK) for w in words(text)][: vocab.max_len - 2]
    ids = np.full(vocab.max_len, PAD, dtype=np.int64)
    ids[0] = BOS
    ids[1:1 + len(body)] = body
    eos = 1 + len(body)
    ids[eos] = EOS
    return ids, eos


def tokenize_batch(texts: Sequence[str], vocab: Vocab) -> tuple[np.ndarray, np.ndarray]:
    pairs = [tokenize(t, vocab) for t in texts]
    return np.stack([p[0] for p in pairs]), np.array([p[1] for p in pairs], dtype=np.int64)


# ---------------------------------------------------------------------------
# text tower


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int
    d_m: int = 128
    layers: int = 2
    heads: int = 4
    max_len: int = 64

    def __post_init__(self):
        if self.d_m % self.heads:
            raise ValueError("d_m must be divisible by the number of heads")

    def shapes(self) -> dict[str, tuple]:
        d = self.d_m
        shapes = {"text.token_embedding": (self.vocab_size, d),
                  "text.positional_embedding": (self.max_len, d)}
        for b in range(self.layers):
            p = f"text.block{b}"
            shapes.update({
                f"{p}.ln1_gain": (d,), f"{p}.ln1_bias": (d,),
                f"{p}.W_q": (d, d), f"{p}.W_k": (d, d), f"{p}.W_v": (d, d), f"{p}.W_o": (d, d),
                f"{p}.ln2_gain": (d,), f"{p}.ln2_bias": (d,),
                f"{p}.W_1": (d, 4 * d), f"{p}.b_1": (4 * d,),
                f"{p}.W_2": (4 * d, d), f"{p}.b_2": (d,),
            })
        shapes.update({"text.final_gain": (d,), "text.final_bias": (d,)})
        return shapes


def init_text(cfg: TextConfig, seed: int, dtype=np.float64) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in cfg.shapes().items():
        s = derive_seed(seed, name)
        if name.endswith("token_embedding"):
            params[name] = seeded_init(shape, "uniform", s, fan_in=1, dtype=dtype)
        elif name.endswith("embedding"):
            params[name] = seeded_init(shape, "normal", s, dtype=dtype)
        elif ".W_" in name:
            params[name] = seeded_init(shape, "uniform", s, dtype=dtype)
        elif name.endswith("gain"):
            params[name] = seeded_init(shape, "constant", s, value=1.0, dtype=dtype)
        else:
            params[name] = seeded_init(shape, "zeros", s, dtype=dtype)
    return params


def _causal_mask(length: int) -> np.ndarray:
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def text_encode(tape: Tape, ids: np.ndarray, eos: np.ndarray, P: Mapping[str, Node],
                cfg: TextConfig) -> Node:
    """Pre-norm causal transformer; returns the final-norm state at each eos, (B, d_m).

    Positions after the last eos in the batch cannot influence any output
    (causal mask), so the sequence is cut there before any work is done.
    """
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    eos = np.atleast_1d(np.asarray(eos, dtype=np.int64))
    bsz, full_len = ids.shape
    if full_len > cfg.max_len or eos.shape != (bsz,) or eos.min() < 0 or eos.max() >= full_len:
        raise ValueError("token ids / eos positions do not match the text config")
    length = int(eos.max()) + 1
    ids = ids[:, :length]
    d, h = cfg.d_m, cfg.heads
    dh = d // h

    pos = tape.gather_rows(P["text.positional_embedding"], np.arange(length))
    x = tape.embedding_lookup(P["text.token_embedding"], ids) + pos
    mask = _causal_mask(length)
    scale = tape.const(np.asarray(1.0 / np.sqrt(dh)))

    def heads(t):  # (B, L, d) -> (B, h, L, dh)
        return tape.transpose(tape.reshape(t, (bsz, length, h, dh)), (0, 2, 1, 3))

    for b in range(cfg.layers):
        p = f"text.block{b}"
        y = tape.layer_norm_rows(x, P[f"{p}.ln1_gain"], P[f"{p}.ln1_bias"])
        q, k, v = heads(y @ P[f"{p}.W_q"]), heads(y @ P[f"{p}.W_k"]), heads(y @ P[f"{p}.W_v"])
        att = tape.masked_fill((q @ tape.transpose(k)) * scale, mask)
        o = tape.softmax(att) @ v
        o = tape.reshape(tape.transpose(o, (0, 2, 1, 3)), (bsz, length, d))
        x = x + o @ P[f"{p}.W_o"]
        y = tape.layer_norm_rows(x, P[f"{p}.ln2_gain"], P[f"{p}.ln2_bias"])
        hid = y @ P[f"{p}.W_1"] + P[f"{p}.b_1"]
        hid = hid * tape.sigmoid(hid * 1.702)  # quick-GELU
        x = x + (hid @ P[f"{p}.W_2"] + P[f"{p}.b_2"])
    x = tape.layer_norm_rows(x, P["text.final_gain"], P["text.final_bias"])
    flat = tape.reshape(x, (bsz * length, d))
    return tape.gather_rows(flat, np.arange(bsz) * length + eos)
