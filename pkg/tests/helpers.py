"""Small shared builders for the test-suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from clampkit.clamp import ModelConfig, init_params
from clampkit.crystal import CrystalStructure, GaussianConfig, Lattice, build_graph
from clampkit.encoders import CgcnnConfig, TextConfig, build_vocab

FIXTURES = Path(__file__).parent / "fixtures"

TINY_GAUSS = GaussianConfig(0.0, 6.0, 1.0)

TINY_TEXTS = ["contains zinc oxygen; a dense photocatalyst candidate",
              "contains lithium cobalt; an open cathode candidate",
              "contains iron boron; a moderate magnet candidate"]


def tiny_config(d_v=4, layers=1, d_m=8, text_layers=1, heads=2, d=4, vocab=None, max_len=12, k=None):
    vocab = vocab or len(tiny_vocab(max_len))
    return ModelConfig(CgcnnConfig(d_v, layers, k or TINY_GAUSS.width),
                       TextConfig(vocab, d_m, text_layers, heads, max_len), d)


def tiny_structures():
    """Two small hand-built crystals with different compositions."""
    a = CrystalStructure(Lattice(3.1, 3.3, 3.6, 90, 90, 90), np.array([30, 8]),
                         np.array([[0.0, 0.0, 0.0], [0.5, 0.45, 0.55]]), None)
    b = CrystalStructure(Lattice(3.4, 3.2, 3.0, 85, 95, 100), np.array([3, 27, 8]),
                         np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.2, 0.7, 0.1]]), None)
    return [a, b]


def tiny_graphs(cutoff=4.0, max_neighbors=6):
    return [build_graph(s, cutoff, max_neighbors, TINY_GAUSS) for s in tiny_structures()]


def tiny_vocab(max_len=12):
    return build_vocab(TINY_TEXTS, 32, max_len)


def tiny_params(cfg, seed=3, dtype=np.float64, log_scale=None):
    kw = {} if log_scale is None else {"log_scale": log_scale}
    return init_params(cfg, seed, dtype, **kw)
