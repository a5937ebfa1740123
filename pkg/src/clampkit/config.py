"""Strict JSON run configuration.

Every key, its default, and its meaning:

=================  =========  ====================================================
key                default    meaning
=================  =========  ====================================================
d_v                64         crystal node feature width
conv_layers        3          graph convolution layers
d_m                128        text transformer width
text_layers        2          transformer blocks
heads              4          attention heads (must divide d_m)
d                  64         shared embedding dimension
max_len            64         token budget per text, bos/eos included
vocab_size         512        vocabulary cap, 4 reserved ids included
cutoff             8.0        neighbor cutoff (angstrom)
max_neighbors      12         edges kept per center
gauss_dmin         0.0        first Gaussian center (angstrom)
gauss_dmax         8.0        last Gaussian center bound (angstrom)
gauss_step         0.2        Gaussian center spacing (angstrom)
gauss_var          null       Gaussian variance; null means gauss_step ** 2
batch_size         32         pairs per contrastive batch
epochs             5          passes over the training split
lr                 0.0002     Adam learning rate
beta1              0.9        Adam first-moment decay
beta2              0.999      Adam second-moment decay
adam_eps           1e-8       Adam denominator epsilon
seed               0          master seed for init, split and shuffling
dtype              "f32"      training precision, "f32" or "f64"
manifest           null       JSON-lines manifest (relative to the config file)
val_fraction       0.1        share of records hashed into validation
exclude_partial    false      drop partially occupied structures
=================  =========  ====================================================
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .clamp import ModelConfig
from .crystal import GaussianConfig
from .encoders import CgcnnConfig, TextConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    d_v: int = 64
    conv_layers: int = 3
    d_m: int = 128
    text_layers: int = 2
    heads: int = 4
    d: int = 64
    max_len: int = 64
    vocab_size: int = 512
    cutoff: float = 8.0
    max_neighbors: int = 12
    gauss_dmin: float = 0.0
    gauss_dmax: float = 8.0
    gauss_step: float = 0.2
    gauss_var: float | None = None
    batch_size: int = 32
    epochs: int = 5
    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "f32"
    manifest: str | None = None
    val_fraction: float = 0.1
    exclude_partial: bool = False

    def __post_init__(self):
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be 'f32' or 'f64'")
        for key in ("d_v", "conv_layers", "d_m", "text_layers", "heads", "d", "max_len",
                    "max_neighbors", "batch_size", "epochs"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.d_m % self.heads:
            raise ConfigError("heads must divide d_m")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must be at least 5")
        if self.cutoff <= 0 or self.lr <= 0:
            raise ConfigError("cutoff and lr must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        try:
            self.gaussian
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        for key, value in data.items():
            default = known[key].default
            if value is None or isinstance(default, str) or default is None:
                clean[key] = value
            elif isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{key} must be a boolean")
                clean[key] = value
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{key} must be an integer")
                clean[key] = value
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{key} must be a number")
                clean[key] = float(value)
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    @property
    def gaussian(self) -> GaussianConfig:
        return GaussianConfig(self.gauss_dmin, self.gauss_dmax, self.gauss_step, self.gauss_var)

    def model(self, vocab_size: int | None = None) -> ModelConfig:
        return ModelConfig(
            CgcnnConfig(self.d_v, self.conv_layers, self.gaussian.width),
            TextConfig(vocab_size or self.vocab_size, self.d_m, self.text_layers, self.heads, self.max_len),
            self.d,
        )
