"""Binary tensor container shared by checkpoints and embedding files.

Layout (all integers little-endian)::

    b"CLMP"  u8 version(=1)
    u32 metadata length, metadata as UTF-8 JSON
    repeated section:
        u16 name length, name (UTF-8)
        u8 dtype code, u8 rank, u64 x rank dims
        payload
    u32 CRC32 of every byte after the 4-byte magic

dtype codes: 1 = f32, 2 = f64, 3 = i64, 16 = UTF-8 string list (payload is
``dims[0]`` repetitions of u32 byte length + bytes). Numeric payloads are
row-major little-endian.

The metadata carries ``section_crc`` (name -> CRC32 of that section's bytes)
so a failed checksum can name the damaged section.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CLMP"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}
STRINGS = 16


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


def _encode_section(name: str, value) -> bytes:
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name
    if isinstance(value, (list, tuple)):
        parts = [struct.pack("<BB", STRINGS, 1), struct.pack("<Q", len(value))]
        for s in value:
            b = s.encode("utf-8")
            parts.append(struct.pack("<I", len(b)) + b)
        return head + b"".join(parts)
    arr = np.asarray(value)
    code = _CODE_OF.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"section {name}: unsupported dtype {arr.dtype}")
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()
    return head + struct.pack("<BB", code, arr.ndim) + dims + payload


def dumps(metadata: dict, sections: Mapping[str, object]) -> bytes:
    encoded = {name: _encode_section(name, value) for name, value in sections.items()}
    meta = dict(metadata)
    meta["section_crc"] = {name: zlib.crc32(b) for name, b in encoded.items()}
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytes([VERSION]) + struct.pack("<I", len(meta_bytes)) + meta_bytes + b"".join(encoded.values())
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("unexpected end of data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_sections(body: bytes, start: int):
    r = _Reader(body, start)
    sections, spans = {}, {}
    while r.pos < len(body):
        begin = r.pos
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, rank = r.unpack("<BB")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        if code == STRINGS:
            items = []
            for _ in range(dims[0]):
                (k,) = r.unpack("<I")
                items.append(r.take(k).decode("utf-8"))
            sections[name] = items
        elif code in _CODES:
            dt = _CODES[code]
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            sections[name] = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(dims).copy()
        else:
            raise CheckpointError(f"section {name}: unknown dtype code {code}")
        spans[name] = (begin, r.pos)
    return sections, spans


def loads(data: bytes) -> tuple[dict, dict]:
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a CLMP container")
    if len(data) < 4 + 1 + 4 + 4:
        raise ChecksumError("checksum mismatch: file truncated")
    body, (stored,) = data[4:-4], struct.unpack("<I", data[-4:])
    if body[0] != VERSION:
        if zlib.crc32(body) != stored:
            raise ChecksumError("checksum mismatch in header")
        raise CheckpointError(f"unsupported container version {body[0]}")
    if zlib.crc32(body) != stored:
        raise ChecksumError(_locate_damage(body))
    (meta_len,) = struct.unpack("<I", body[1:5])
    metadata = json.loads(body[5:5 + meta_len].decode("utf-8"))
    sections, _ = _read_sections(body, 5 + meta_len)
    return metadata, sections


def _locate_damage(body: bytes) -> str:
    """Best-effort name of the damaged region, for error messages."""
    try:
        (meta_len,) = struct.unpack("<I", body[1:5])
        metadata = json.loads(body[5:5 + meta_len].decode("utf-8"))
        expected = metadata["section_crc"]
    except Exception:
        return "checksum mismatch in header/metadata (or file truncated)"
    try:
        _, spans = _read_sections(body, 5 + meta_len)
    except Exception:
        spans = {}
    for name, (a, b) in spans.items():
        if expected.get(name) != zlib.crc32(body[a:b]):
            return f"checksum mismatch in section {name!r}"
    missing = [n for n in expected if n not in spans]
    if missing:
        return f"checksum mismatch: file truncated (section {missing[0]!r} incomplete or missing)"
    return "checksum mismatch (file truncated or trailer damaged)"


def save(path, metadata: dict, sections: Mapping[str, object]) -> None:
    Path(path).write_bytes(dumps(metadata, sections))


def load(path) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# model checkpoints


@dataclass
class Checkpoint:
    config: dict
    vocab: list[str]
    params: dict[str, np.ndarray]
    history: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {"kind": "checkpoint", "config": self.config, "vocab": self.vocab, "history": self.history}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    save(path, ckpt.metadata(), dict(sorted(ckpt.params.items())))


def load_checkpoint(path, expected_shapes: Mapping[str, tuple] | None = None) -> Checkpoint:
    """Read and verify a checkpoint; ``expected_shapes`` (if given) must match exactly."""
    meta, sections = load(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError("container is not a model checkpoint")
    if expected_shapes is not None:
        missing = sorted(set(expected_shapes) - set(sections))
        extra = sorted(set(sections) - set(expected_shapes))
        if missing or extra:
            raise CheckpointError(f"tensor set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected_shapes.items():
            if tuple(sections[name].shape) != tuple(shape):
                raise CheckpointError(f"tensor {name} has shape {sections[name].shape}, config expects {shape}")
    return Checkpoint(meta["config"], meta["vocab"], sections, meta.get("history", {}))


def import_named_tensors(params: Mapping[str, np.ndarray], tensors: Mapping[str, np.ndarray],
                         name_map: Mapping[str, str] | None = None) -> dict[str, np.ndarray]:
    """Overwrite parameters with externally supplied tensors (e.g. converted pretrained weights).

    ``name_map`` maps external names to parameter names; shapes must agree.
    """
    out = dict(params)
    for ext_name, value in tensors.items():
        name = name_map.get(ext_name, ext_name) if name_map else ext_name
        if name not in out:
            raise CheckpointError(f"no parameter named {name!r}")
        value = np.asarray(value)
        if value.shape != out[name].shape:
            raise CheckpointError(f"{name}: shape {value.shape} != {out[name].shape}")
        out[name] = value.astype(out[name].dtype)
    return out


# ---------------------------------------------------------------------------
# embedding files


def save_embeddings(path, ids: list[str], rows: np.ndarray, modality: str) -> None:
    if len(ids) != len(rows):
        raise CheckpointError("ids and rows differ in length")
    save(path, {"kind": "embeddings", "modality": modality},
         {"ids": list(ids), "rows": np.asarray(rows, dtype=np.float32)})


def load_embeddings(path) -> tuple[list[str], np.ndarray, str]:
    meta, sections = load(path)
    if meta.get("kind") != "embeddings":
        raise CheckpointError("container is not an embedding file")
    return sections["ids"], sections["rows"], meta["modality"]
