"""Binary model persistence.

Layout: 4-byte magic ``BGC1``, a u64 little-endian length plus JSON
header (config, variant knobs, vocabulary), then a u64 record count and
one record per tensor: u64 name length, name bytes, u64 rank, u64 dims,
float32 little-endian payload in row-major order. Loading validates
everything before touching any model state, so a bad file is rejected
rather than half-applied. Round-trips are bitwise.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import AblationConfig, ModelConfig
from .errors import DataError
from .model import TextClassifier
from .text import EmbeddingTable, Vocabulary

MAGIC = b"BGC1"
FORMAT_VERSION = 1


def _write_u64(handle, value: int) -> None:
    handle.write(struct.pack("<Q", value))


def _read_exact(handle, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise DataError(f"truncated model artifact while reading {what}")
    return data


def _read_u64(handle, what: str) -> int:
    return struct.unpack("<Q", _read_exact(handle, 8, what))[0]


def save_model(model: TextClassifier, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "ablation": model.ablation.to_dict(),
        "vocab": model.vocab.token_to_index,
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    tensors = model.state_tensors()
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        _write_u64(handle, len(header_bytes))
        handle.write(header_bytes)
        _write_u64(handle, len(tensors))
        for name, tensor in tensors.items():
            name_bytes = name.encode("utf-8")
            _write_u64(handle, len(name_bytes))
            handle.write(name_bytes)
            _write_u64(handle, tensor.ndim)
            for extent in tensor.shape:
                _write_u64(handle, extent)
            handle.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_model(path) -> TextClassifier:
    with open(path, "rb") as handle:
        magic = _read_exact(handle, 4, "magic")
        if magic != MAGIC:
            raise DataError(f"{path}: not a model artifact (magic {magic!r})")
        header_len = _read_u64(handle, "header length")
        try:
            header = json.loads(_read_exact(handle, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt header: {exc}") from exc
        if header.get("version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported artifact version {header.get('version')!r}")
        for key in ("config", "ablation", "vocab"):
            if key not in header:
                raise DataError(f"{path}: header missing {key!r}")
        count = _read_u64(handle, "tensor count")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = _read_u64(handle, "name length")
            name = _read_exact(handle, name_len, "tensor name").decode("utf-8")
            rank = _read_u64(handle, "rank")
            dims = tuple(_read_u64(handle, "dims") for _ in range(rank))
            payload_len = 4 * int(np.prod(dims, dtype=np.int64))
            raw = _read_exact(handle, payload_len, f"payload of {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        if handle.read(1):
            raise DataError(f"{path}: trailing bytes after tensor records")

    config = ModelConfig.from_dict(header["config"])
    ablation = AblationConfig.from_dict(header["ablation"])
    vocab = Vocabulary(header["vocab"])
    if "embedding" not in arrays:
        raise DataError(f"{path}: artifact has no embedding table")
    table = EmbeddingTable(vectors=arrays["embedding"], dim=config.embed_dim)
    model = TextClassifier(config, vocab, table, ablation)
    expected = model.state_tensors()
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise DataError(f"{path}: tensor records mismatch (missing {missing}, extra {extra})")
    for name, tensor in expected.items():
        stored = arrays[name]
        if stored.shape != tensor.shape:
            raise DataError(
                f"{path}: tensor {name} has shape {stored.shape}, expected {tensor.shape}"
            )
        tensor.data = stored
    return model
