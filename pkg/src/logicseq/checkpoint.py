"""Binary checkpoint containers for soft and collapsed models.

Soft container ("RDLG1"): magic, u64-LE length-prefixed UTF-8 JSON config
block, then tensors in fixed order -- embedding (f64 LE row-major), then
the N, K, L, P, M stacks, each layer as a header (in_dim, width as u64 LE)
followed by conn_a, conn_b (u32 LE) and the logits (f64 LE row-major).

Collapsed container ("RDLGC1"): magic, config block, binary embedding
packed row-major (little bit order, rows padded to whole bytes), then per
layer the same header/connectivity followed by one gate-index byte per
neuron.

Both containers end with a CRC32 of everything before it; loads verify it
and round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .layers import CollapsedLogicLayer, SoftLogicLayer
from .model import (
    GROUPS,
    ModelConfig,
    Seq2SeqModel,
    config_from_dict,
    config_to_dict,
    group_input_dims,
)

SOFT_MAGIC = b"RDLG1"
COLLAPSED_MAGIC = b"RDLGC1"


class CheckpointError(ValueError):
    """Corrupt or mismatched checkpoint container."""


def _config_block(cfg: ModelConfig) -> bytes:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(blob)) + blob


class _Reader:
    def __init__(self, buf: bytes, offset: int):
        self.buf = buf
        self.off = offset

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError("container truncated")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def _open_container(path, magic) -> _Reader:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(magic) + 4 or not buf.startswith(magic):
        raise CheckpointError(f"{path}: bad magic, not a {magic.decode()} container")
    body, crc = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum failure, container is corrupt")
    return _Reader(body, len(magic))


def _read_config(r: _Reader) -> ModelConfig:
    blob = r.take(r.u64())
    try:
        return config_from_dict(json.loads(blob.decode("utf-8")))
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"invalid config block: {e}") from e


def _layer_header(r: _Reader, in_dim, width):
    got_in, got_w = r.u64(), r.u64()
    if (got_in, got_w) != (in_dim, width):
        raise CheckpointError(
            f"layer header ({got_in}, {got_w}) does not match config "
            f"({in_dim}, {width})"
        )


def save_model(model: Seq2SeqModel, path) -> None:
    parts = [SOFT_MAGIC, _config_block(model.config)]
    parts.append(np.ascontiguousarray(model.embedding, dtype="<f8").tobytes())
    for g in GROUPS:
        for layer in model.groups[g]:
            parts.append(struct.pack("<QQ", layer.in_dim, layer.width))
            parts.append(layer.conn_a.astype("<u4").tobytes())
            parts.append(layer.conn_b.astype("<u4").tobytes())
            parts.append(np.ascontiguousarray(layer.logits, dtype="<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> Seq2SeqModel:
    r = _open_container(path, SOFT_MAGIC)
    cfg = _read_config(r)
    dtype = cfg.np_dtype()
    emb = r.array("<f8", cfg.vocab_size * cfg.emb_dim).reshape(
        cfg.vocab_size, cfg.emb_dim
    )
    dims = group_input_dims(cfg)
    groups = {}
    for g in GROUPS:
        stack = []
        for in_dim, width in zip(dims[g], cfg.sizes(g)):
            _layer_header(r, in_dim, width)
            conn_a = r.array("<u4", width)
            conn_b = r.array("<u4", width)
            logits = r.array("<f8", width * 16).reshape(width, 16).astype(dtype)
            stack.append(SoftLogicLayer(in_dim, width, conn_a, conn_b, logits))
        groups[g] = stack
    if r.off != len(r.buf):
        raise CheckpointError("trailing bytes after tensors")
    return Seq2SeqModel(cfg, embedding=emb.astype(dtype), groups=groups)


def save_collapsed(cmodel, path) -> None:
    from .collapsed import CollapsedModel  # local import, avoids a cycle

    assert isinstance(cmodel, CollapsedModel)
    parts = [COLLAPSED_MAGIC, _config_block(cmodel.config)]
    packed = np.packbits(cmodel.emb_bits, axis=1, bitorder="little")
    parts.append(np.ascontiguousarray(packed).tobytes())
    for g in GROUPS:
        for layer in cmodel.groups[g]:
            parts.append(struct.pack("<QQ", layer.in_dim, layer.width))
            parts.append(layer.conn_a.astype("<u4").tobytes())
            parts.append(layer.conn_b.astype("<u4").tobytes())
            parts.append(layer.gates.astype(np.uint8).tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


def load_collapsed(path):
    from .collapsed import CollapsedModel

    r = _open_container(path, COLLAPSED_MAGIC)
    cfg = _read_config(r)
    row_bytes = (cfg.emb_dim + 7) // 8
    packed = r.array(np.uint8, cfg.vocab_size * row_bytes).reshape(
        cfg.vocab_size, row_bytes
    )
    emb_bits = np.unpackbits(packed, axis=1, bitorder="little")[:, : cfg.emb_dim]
    dims = group_input_dims(cfg)
    groups = {}
    for g in GROUPS:
        stack = []
        for in_dim, width in zip(dims[g], cfg.sizes(g)):
            _layer_header(r, in_dim, width)
            conn_a = r.array("<u4", width)
            conn_b = r.array("<u4", width)
            gates = r.array(np.uint8, width)
            if gates.max(initial=0) > 15:
                raise CheckpointError("gate index byte out of range")
            stack.append(CollapsedLogicLayer(in_dim, width, conn_a, conn_b, gates))
        groups[g] = stack
    if r.off != len(r.buf):
        raise CheckpointError("trailing bytes after tensors")
    return CollapsedModel(config=cfg, emb_bits=emb_bits, groups=groups)


def sniff(path) -> str:
    """'soft' | 'collapsed' from the container magic."""
    with open(path, "rb") as f:
        head = f.read(len(COLLAPSED_MAGIC))
    if head.startswith(COLLAPSED_MAGIC):
        return "collapsed"
    if head.startswith(SOFT_MAGIC):
        return "soft"
    raise CheckpointError(f"{path}: unknown container magic")
