import numpy as np
import pytest

from conftest import tiny_config
from logicseq.checkpoint import (
    CheckpointError,
    load_collapsed,
    load_model,
    save_collapsed,
    save_model,
    sniff,
)
from logicseq.collapsed import collapse_model, hard_forward_teacher
from logicseq.model import Seq2SeqModel, forward_teacher


def test_soft_roundtrip_bit_exact(tmp_path, tiny_model, tiny_batch):
    path = tmp_path / "model.rdlg"
    save_model(tiny_model, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.embedding, tiny_model.embedding)
    for g in "nklpm":
        for la, lb in zip(loaded.groups[g], tiny_model.groups[g]):
            assert np.array_equal(la.logits, lb.logits)
            assert np.array_equal(la.conn_a, lb.conn_a)
            assert np.array_equal(la.conn_b, lb.conn_b)
    # file-level: saving the loaded model reproduces identical bytes
    path2 = tmp_path / "model2.rdlg"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_soft_roundtrip_preserves_forward(tmp_path, tiny_model, tiny_batch):
    src, tgt_in, _, _ = tiny_batch
    before = forward_teacher(tiny_model, src, tgt_in)
    path = tmp_path / "m.rdlg"
    save_model(tiny_model, path)
    after = forward_teacher(load_model(path), src, tgt_in)
    assert np.array_equal(before.probs, after.probs)


def test_collapsed_roundtrip_bit_exact(tmp_path, tiny_model, tiny_batch):
    cmodel = collapse_model(tiny_model)
    path = tmp_path / "model.rdlgc"
    save_collapsed(cmodel, path)
    loaded = load_collapsed(path)
    assert np.array_equal(loaded.emb_bits, cmodel.emb_bits)
    for g in "nklpm":
        for la, lb in zip(loaded.groups[g], cmodel.groups[g]):
            assert np.array_equal(la.gates, lb.gates)
            assert np.array_equal(la.conn_a, lb.conn_a)
    path2 = tmp_path / "model2.rdlgc"
    save_collapsed(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()
    src, tgt_in = tiny_batch[0], tiny_batch[1]
    assert np.array_equal(
        hard_forward_teacher(cmodel, src, tgt_in),
        hard_forward_teacher(loaded, src, tgt_in),
    )


def test_magic_bytes(tmp_path, tiny_model):
    soft = tmp_path / "a.rdlg"
    save_model(tiny_model, soft)
    assert soft.read_bytes()[:5] == b"RDLG1"
    assert sniff(soft) == "soft"
    hard = tmp_path / "a.rdlgc"
    save_collapsed(collapse_model(tiny_model), hard)
    assert hard.read_bytes()[:6] == b"RDLGC1"
    assert sniff(hard) == "collapsed"


def test_layer_block_layout_is_little_endian(tmp_path, tiny_model):
    """Header (in_dim, width) u64 LE, conn u32 LE, logits f64 LE, in order."""
    path = tmp_path / "m.rdlg"
    save_model(tiny_model, path)
    buf = path.read_bytes()
    import json
    import struct

    jlen = struct.unpack("<Q", buf[5:13])[0]
    off = 13 + jlen
    cfg = tiny_model.config
    emb_bytes = cfg.vocab_size * cfg.emb_dim * 8
    emb = np.frombuffer(buf[off : off + emb_bytes], dtype="<f8")
    assert np.array_equal(emb.reshape(cfg.vocab_size, cfg.emb_dim), tiny_model.embedding)
    off += emb_bytes
    first = tiny_model.groups["n"][0]
    in_dim, width = struct.unpack("<QQ", buf[off : off + 16])
    assert (in_dim, width) == (first.in_dim, first.width)
    off += 16
    conn_a = np.frombuffer(buf[off : off + 4 * width], dtype="<u4")
    assert np.array_equal(conn_a, first.conn_a)


def test_corruption_detected(tmp_path, tiny_model):
    path = tmp_path / "m.rdlg"
    save_model(tiny_model, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_model(path)


def test_truncation_detected(tmp_path, tiny_model):
    path = tmp_path / "m.rdlg"
    save_model(tiny_model, path)
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(CheckpointError):
        load_model(path)


def test_wrong_magic_rejected(tmp_path, tiny_model):
    path = tmp_path / "m.rdlg"
    save_model(tiny_model, path)
    with pytest.raises(CheckpointError, match="magic"):
        load_collapsed(path)


def test_float32_model_roundtrip(tmp_path):
    cfg = tiny_config(dtype="float32")
    model = Seq2SeqModel(cfg)
    assert model.embedding.dtype == np.float32
    path = tmp_path / "m32.rdlg"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.embedding.dtype == np.float32
    assert np.array_equal(loaded.embedding, model.embedding)
    path2 = tmp_path / "m32b.rdlg"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()
