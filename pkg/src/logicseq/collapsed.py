"""Collapsed (discrete) models and bit-packed word-parallel evaluation.

After training, each neuron keeps only its argmax gate and the embedding
table is binarised through a Heaviside step, leaving a pure Boolean
sequential circuit.  Evaluation packs many independent samples ("lanes")
into machine words, so one bitwise op per neuron advances 64 samples at
once; per-class scores are popcounts over GroupSum groups and the argmax
replaces the softmax.

The collapsed recurrence starts from all-zero hidden bits: the training
time noise has no Boolean analogue and a fixed state keeps inference
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import BOS_ID, EOS_ID
from .gates import TRUTH_TABLES
from .layers import CollapsedLogicLayer, collapse_layer
from .model import GROUPS, ModelConfig, Seq2SeqModel, embed_hard

WORD_BITS = 64
_FULL = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass
class BitLanes:
    """`n_lanes` independent bit vectors packed along machine words.

    words[i, w] holds bit i of lanes 64w .. 64w+63; lane j rides bit j%64
    of word j//64 in every row, end to end through the circuit.
    """

    words: np.ndarray  # (dim, n_words) uint64
    n_lanes: int

    @property
    def dim(self) -> int:
        return self.words.shape[0]

    @property
    def n_words(self) -> int:
        return self.words.shape[1]


def lane_mask(n_lanes, n_words) -> np.ndarray:
    mask = np.full(n_words, _FULL, dtype=np.uint64)
    rem = n_lanes % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


def pack_lanes(bits) -> BitLanes:
    """Pack a (n_lanes, dim) {0,1} matrix; padding lanes are zero bits."""
    bits = np.ascontiguousarray(np.asarray(bits, dtype=np.uint8).T)
    dim, n_lanes = bits.shape
    n_words = max(1, -(-n_lanes // WORD_BITS))
    padded = np.zeros((dim, n_words * WORD_BITS), dtype=np.uint8)
    padded[:, :n_lanes] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return BitLanes(packed.view(np.uint64), n_lanes)


def unpack_lanes(lanes: BitLanes) -> np.ndarray:
    """Back to a (n_lanes, dim) uint8 matrix."""
    as_bytes = lanes.words.view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return bits[:, : lanes.n_lanes].T.copy()


def concat_lanes(parts) -> BitLanes:
    n = parts[0].n_lanes
    assert all(p.n_lanes == n for p in parts)
    return BitLanes(np.concatenate([p.words for p in parts], axis=0), n)


def zero_lanes(dim, n_lanes) -> BitLanes:
    n_words = max(1, -(-n_lanes // WORD_BITS))
    return BitLanes(np.zeros((dim, n_words), dtype=np.uint64), n_lanes)


def eval_bitpacked(clayer: CollapsedLogicLayer, lanes: BitLanes) -> BitLanes:
    """One collapsed layer over all lanes at once."""
    if lanes.dim != clayer.in_dim:
        raise ValueError(f"lanes dim {lanes.dim} != layer in_dim {clayer.in_dim}")
    out = _kernels.packed_eval(
        np.ascontiguousarray(lanes.words),
        clayer.conn_a,
        clayer.conn_b,
        clayer.gates,
        lane_mask(lanes.n_lanes, lanes.n_words),
    )
    return BitLanes(out, lanes.n_lanes)


def hard_group_scores(bits, k) -> np.ndarray:
    """Popcount per consecutive group of k bits."""
    bits = np.asarray(bits)
    if bits.shape[-1] % k != 0:
        raise ValueError(f"width {bits.shape[-1]} not divisible by {k}")
    return bits.reshape(*bits.shape[:-1], bits.shape[-1] // k, k).sum(-1).astype(np.int64)


def hard_classify(bits, k) -> int:
    """Argmax class of the popcount scores (lowest index wins ties)."""
    return int(np.argmax(hard_group_scores(bits, k)))


@dataclass
class CollapsedModel:
    config: ModelConfig
    emb_bits: np.ndarray  # (V, d) uint8
    groups: dict          # group -> [CollapsedLogicLayer]

    def gate_total(self) -> int:
        return sum(l.width for g in GROUPS for l in self.groups[g])


def collapse_model(model: Seq2SeqModel) -> CollapsedModel:
    """Argmax-select every gate and Heaviside-binarise the embeddings."""
    groups = {g: [collapse_layer(l) for l in model.groups[g]] for g in GROUPS}
    emb_bits = embed_hard(model.embedding, np.arange(model.config.vocab_size))
    return CollapsedModel(config=model.config, emb_bits=emb_bits, groups=groups)


def _run_group_packed(cmodel, group, lanes: BitLanes) -> BitLanes:
    for layer in cmodel.groups[group]:
        lanes = eval_bitpacked(layer, lanes)
    return lanes


def _embed_packed(cmodel, token_ids) -> BitLanes:
    return pack_lanes(cmodel.emb_bits[np.asarray(token_ids, dtype=np.int64)])


def _encode_packed(cmodel, src_ids) -> BitLanes:
    cfg = cmodel.config
    batch = src_ids.shape[0]
    k_prev = zero_lanes(cfg.sizes_k[-1], batch)
    for t in range(cfg.seq_len):
        h = _run_group_packed(cmodel, "n", _embed_packed(cmodel, src_ids[:, t]))
        k_prev = _run_group_packed(cmodel, "k", concat_lanes([h, k_prev]))
    return k_prev


def _decoder_scores(cmodel, m_lanes: BitLanes) -> np.ndarray:
    """(n_lanes, V) popcount scores from the packed M output."""
    bits = unpack_lanes(m_lanes)  # (n_lanes, V*k)
    return hard_group_scores(bits, cmodel.config.group_factor)


def hard_forward_teacher(cmodel, src_ids, tgt_in_ids) -> np.ndarray:
    """Teacher-forced hard predictions, (batch, S) argmax token ids."""
    cfg = cmodel.config
    src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
    tgt_in_ids = np.atleast_2d(np.asarray(tgt_in_ids, dtype=np.int64))
    batch = src_ids.shape[0]
    c = _encode_packed(cmodel, src_ids)
    p_prev = zero_lanes(cfg.sizes_p[-1], batch)
    preds = np.empty((batch, cfg.seq_len), dtype=np.int64)
    for t in range(cfg.seq_len):
        l_out = _run_group_packed(cmodel, "l", _embed_packed(cmodel, tgt_in_ids[:, t]))
        p_prev = _run_group_packed(
            cmodel, "p", concat_lanes([p_prev, c, l_out])
        )
        m_out = _run_group_packed(cmodel, "m", concat_lanes([p_prev, c, l_out]))
        preds[:, t] = np.argmax(_decoder_scores(cmodel, m_out), axis=1)
    return preds


def hard_generate_batch(cmodel, src_ids, max_len=None, *, bos_id=BOS_ID, eos_id=EOS_ID):
    """Greedy hard decoding across a batch, one lane per sequence."""
    cfg = cmodel.config
    src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
    if max_len is None:
        max_len = cfg.seq_len
    batch = src_ids.shape[0]
    c = _encode_packed(cmodel, src_ids)
    p_prev = zero_lanes(cfg.sizes_p[-1], batch)
    prev = np.full(batch, bos_id, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    out = np.full((batch, max_len), eos_id, dtype=np.int64)
    for t in range(max_len):
        l_out = _run_group_packed(cmodel, "l", _embed_packed(cmodel, prev))
        p_prev = _run_group_packed(cmodel, "p", concat_lanes([p_prev, c, l_out]))
        m_out = _run_group_packed(cmodel, "m", concat_lanes([p_prev, c, l_out]))
        tok = np.argmax(_decoder_scores(cmodel, m_out), axis=1)
        out[~done, t] = tok[~done]
        done |= tok == eos_id
        if done.all():
            out = out[:, : t + 1]
            break
        prev = tok
    return out


def hard_forward_seq(cmodel, src_ids, max_len=None) -> list:
    """Greedy hard decoding of one sequence; stops at EOS (included)."""
    row = hard_generate_batch(cmodel, np.asarray(src_ids)[None, :], max_len)[0]
    toks = [int(t) for t in row]
    if EOS_ID in toks:
        toks = toks[: toks.index(EOS_ID) + 1]
    return toks
