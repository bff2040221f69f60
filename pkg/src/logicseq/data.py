"""Corpus handling: tokenisation, vocabulary, padded pairs, batching, metrics.

Tokenisation is word level: text is lowercased, maximal runs of letters or
digits become tokens and every other non-space character is its own token.
Sequences are encoded against a frequency-ranked vocabulary with four fixed
specials (PAD=0, BOS=1, EOS=2, UNK=3), truncated or padded to the model
sequence length, and grouped into batches of roughly constant token count.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

# letter/digit runs | single punctuation (non-word, non-space) | underscore
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_")


class DataError(ValueError):
    """Invalid corpus, vocabulary or batching input."""


def tokenize(text: str) -> list:
    """Lowercased word-level split; punctuation marks are their own tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bijective token <-> id map with the four specials at ids 0-3."""

    def __init__(self, tokens, capacity):
        if capacity < 5:
            raise DataError(f"vocab capacity must be >= 5, got {capacity}")
        self.capacity = int(capacity)
        self.id_to_token = list(SPECIALS) + list(tokens)
        if len(self.id_to_token) > capacity:
            raise DataError("token list exceeds vocab capacity")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens) -> list:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list:
        return [self.id_to_token[int(i)] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.id_to_token:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path, capacity=None):
        with open(path, encoding="utf-8") as f:
            toks = [line.rstrip("\n") for line in f]
        if toks[:4] != list(SPECIALS):
            raise DataError(f"vocabulary file {path} does not start with specials")
        return cls(toks[4:], capacity if capacity is not None else len(toks))


def build_vocab(corpus, capacity) -> Vocab:
    """Frequency-ranked vocabulary over an iterable of token lists.

    Ties break lexicographically, the top capacity-4 tokens are kept after
    the specials.  Deterministic for a fixed corpus.
    """
    counts = Counter()
    empty = True
    for tokens in corpus:
        empty = False
        counts.update(tokens)
    if empty:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: capacity - 4]]
    return Vocab(kept, capacity)


@dataclass
class PreparedPair:
    src_ids: np.ndarray     # (S,)
    tgt_in_ids: np.ndarray  # (S,) BOS-shifted
    tgt_out_ids: np.ndarray # (S,)
    src_mask: np.ndarray    # (S,) bool, True on non-pad
    tgt_mask: np.ndarray

    @property
    def n_target_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def _encode_padded(tokens, vocab, seq_len):
    """ids + EOS, truncated to seq_len keeping EOS, right-padded with PAD."""
    ids = vocab.encode(tokens)
    if len(ids) + 1 > seq_len:
        ids = ids[: seq_len - 1]
    ids = ids + [EOS_ID]
    ids = ids + [PAD_ID] * (seq_len - len(ids))
    return np.array(ids, dtype=np.int64)


def _shift_in(tgt_out):
    return np.concatenate([[BOS_ID], tgt_out[:-1]]).astype(np.int64)


def prepare_pair(src_tokens, tgt_tokens, vocab, seq_len):
    """Build a PreparedPair, or None for empty/all-pad rejects."""
    if not src_tokens or not tgt_tokens:
        return None
    src = _encode_padded(src_tokens, vocab, seq_len)
    tgt = _encode_padded(tgt_tokens, vocab, seq_len)
    src_mask = src != PAD_ID
    tgt_mask = tgt != PAD_ID
    if not src_mask.any() or not tgt_mask.any():
        return None
    return PreparedPair(src, _shift_in(tgt), tgt, src_mask, tgt_mask)


def make_shift_sample(tokens, shift, pad=PAD_ID):
    """Offset task: target is `shift` pads then the input minus its tail."""
    n = len(tokens)
    if not 0 <= shift < n:
        raise DataError(f"shift {shift} outside [0, {n})")
    if isinstance(tokens, np.ndarray):
        target = np.concatenate([np.full(shift, pad, tokens.dtype), tokens[: n - shift]])
    else:
        target = [pad] * shift + list(tokens[: n - shift])
    return tokens, target


def prepare_shift_pair(tokens, vocab, seq_len, shift):
    """Prepared pair for the monolingual shifted-target task."""
    if not tokens:
        return None
    src = _encode_padded(tokens, vocab, seq_len)
    _, tgt = make_shift_sample(src, shift)
    src_mask = src != PAD_ID
    tgt_mask = tgt != PAD_ID
    if not src_mask.any() or not tgt_mask.any():
        return None
    return PreparedPair(src, _shift_in(tgt), tgt, src_mask, tgt_mask)


def batch_by_tokens(pairs, budget, rng=None):
    """Greedy fixed-token batching.

    Fills each batch until adding a pair would push the non-pad target
    token count past `budget`; every pair appears in exactly one batch.
    Pass an rng to shuffle the fill order.
    """
    if budget < 1:
        raise DataError("token budget must be >= 1")
    order = list(range(len(pairs)))
    if rng is not None:
        rng.shuffle(order)
    batches, current, count = [], [], 0
    for i in order:
        pair = pairs[i]
        n = pair.n_target_tokens
        if current and count + n > budget:
            batches.append(current)
            current, count = [], 0
        current.append(pair)
        count += n
    if current:
        batches.append(current)
    return batches


def stack_batch(batch):
    """Collate a list of PreparedPair into (src, tgt_in, tgt_out, tgt_mask)."""
    src = np.stack([p.src_ids for p in batch])
    tgt_in = np.stack([p.tgt_in_ids for p in batch])
    tgt_out = np.stack([p.tgt_out_ids for p in batch])
    mask = np.stack([p.tgt_mask for p in batch])
    return src, tgt_in, tgt_out, mask


# --- metrics -----------------------------------------------------------------


def token_accuracy(preds, targets, pad_mask) -> float:
    """Fraction of non-pad positions predicted exactly.

    `preds` may be token ids of the target shape or a probability/score
    array with one trailing vocabulary axis (argmax is taken).
    """
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.ndim == targets.ndim + 1:
        preds = preds.argmax(axis=-1)
    if preds.shape != targets.shape:
        raise DataError("prediction/target shape mismatch")
    mask = np.asarray(pad_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise DataError("no non-pad positions to score")
    return float((preds[mask] == targets[mask]).sum() / n)


def perplexity(probs, targets, pad_mask) -> float:
    """exp(mean NLL) over non-pad targets, natural log, no smoothing."""
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    mask = np.asarray(pad_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise DataError("no non-pad positions to score")
    p = np.take_along_axis(probs, targets[..., None], axis=-1)[..., 0]
    nll = -np.log(np.maximum(p[mask], 1e-12))
    return float(np.exp(nll.mean()))


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references) -> float:
    """Corpus BLEU in [0, 100]: modified 1..4-gram precision, geometric
    mean, brevity penalty; zero match counts take add-one smoothing."""
    if len(hypotheses) != len(references):
        raise DataError("hypotheses/references must align")
    if not hypotheses:
        raise DataError("empty corpus")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            hc = _ngram_counts(hyp, n)
            rc = _ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1
        if t == 0:
            return 0.0
        log_p += np.log(m / t)
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / max(hyp_len, 1)))
    return float(100.0 * bp * np.exp(log_p / 4.0))
