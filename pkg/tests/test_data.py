import math
from collections import Counter

import numpy as np
import pytest

from logicseq.data import (
    BOS_ID,
    DataError,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    Vocab,
    batch_by_tokens,
    build_vocab,
    corpus_bleu,
    make_shift_sample,
    perplexity,
    prepare_pair,
    prepare_shift_pair,
    token_accuracy,
    tokenize,
)


def test_tokenize_basic():
    assert tokenize("The cat sat.") == ["the", "cat", "sat", "."]


def test_tokenize_splits_punctuation():
    assert tokenize("don't") == ["don", "'", "t"]
    assert tokenize("a,b") == ["a", ",", "b"]
    assert tokenize("x_y") == ["x", "_", "y"]


def test_tokenize_idempotent():
    for text in ["The cat sat.", "don't stop!", "a1 b2, c3?"]:
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once


def test_tokenize_empty():
    assert tokenize("") == []
    assert tokenize("   \n\t ") == []


def test_tokenize_digits_stay_with_letters():
    assert tokenize("w07 w13") == ["w07", "w13"]


def test_build_vocab_ranking_and_specials():
    vocab = build_vocab([["a", "a", "b"]], 6)
    assert len(vocab) == 6
    assert vocab.token_to_id == {
        "<pad>": 0, "<bos>": 1, "<eos>": 2, "<unk>": 3, "a": 4, "b": 5,
    }
    assert vocab.encode(["a", "zzz"]) == [4, UNK_ID]


def test_build_vocab_tie_breaks_lexicographically():
    vocab = build_vocab([["b", "a", "c"]], 6)
    # all frequency 1: 'a' < 'b' < 'c'; capacity keeps two
    assert vocab.encode(["a", "b", "c"]) == [4, 5, UNK_ID]


def test_build_vocab_deterministic():
    corpus = [["x", "y", "x"], ["z"]]
    a = build_vocab(corpus, 8)
    b = build_vocab(corpus, 8)
    assert a.id_to_token == b.id_to_token


def test_build_vocab_rejects_tiny_capacity_and_empty():
    with pytest.raises(DataError):
        build_vocab([["a"]], 4)
    with pytest.raises(DataError):
        build_vocab([], 10)


def test_vocab_roundtrip_through_file(tmp_path):
    vocab = build_vocab([["cat", "sat", "cat"]], 8)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocab.load(path, 8)
    assert loaded.id_to_token == vocab.id_to_token


def test_decode_encode_roundtrip_modulo_unk():
    vocab = build_vocab([["a", "b"]], 6)
    toks = ["a", "b", "mystery"]
    assert vocab.decode(vocab.encode(toks)) == ["a", "b", "<unk>"]


def test_prepare_pair_short_source():
    vocab = build_vocab([["a", "b", "c"]], 8)
    pair = prepare_pair(["a", "b", "c"], ["c", "b", "a"], vocab, 16)
    assert pair.src_ids.tolist()[:4] == vocab.encode(["a", "b", "c"]) + [EOS_ID]
    assert pair.src_ids.tolist()[4:] == [PAD_ID] * 12
    assert pair.tgt_in_ids[0] == BOS_ID
    assert pair.tgt_in_ids.tolist()[1:] == pair.tgt_out_ids.tolist()[:-1]
    assert pair.tgt_mask.sum() == 4


def test_prepare_pair_truncates_keeping_eos():
    vocab = build_vocab([[f"t{i}" for i in range(30)]], 40)
    toks = [f"t{i}" for i in range(20)]
    pair = prepare_pair(toks, toks, vocab, 16)
    assert len(pair.src_ids) == 16
    assert pair.src_ids[-1] == EOS_ID
    assert (pair.src_ids != PAD_ID).all()
    # first 15 tokens kept
    assert pair.src_ids.tolist()[:15] == vocab.encode(toks[:15])


def test_prepare_pair_rejects_empty():
    vocab = build_vocab([["a"]], 6)
    assert prepare_pair([], ["a"], vocab, 8) is None
    assert prepare_pair(["a"], [], vocab, 8) is None


def test_make_shift_sample_paper_example():
    tokens = ["the", "cat", "sat", "on", "the", "mat"]
    inp, tgt = make_shift_sample(tokens, 2, pad="<pad>")
    assert inp == tokens
    assert tgt == ["<pad>", "<pad>", "the", "cat", "sat", "on"]


def test_make_shift_sample_zero_is_copy():
    ids = np.array([5, 6, 7, 2, 0, 0])
    _, tgt = make_shift_sample(ids, 0)
    assert np.array_equal(tgt, ids)


def test_make_shift_sample_max_shift():
    ids = np.arange(1, 9)
    _, tgt = make_shift_sample(ids, 7)
    assert tgt.tolist() == [PAD_ID] * 7 + [1]


def test_make_shift_sample_bad_shift():
    with pytest.raises(DataError):
        make_shift_sample(np.arange(4), 4)


def test_make_shift_sample_pad_prefix_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        f = int(rng.integers(0, n))
        ids = rng.integers(4, 50, size=n)
        _, tgt = make_shift_sample(ids, f)
        assert (tgt[:f] == PAD_ID).all()
        assert np.array_equal(tgt[f:], ids[: n - f])


def test_prepare_shift_pair_masks_pad_targets():
    vocab = build_vocab([["a", "b", "c", "d"]], 10)
    pair = prepare_shift_pair(["a", "b", "c", "d"], vocab, 8, 2)
    # src: a b c d EOS PAD PAD PAD; tgt: PAD PAD a b c d EOS PAD
    assert pair.tgt_out_ids.tolist()[:2] == [PAD_ID, PAD_ID]
    assert pair.tgt_mask.tolist() == [False, False, True, True, True, True, True, False]


def test_batch_by_tokens_uniform_lengths():
    vocab = build_vocab([[f"t{i}" for i in range(20)]], 30)
    toks = [f"t{i % 20}" for i in range(15)]
    pairs = [prepare_pair(toks, toks, vocab, 16) for _ in range(200)]
    batches = batch_by_tokens(pairs, 1024)
    assert all(len(b) == 64 for b in batches[:-1])  # 1024/16
    assert sum(len(b) for b in batches) == 200


def test_batch_by_tokens_is_partition():
    vocab = build_vocab([["a", "b", "c"]], 8)
    rng = np.random.default_rng(1)
    pairs = []
    for i in range(37):
        n = int(rng.integers(1, 4))
        pairs.append(prepare_pair(["a"] * n, ["b"] * n, vocab, 8))
    batches = batch_by_tokens(pairs, 16, np.random.default_rng(0))
    flat = [id(p) for b in batches for p in b]
    assert sorted(flat) == sorted(id(p) for p in pairs)
    for b in batches:
        assert sum(p.n_target_tokens for p in b) <= 16 or len(b) == 1


def test_batch_single_pair():
    vocab = build_vocab([["a"]], 6)
    pair = prepare_pair(["a"], ["a"], vocab, 8)
    assert batch_by_tokens([pair], 100) == [[pair]]


def test_token_accuracy_examples():
    targets = np.array([5, 7, PAD_ID, PAD_ID])
    mask = targets != PAD_ID
    preds = np.array([5, 2, 9, 9])
    assert token_accuracy(preds, targets, mask) == 0.5
    assert token_accuracy(targets, targets, mask) == 1.0


def test_token_accuracy_takes_argmax_of_probs():
    probs = np.array([[0.1, 0.7, 0.2], [0.5, 0.3, 0.2]])
    targets = np.array([1, 2])
    assert token_accuracy(probs, targets, np.array([True, True])) == 0.5


def test_token_accuracy_random_rate():
    rng = np.random.default_rng(0)
    v = 100
    n = 1_000_000
    preds = rng.integers(0, v, size=n)
    targets = rng.integers(0, v, size=n)
    acc = token_accuracy(preds, targets, np.ones(n, bool))
    p = 1 / v
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(acc - p) < 3 * sigma


def test_token_accuracy_all_pad_errors():
    with pytest.raises(DataError):
        token_accuracy(np.array([1]), np.array([1]), np.array([False]))


def test_perplexity_uniform_and_perfect():
    v = 16000
    probs = np.full((4, v), 1 / v)
    targets = np.array([3, 5, 9, 100])
    mask = np.ones(4, bool)
    assert perplexity(probs, targets, mask) == pytest.approx(v, rel=1e-9)
    perfect = np.zeros((2, v))
    perfect[0, 7] = 1.0
    perfect[1, 9] = 1.0
    assert perplexity(perfect, np.array([7, 9]), np.ones(2, bool)) == pytest.approx(1.0)


def test_perplexity_hand_case():
    probs = np.array([[0.5, 0.25, 0.25], [0.125, 0.75, 0.125]])
    targets = np.array([0, 1])
    expect = math.exp(-(math.log(0.5) + math.log(0.75)) / 2)
    assert perplexity(probs, targets, np.ones(2, bool)) == pytest.approx(expect, rel=1e-12)


def _reference_bleu(hyps, refs):
    """Independent oracle: same convention, different implementation route."""
    log_sum = 0.0
    for n in range(1, 5):
        match = 0
        total = 0
        for hyp, ref in zip(hyps, refs):
            h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
            r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
            match += sum(min(v, r[g]) for g, v in h.items())
            total += max(0, len(hyp) - n + 1)
        if match == 0:
            match, total = 1, total + 1
        log_sum += math.log(match / total)
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / 4)


def test_bleu_perfect_match_is_100():
    hyps = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
    assert corpus_bleu(hyps, hyps) == pytest.approx(100.0)


def test_bleu_no_overlap_is_near_zero():
    # corpus scale: add-one smoothing alone cannot lift disjoint outputs
    hyps = [["a", "b", "c", "d", "e", "f", "g", "h"] for _ in range(50)]
    refs = [["w", "x", "y", "z", "u", "v", "s", "t"] for _ in range(50)]
    score = corpus_bleu(hyps, refs)
    assert 0.0 < score < 1.0


def test_bleu_single_pair_cross_check():
    hyps = [["a", "b", "c", "d"]]
    refs = [["a", "b", "c", "e"]]
    got = corpus_bleu(hyps, refs)
    assert got == pytest.approx(_reference_bleu(hyps, refs), rel=1e-12)
    # frozen value: (3/4 * 2/3 * 1/2 * 1/2) ** 0.25 = 0.125 ** 0.25
    assert got == pytest.approx(100 * 0.125**0.25, rel=1e-12)


def test_bleu_random_cases_match_reference():
    rng = np.random.default_rng(3)
    letters = list("abcdefgh")
    for _ in range(20):
        hyps, refs = [], []
        for _ in range(4):
            hyps.append([letters[i] for i in rng.integers(0, 8, rng.integers(1, 10))])
            refs.append([letters[i] for i in rng.integers(0, 8, rng.integers(1, 10))])
        assert corpus_bleu(hyps, refs) == pytest.approx(
            _reference_bleu(hyps, refs), rel=1e-12
        )


def test_bleu_empty_corpus_errors():
    with pytest.raises(DataError):
        corpus_bleu([], [])
