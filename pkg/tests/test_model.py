import math

import numpy as np
import pytest

from conftest import tiny_config
from logicseq.gates import Gate
from logicseq.layers import NodeInit, forward_soft
from logicseq.model import (
    ConfigError,
    HiddenInit,
    ModelConfig,
    Seeds,
    Seq2SeqModel,
    decode_teacher_forced,
    embed_hard,
    embed_relax,
    embedding_param_count,
    embedding_reg_loss,
    encode,
    forward_teacher,
    gate_count,
    generate,
    group_input_dims,
    group_sum,
    logit_param_counts,
    model_backward,
    total_trainable_params,
    validate_config,
)


def table1_config():
    return ModelConfig(
        vocab_size=16000,
        emb_dim=1024,
        seq_len=16,
        sizes_n=[12000, 12000],
        sizes_k=[54000, 32000],
        sizes_l=[12000, 12000],
        sizes_p=[64000, 48000],
        sizes_m=[400000, 400000, 480000],
        group_factor=30,
    )


# --- config / shape audit ---------------------------------------------------


def test_table1_preset_validates():
    cfg = table1_config()
    validate_config(cfg)
    assert cfg.sizes_m[-1] == 480000 == 16000 * 30


def test_table1_accounting():
    cfg = table1_config()
    counts = logit_param_counts(cfg)
    assert counts == {
        "n": 384000,      # 24K * 16
        "k": 1376000,     # 86K * 16 = 1.376M
        "l": 384000,
        "p": 1792000,     # 112K * 16
        "m": 20480000,    # 1.28M * 16
    }
    assert embedding_param_count(cfg) == 16384000  # 1024 x 16000
    assert gate_count(cfg) == 1526000
    assert total_trainable_params(cfg) == 40800000


def test_group_input_dims_wiring():
    cfg = table1_config()
    dims = group_input_dims(cfg)
    assert dims["n"] == [1024, 12000]
    assert dims["k"] == [12000 + 32000, 54000]
    assert dims["l"] == [1024, 12000]
    assert dims["p"] == [48000 + 32000 + 12000, 64000]
    assert dims["m"] == [48000 + 32000 + 12000, 400000, 400000]


def test_validate_rejects_bad_group_sum_width():
    with pytest.raises(ConfigError, match="group_factor"):
        validate_config(tiny_config(sizes_m=[10, 15]))


@pytest.mark.parametrize(
    "overrides",
    [
        dict(vocab_size=4),
        dict(emb_dim=1),
        dict(seq_len=0),
        dict(group_factor=0),
        dict(groupsum_tau=0.0),
        dict(sizes_n=[]),
        dict(sizes_k=[1, 6]),  # width-1 feeding another layer
        dict(dropout={"bogus": 0.1}),
        dict(dropout={"n": 1.0}),
        dict(dtype="float16"),
    ],
)
def test_validate_rejects_violations(overrides):
    with pytest.raises(ConfigError):
        validate_config(tiny_config(**overrides))


def test_model_construction_deterministic():
    a = Seq2SeqModel(tiny_config())
    b = Seq2SeqModel(tiny_config())
    assert np.array_equal(a.embedding, b.embedding)
    for g in "nklpm":
        for la, lb in zip(a.groups[g], b.groups[g]):
            assert np.array_equal(la.logits, lb.logits)
            assert np.array_equal(la.conn_a, lb.conn_a)


# --- embedding ----------------------------------------------------------------


def test_embed_relax_values():
    E = np.zeros((4, 3))
    E[1] = [-1.2, 0.0, 2.0]
    x = embed_relax(E, np.array([0, 1, 1]))
    assert np.allclose(x[0], 0.5)
    assert x[1, 0] == pytest.approx(1 / (1 + math.exp(1.2)), rel=1e-12)
    assert np.array_equal(x[1], x[2])  # equal ids give identical rows


def test_embed_relax_rejects_large_id():
    with pytest.raises(ValueError):
        embed_relax(np.zeros((4, 3)), np.array([4]))


def test_embed_hard_values():
    E = np.array([[-1.2, 0.3], [0.0, -0.0]])
    bits = embed_hard(E, np.array([0, 1]))
    assert bits.tolist() == [[0, 1], [1, 1]]  # >= 0 convention: zero maps to 1


def test_embed_hard_equals_rounded_relax_off_boundary():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(10, 6))
    E[np.abs(E) < 1e-9] = 0.5
    ids = np.arange(10)
    hard = embed_hard(E, ids)
    soft = embed_relax(E, ids)
    assert np.array_equal(hard, np.rint(soft).astype(np.uint8))


def test_embedding_reg_loss_values():
    assert embedding_reg_loss(np.full((3, 4), 0.5)) == 0.25
    assert embedding_reg_loss(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0
    assert embedding_reg_loss(np.array([[0.2, 0.8]])) == pytest.approx(0.16, rel=1e-12)


# --- group sum -----------------------------------------------------------------


def test_group_sum_example():
    out = group_sum(np.array([1.0, 0.0, 1.0, 1.0]), 2, 2.0)
    assert out.tolist() == [0.5, 1.0]


def test_group_sum_tau_one_is_plain_sum():
    v = np.arange(12, dtype=float)
    assert np.array_equal(group_sum(v, 3, 1.0), v.reshape(4, 3).sum(1))


def test_group_sum_argmax_invariant_under_tau():
    rng = np.random.default_rng(2)
    v = rng.random(40)
    ref = np.argmax(group_sum(v, 4, 1.0))
    for tau in (0.25, 0.5, 1, 2, 4, 8):
        assert np.argmax(group_sum(v, 4, tau)) == ref


def test_group_sum_rejects_indivisible():
    with pytest.raises(ValueError):
        group_sum(np.ones(10), 3, 1.0)


# --- forward ------------------------------------------------------------------


def test_encode_shape_and_determinism(tiny_model, tiny_batch):
    src = tiny_batch[0]
    out1, _ = encode(tiny_model, src)
    tiny_model.reset_streams()
    out2, _ = encode(tiny_model, src)
    assert out1.context.shape == (2, 6)
    assert np.array_equal(out1.context, out2.context)
    assert np.all(out1.context >= 0) and np.all(out1.context <= 1)


def test_encode_rejects_wrong_length(tiny_model):
    with pytest.raises(ValueError):
        encode(tiny_model, np.array([1, 2]))


def test_encode_matches_hand_unrolled_oracle():
    cfg = tiny_config(seq_len=2, hidden_init=HiddenInit(kind="zero"))
    model = Seq2SeqModel(cfg)
    src = np.array([[4, 5]])
    out, _ = encode(model, src)

    # independent unrolled composition of layer forwards
    x = embed_relax(model.embedding, src)
    k = np.zeros((1, 6))
    for t in range(2):
        h = x[:, t]
        for layer in model.groups["n"]:
            h, _ = forward_soft(layer, h)
        kin = np.concatenate([h, k], axis=1)
        k = kin
        for layer in model.groups["k"]:
            k, _ = forward_soft(layer, k)
    assert np.allclose(out.context, k, atol=1e-12)


def test_decode_probs_sum_to_one(tiny_model, tiny_batch):
    src, tgt_in, _, _ = tiny_batch
    out, _ = encode(tiny_model, src)
    dec = decode_teacher_forced(tiny_model, out.context, tgt_in)
    assert np.allclose(dec["probs"].sum(-1), 1.0, atol=1e-9)


def test_decode_matches_hand_unrolled_oracle():
    cfg = tiny_config(seq_len=2, hidden_init=HiddenInit(kind="zero"))
    model = Seq2SeqModel(cfg)
    src = np.array([[4, 5]])
    tgt_in = np.array([[1, 4]])
    out, _ = encode(model, src)
    dec = decode_teacher_forced(model, out.context, tgt_in)

    y = embed_relax(model.embedding, tgt_in)
    p = np.zeros((1, 6))
    scores = []
    for t in range(2):
        l = y[:, t]
        for layer in model.groups["l"]:
            l, _ = forward_soft(layer, l)
        pin = np.concatenate([p, out.context, l], axis=1)
        p = pin
        for layer in model.groups["p"]:
            p, _ = forward_soft(layer, p)
        m = np.concatenate([p, out.context, l], axis=1)
        for layer in model.groups["m"]:
            m, _ = forward_soft(layer, m)
        scores.append(group_sum(m, cfg.group_factor, cfg.groupsum_tau))
    assert np.allclose(dec["scores"], np.stack(scores, axis=1), atol=1e-12)


def test_uniform_final_m_logits_give_uniform_probs(tiny_model, tiny_batch):
    src, tgt_in, _, _ = tiny_batch
    tiny_model.groups["m"][-1].set_logits(np.zeros_like(tiny_model.groups["m"][-1].logits))
    res = forward_teacher(tiny_model, src, tgt_in)
    assert np.allclose(res.probs, 1.0 / 8, atol=1e-12)


def test_forward_teacher_deterministic_across_fresh_models(tiny_batch):
    src, tgt_in, _, _ = tiny_batch
    a = forward_teacher(Seq2SeqModel(tiny_config()), src, tgt_in)
    b = forward_teacher(Seq2SeqModel(tiny_config()), src, tgt_in)
    assert np.array_equal(a.probs, b.probs)
    assert a.l_emb == b.l_emb


def test_activations_stay_in_unit_interval(tiny_model, tiny_batch):
    src, tgt_in, _, _ = tiny_batch
    res = forward_teacher(tiny_model, src, tgt_in)
    for calls in (res.tapes.enc_n, res.tapes.enc_k, res.tapes.dec_l,
                  res.tapes.dec_p, res.tapes.dec_m):
        for call in calls:
            for tape in call.tapes:
                assert np.all(tape.y >= 0.0) and np.all(tape.y <= 1.0)


# --- backward ------------------------------------------------------------------


def test_backward_zero_grad_gives_zero(tiny_model, tiny_batch):
    src, tgt_in, _, _ = tiny_batch
    res = forward_teacher(tiny_model, src, tgt_in)
    grads = model_backward(tiny_model, res.tapes, np.zeros_like(res.scores))
    for v in grads.values():
        assert not v.any()


def test_backward_matches_finite_differences(tiny_batch):
    cfg = tiny_config(hidden_init=HiddenInit(kind="zero"))
    model = Seq2SeqModel(cfg)
    src, tgt_in, tgt_out, mask = tiny_batch

    def loss():
        res = forward_teacher(model, src, tgt_in)
        p = np.take_along_axis(res.probs, tgt_out[..., None], -1)[..., 0]
        return float(-np.log(p).mean()), res

    _, res = loss()
    onehot = np.zeros_like(res.probs)
    np.put_along_axis(onehot, tgt_out[..., None], 1.0, -1)
    grad_scores = (res.probs - onehot) / tgt_out.size
    grads = model_backward(model, res.tapes, grad_scores)

    rng = np.random.default_rng(0)
    h = 1e-5
    worst = 0.0
    for name, arr in model.parameters().items():
        flat = arr.ravel()
        gflat = grads[name].ravel()
        for i in rng.choice(flat.size, size=min(12, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            model.bump_param_versions()
            up, _ = loss()
            flat[i] = old - h
            model.bump_param_versions()
            down, _ = loss()
            flat[i] = old
            model.bump_param_versions()
            fd = (up - down) / (2 * h)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-5)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_context_gradient_matches_unrolled_oracle():
    cfg = tiny_config(hidden_init=HiddenInit(kind="zero"))
    model = Seq2SeqModel(cfg)
    rng = np.random.default_rng(3)
    src = rng.integers(4, 8, size=(1, 3))
    tgt_in = np.array([[1, 4, 5]])
    out, _ = encode(model, src)
    c = out.context.copy()
    p0 = np.zeros((1, 6))
    grad_scores = rng.normal(size=(1, 3, 8))

    res = forward_teacher(model, src, tgt_in, p0=p0)
    aux = {}
    model_backward(model, res.tapes, grad_scores, aux_out=aux)

    def decode_loss(cv):
        dec = decode_teacher_forced(model, cv, tgt_in, p0=p0)
        return float((dec["scores"] * grad_scores).sum())

    h = 1e-6
    for i in range(c.shape[1]):
        cp = c.copy()
        cp[0, i] += h
        up = decode_loss(cp)
        cp[0, i] -= 2 * h
        down = decode_loss(cp)
        fd = (up - down) / (2 * h)
        assert abs(fd - aux["context"][0, i]) < 1e-6 * max(1.0, abs(fd))


def test_embedding_rows_of_unused_tokens_get_no_gradient(tiny_model, tiny_batch):
    src, tgt_in, tgt_out, mask = tiny_batch
    res = forward_teacher(tiny_model, src, tgt_in)
    grads = model_backward(tiny_model, res.tapes, np.ones_like(res.scores))
    used = set(np.unique(src)) | set(np.unique(tgt_in))
    for tok in range(8):
        if tok not in used:
            assert not grads["embedding"][tok].any()


# --- generation -----------------------------------------------------------------


def test_generate_is_deterministic(tiny_model, tiny_batch):
    src = tiny_batch[0][0]
    tiny_model.reset_streams()
    a = generate(tiny_model, src, max_len=6)
    tiny_model.reset_streams()
    b = generate(tiny_model, src, max_len=6)
    assert a == b


def test_generate_stops_at_eos_or_max_len(tiny_batch):
    cfg = tiny_config(hidden_init=HiddenInit(kind="zero"))
    model = Seq2SeqModel(cfg)
    # force the M head to always score token 7 highest: group 7 gates TRUE,
    # everything else FALSE
    last = model.groups["m"][-1]
    logits = np.zeros_like(last.logits)
    logits[:, Gate.FALSE] = 80.0
    logits[14:16, Gate.FALSE] = 0.0
    logits[14:16, Gate.TRUE] = 80.0  # group 7 spans the last k=2 neurons
    last.set_logits(logits)
    out = generate(model, tiny_batch[0][0], max_len=5)
    assert out == [7, 7, 7, 7, 7]
