"""Scratch: gap experiments round 2 (not shipped)."""
import json
import sys

import numpy as np

from logicseq.config import parse_run_config, resolve_config_path, build_dataset
from logicseq.model import Seq2SeqModel
from logicseq.training import AdamW, total_loss_and_grads, evaluate_soft, plateau_update
from logicseq.data import batch_by_tokens, stack_batch
from exp_gap import hard_acc, mixture_sharpness


def run(tag, w_emb, w_gate, gumbel_tau=None, steps=6000, emb_scale=4.0,
        eval_every=1000, sentences=128, mutate=None):
    with open(resolve_config_path("toy-copy")) as f:
        doc = json.load(f)
    doc["model"]["hidden_init"] = {"kind": "zero"}
    doc["model"]["node_init"] = {"kind": "residual", "sigma": 1.0, "beta": 2.0}
    doc["model"]["groupsum_tau"] = 0.25
    doc["model"]["group_factor"] = 24
    doc["model"]["sizes_m"] = [512, 1200]
    doc["data"]["sentences"] = sentences
    aux = [{"loss_id": "embedding_reg", "ramp_start_step": 100,
            "ramp_end_step": 1500, "w_max": w_emb}]
    if w_gate:
        aux.append({"loss_id": "gate_entropy", "ramp_start_step": 500,
                    "ramp_end_step": 3000, "w_max": w_gate})
    doc["loss"]["aux"] = aux
    if gumbel_tau:
        doc["model"]["gumbel"] = {"enabled": True, "tau": gumbel_tau}
    if mutate:
        mutate(doc)
    runc = parse_run_config(doc)
    ds = build_dataset(runc)
    model = Seq2SeqModel(runc.model)
    model.embedding *= emb_scale
    opt = AdamW(model.parameters(), runc.optimizer)
    sched = runc.scheduler.build(eval_every)
    step = 0
    for epoch in range(10**6):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=runc.model.seeds.data, spawn_key=(epoch,)))
        for batch in batch_by_tokens(ds.train_pairs, runc.train.batch_tokens, rng):
            step += 1
            loss, grads, parts = total_loss_and_grads(
                model, stack_batch(batch), runc.loss, step)
            opt.step(model.parameters(), grads)
            model.bump_param_versions()
            if step % eval_every == 0:
                val = evaluate_soft(model, ds.val_pairs, runc.loss, 512)
                opt.lr = plateau_update(sched, val["loss"], opt.lr)
                ha = hard_acc(model, ds)
                x = 1 / (1 + np.exp(-model.embedding))
                l_emb = float(np.mean(x * (1 - x)))
                sharp = mixture_sharpness(model)
                print(
                    f"[{tag}] step {step} soft {val['acc']:.4f} hard {ha:.4f} "
                    f"l_emb {l_emb:.4f} pmax "
                    + " ".join(f"{g}:{v:.2f}" for g, v in sharp.items()),
                    flush=True,
                )
            if step >= steps:
                return model, ds, runc


def bit_divergence(model, ds, n_seq=64):
    """Fraction of bits where hard-mode differs from rounded soft-mode, per stage."""
    from logicseq import collapsed as C
    from logicseq import model as M

    cm = C.collapse_model(model)
    cfg = model.config
    src = np.stack([p.src_ids for p in ds.val_pairs[:n_seq]])
    tgt_in = np.stack([p.tgt_in_ids for p in ds.val_pairs[:n_seq]])
    B = src.shape[0]

    # soft side (eval mode, zero hidden init assumed)
    enc_out, enc_tapes = M.encode(model, src, train=False)
    dec = M.decode_teacher_forced(model, enc_out.context, tgt_in, train=False)

    # hard side, stage by stage
    report = {}
    k_prev = C.zero_lanes(cfg.sizes_k[-1], B)
    for t in range(cfg.seq_len):
        h = C._run_group_packed(cm, "n", C._embed_packed(cm, src[:, t]))
        soft_h = enc_tapes["enc_n"][t].tapes[-1].y
        report.setdefault("n", []).append(
            float(np.mean(C.unpack_lanes(h) != np.rint(soft_h)))
        )
        k_prev = C._run_group_packed(cm, "k", C.concat_lanes([h, k_prev]))
        soft_k = enc_tapes["enc_k"][t].tapes[-1].y
        report.setdefault(f"k_t{t}", []).append(
            float(np.mean(C.unpack_lanes(k_prev) != np.rint(soft_k)))
        )
    c = k_prev
    p_prev = C.zero_lanes(cfg.sizes_p[-1], B)
    for t in range(cfg.seq_len):
        l_out = C._run_group_packed(cm, "l", C._embed_packed(cm, tgt_in[:, t]))
        report.setdefault("l", []).append(
            float(np.mean(C.unpack_lanes(l_out) != np.rint(dec["dec_l"][t].tapes[-1].y)))
        )
        p_prev = C._run_group_packed(cm, "p", C.concat_lanes([p_prev, c, l_out]))
        report.setdefault(f"p_t{t}", []).append(
            float(np.mean(C.unpack_lanes(p_prev) != np.rint(dec["dec_p"][t].tapes[-1].y)))
        )
        m_out = C._run_group_packed(cm, "m", C.concat_lanes([p_prev, c, l_out]))
        report.setdefault(f"m_t{t}", []).append(
            float(np.mean(C.unpack_lanes(m_out) != np.rint(dec["dec_m"][t].tapes[-1].y)))
        )
    return {k: np.mean(v) for k, v in report.items()}
