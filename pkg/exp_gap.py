"""Scratch: diagnose the soft->hard discretisation gap (not shipped)."""
import json
import numpy as np

from logicseq.config import parse_run_config, resolve_config_path, build_dataset
from logicseq.model import Seq2SeqModel
from logicseq.training import AdamW, total_loss_and_grads, evaluate_soft, plateau_update
from logicseq.data import batch_by_tokens, stack_batch
from logicseq import collapsed as C
from logicseq.layers import SoftLogicLayer, softmax


def hard_acc(model, ds, budget=512):
    cm = C.collapse_model(model)
    correct = total = 0
    for vb in batch_by_tokens(ds.val_pairs, budget):
        src, tgt_in, tgt_out, mask = stack_batch(vb)
        preds = C.hard_forward_teacher(cm, src, tgt_in)
        correct += int((preds[mask] == tgt_out[mask]).sum())
        total += int(mask.sum())
    return correct / total


def soft_acc_with(model, ds, run, *, harden_emb=False, harden_gates=False):
    import copy

    m2 = Seq2SeqModel(run.model)
    m2.embedding = model.embedding.copy()
    for g in m2.groups:
        for l2, l1 in zip(m2.groups[g], model.groups[g]):
            l2.conn_a = l1.conn_a.copy()
            l2.conn_b = l1.conn_b.copy()
            l2.set_logits(l1.logits.copy())
    if harden_emb:
        m2.embedding = np.where(model.embedding >= 0, 40.0, -40.0)
    if harden_gates:
        for g in m2.groups:
            for layer in m2.groups[g]:
                one_hot = np.zeros_like(layer.logits)
                one_hot[np.arange(layer.width), np.argmax(layer.logits, 1)] = 40.0
                layer.set_logits(one_hot)
    val = evaluate_soft(m2, ds.val_pairs, run.loss, 512)
    return val["acc"]


def mixture_sharpness(model):
    out = {}
    for g in model.groups:
        ps = [softmax(l.logits).max(axis=1) for l in model.groups[g]]
        out[g] = float(np.mean(np.concatenate(ps)))
    return out


def train(doc_mut, steps, eval_every=1000, diagnose=True, seed_shift=0):
    with open(resolve_config_path("toy-copy")) as f:
        doc = json.load(f)
    doc["model"]["hidden_init"] = {"kind": "zero"}
    doc["model"]["node_init"] = {"kind": "residual", "sigma": 1.0, "beta": 2.0}
    doc["model"]["groupsum_tau"] = 0.25
    doc["model"]["group_factor"] = 24
    doc["model"]["sizes_m"] = [512, 1200]
    doc["data"]["sentences"] = 128
    doc_mut(doc)
    if seed_shift:
        for k in doc["model"]["seeds"]:
            doc["model"]["seeds"][k] += seed_shift
    run = parse_run_config(doc)
    ds = build_dataset(run)
    model = Seq2SeqModel(run.model)
    opt = AdamW(model.parameters(), run.optimizer)
    sched = run.scheduler.build(eval_every)
    step = 0
    for epoch in range(10**6):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=run.model.seeds.data, spawn_key=(epoch,))
        )
        for batch in batch_by_tokens(ds.train_pairs, run.train.batch_tokens, rng):
            step += 1
            loss, grads, parts = total_loss_and_grads(
                model, stack_batch(batch), run.loss, step
            )
            opt.step(model.parameters(), grads)
            model.bump_param_versions()
            if step % eval_every == 0:
                val = evaluate_soft(model, ds.val_pairs, run.loss, 512)
                opt.lr = plateau_update(sched, val["loss"], opt.lr)
                line = f"step {step:5d} soft {val['acc']:.4f}"
                if diagnose:
                    ha = hard_acc(model, ds)
                    he = soft_acc_with(model, ds, run, harden_emb=True)
                    hg = soft_acc_with(model, ds, run, harden_gates=True)
                    sharp = mixture_sharpness(model)
                    line += (
                        f" hard {ha:.4f} | soft+hardemb {he:.4f} soft+hardgates {hg:.4f}"
                        f" | pmax " + " ".join(f"{g}:{v:.2f}" for g, v in sharp.items())
                    )
                print(line, flush=True)
            if step >= steps:
                return model, ds, run
    return model, ds, run


if __name__ == "__main__":
    train(lambda d: None, 10000)
