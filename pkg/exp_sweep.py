"""Scratch experiment harness for tuning the toy presets (not shipped)."""
import json
import sys
import time

import numpy as np

from logicseq.config import parse_run_config, load_run_config, build_dataset
from logicseq.model import Seq2SeqModel
from logicseq.training import (
    AdamW,
    total_loss_and_grads,
    evaluate_soft,
    plateau_update,
    gradient_stats,
)
from logicseq.data import batch_by_tokens, stack_batch


def run_variant(name, mutate, steps=4000, eval_every=500, print_grads=False):
    import copy
    from logicseq.config import resolve_config_path

    with open(resolve_config_path("toy-copy")) as f:
        doc = json.load(f)
    mutate(doc)
    run = parse_run_config(doc)
    ds = build_dataset(run)
    model = Seq2SeqModel(run.model)
    opt = AdamW(model.parameters(), run.optimizer)
    sched = run.scheduler.build(eval_every)
    step = 0
    t0 = time.time()
    history = []
    for epoch in range(100000):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=run.model.seeds.data, spawn_key=(epoch,))
        )
        for batch in batch_by_tokens(ds.train_pairs, run.train.batch_tokens, rng):
            b = stack_batch(batch)
            step += 1
            loss, grads, parts = total_loss_and_grads(model, b, run.loss, step)
            opt.step(model.parameters(), grads)
            model.bump_param_versions()
            if step % eval_every == 0:
                val = evaluate_soft(model, ds.val_pairs, run.loss, 512)
                opt.lr = plateau_update(sched, val["loss"], opt.lr)
                history.append(val["acc"])
                msg = (
                    f"[{name}] step {step:5d} val_loss {val['loss']:.4f} "
                    f"acc {val['acc']:.4f} lr {opt.lr:.4f} ({time.time()-t0:.0f}s)"
                )
                if print_grads:
                    gs = gradient_stats(grads)
                    msg += " | " + " ".join(
                        f"{g}:{m:.2e}" for g, (m, s, r) in gs.items()
                    )
                    msg += f" emb:{np.abs(grads['embedding']).mean():.2e}"
                print(msg, flush=True)
            if step >= steps:
                return history
    return history


if __name__ == "__main__":
    which = sys.argv[1]

    def zero_hidden(doc):
        doc["model"]["hidden_init"] = {"kind": "zero"}

    variants = {
        "base6k": (lambda doc: None, 6000),
        "zero": (zero_hidden, 4000),
        "zero_lr1": (lambda d: (zero_hidden(d), d["optimizer"].update(lr=0.1)), 4000),
        "zero_tau1": (
            lambda d: (zero_hidden(d), d["model"].update(groupsum_tau=1.0)),
            4000,
        ),
        "zero_wide": (
            lambda d: (
                zero_hidden(d),
                d["model"].update(
                    sizes_k=[512, 256], sizes_p=[384, 256], sizes_m=[1024, 800]
                ),
            ),
            4000,
        ),
        "zero_small_corpus": (
            lambda d: (zero_hidden(d), d["data"].update(sentences=128, val_sentences=64)),
            4000,
        ),
        "grads": (zero_hidden, 1000),
    }
    mut, steps = variants[which]
    run_variant(which, mut, steps=steps, print_grads=(which == "grads"))
