"""Command-line entry points.

Verbs: train, eval, collapse, infer, gradcheck, shift-bench.  Every verb is
driven by one JSON config (path or shipped preset name).  Exit codes:
0 success, 1 runtime failure, 2 configuration or data error.

The environment variable LOGICSEQ_OUTPUT_ROOT, when set, prefixes every
relative output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import collapsed as coll
from . import model as model_mod
from .config import Dataset, build_dataset, load_run_config, preset_names
from .data import (
    DataError,
    EOS_ID,
    batch_by_tokens,
    corpus_bleu,
    stack_batch,
    token_accuracy,
    tokenize,
)
from .gradcheck import gradient_check, logit_closed_form_worst_error
from .model import ConfigError, Seeds, Seq2SeqModel
from .training import (
    AdamW,
    OptimizerError,
    TrainAbort,
    train_loop,
)

OUTPUT_ROOT_ENV = "LOGICSEQ_OUTPUT_ROOT"


def _out_dir(path):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _apply_overrides(run, args):
    if getattr(args, "steps", None) is not None:
        run.train.steps = args.steps
    if getattr(args, "seed_override", None) is not None:
        s = args.seed_override
        run.model.seeds = Seeds(
            connectivity=s, init=s + 1, hidden_noise=s + 2, gumbel=s + 3, data=s + 4
        )
    run.train.out_dir = _out_dir(run.train.out_dir)
    return run


def _load_run(args):
    run = load_run_config(args.config)
    return _apply_overrides(run, args)


def cmd_train(args) -> int:
    run = _load_run(args)
    dataset = build_dataset(run)
    os.makedirs(run.train.out_dir, exist_ok=True)
    dataset.vocab.save(os.path.join(run.train.out_dir, "vocab.txt"))
    model = Seq2SeqModel(run.model)
    optimizer = AdamW(model.parameters(), run.optimizer)
    scheduler = run.scheduler.build(run.train.eval_every)
    summary = train_loop(model, dataset, run.loss, optimizer, scheduler, run.train)
    val = summary["val"]
    print(
        f"done step={summary['step']} acc={val['acc']:.4f} "
        f"ppl={val['ppl']:.3f} loss={val['loss']:.4f} out={summary['out_dir']}"
    )
    return 0


def _cut_eos(ids):
    toks = [int(t) for t in ids]
    return toks[: toks.index(EOS_ID)] if EOS_ID in toks else toks


def _bleu_on(dataset, hyp_rows):
    refs = [_cut_eos(p.tgt_out_ids[p.tgt_mask]) for p in dataset.val_pairs]
    hyps = [_cut_eos(row) for row in hyp_rows]
    return corpus_bleu(hyps, refs)


def _eval_soft(model, run, dataset):
    from .training import evaluate_soft

    model.reset_streams()
    metrics = evaluate_soft(model, dataset.val_pairs, run.loss, run.train.batch_tokens)
    src = np.stack([p.src_ids for p in dataset.val_pairs])
    hyp = model_mod.generate_batch(model, src, run.model.seq_len)
    metrics["bleu"] = _bleu_on(dataset, hyp)
    return metrics


def _eval_hard(cmodel, run, dataset):
    correct = total = 0
    for batch in batch_by_tokens(dataset.val_pairs, run.train.batch_tokens):
        src, tgt_in, tgt_out, mask = stack_batch(batch)
        preds = coll.hard_forward_teacher(cmodel, src, tgt_in)
        correct += int((preds[mask] == tgt_out[mask]).sum())
        total += int(mask.sum())
    src = np.stack([p.src_ids for p in dataset.val_pairs])
    hyp = coll.hard_generate_batch(cmodel, src, run.model.seq_len)
    return {"acc": correct / total, "bleu": _bleu_on(dataset, hyp), "ppl": None}


def cmd_eval(args) -> int:
    run = _load_run(args)
    dataset = build_dataset(run)
    kind = ckpt.sniff(args.checkpoint)
    if args.mode == "soft":
        if kind != "soft":
            raise ConfigError("soft evaluation needs a soft checkpoint")
        model = ckpt.load_model(args.checkpoint)
        m = _eval_soft(model, run, dataset)
        print(f"mode=soft acc={m['acc']:.4f} bleu={m['bleu']:.2f} ppl={m['ppl']:.3f}")
    else:
        if kind == "soft":
            print(
                "warning: hard evaluation of a soft checkpoint; collapsing first",
                file=sys.stderr,
            )
            cmodel = coll.collapse_model(ckpt.load_model(args.checkpoint))
        else:
            cmodel = ckpt.load_collapsed(args.checkpoint)
        m = _eval_hard(cmodel, run, dataset)
        print(f"mode=hard acc={m['acc']:.4f} bleu={m['bleu']:.2f} ppl=n/a")
    return 0


def cmd_collapse(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    cmodel = coll.collapse_model(model)
    ckpt.save_collapsed(cmodel, args.out)
    cfg = model.config
    gates = model_mod.gate_count(cfg)
    emb_bits = model_mod.embedding_param_count(cfg)
    print(f"gates: {gates}")
    print(f"embedding bits: {emb_bits} ({cfg.emb_dim} x {cfg.vocab_size})")
    print(f"wrote {args.out}")
    return 0


def _read_input_lines(args):
    if args.input:
        with open(args.input, encoding="utf-8") as f:
            return [ln.strip() for ln in f if ln.strip()]
    return [ln.strip() for ln in sys.stdin if ln.strip()]


def cmd_infer(args) -> int:
    run = _load_run(args)
    vocab_path = os.path.join(run.train.out_dir, "vocab.txt")
    if os.path.exists(vocab_path):
        from .data import Vocab

        vocab = Vocab.load(vocab_path, run.model.vocab_size)
    else:
        vocab = build_dataset(run).vocab
    kind = ckpt.sniff(args.checkpoint)
    S = run.model.seq_len
    from .data import prepare_pair

    lines = _read_input_lines(args)
    rows = []
    for line in lines:
        toks = tokenize(line)
        pair = prepare_pair(toks, toks, vocab, S)
        if pair is None:
            print("")
            continue
        rows.append(pair.src_ids)
    if not rows:
        return 0
    src = np.stack(rows)
    if args.mode == "hard" or kind == "collapsed":
        cmodel = (
            ckpt.load_collapsed(args.checkpoint)
            if kind == "collapsed"
            else coll.collapse_model(ckpt.load_model(args.checkpoint))
        )
        out = coll.hard_generate_batch(cmodel, src, S)
    else:
        model = ckpt.load_model(args.checkpoint)
        model.reset_streams()
        out = model_mod.generate_batch(model, src, S)
    for row in out:
        print(" ".join(vocab.decode(_cut_eos(row))))
    return 0


TINY_GRADCHECK_MODEL = dict(
    vocab_size=8,
    emb_dim=8,
    seq_len=3,
    sizes_n=[16, 16],
    sizes_k=[24, 16],
    sizes_l=[16, 16],
    sizes_p=[32, 24],
    sizes_m=[32, 32],
    group_factor=4,
    groupsum_tau=2.0,
)


def cmd_gradcheck(args) -> int:
    run = _load_run(args)
    if args.dims != "tiny":
        raise ConfigError("only --dims tiny is supported")
    cfg = model_mod.ModelConfig(seeds=run.model.seeds, **TINY_GRADCHECK_MODEL)
    model = Seq2SeqModel(cfg)
    rng = np.random.default_rng(cfg.seeds.data)
    batch = 2
    src = rng.integers(4, 8, size=(batch, cfg.seq_len))
    src[:, -1] = EOS_ID
    tgt_out = np.roll(src, 0, axis=1)
    tgt_in = np.concatenate([np.ones((batch, 1), np.int64), tgt_out[:, :-1]], axis=1)
    mask = np.ones_like(tgt_out, dtype=bool)
    report = gradient_check(model, src, tgt_in, tgt_out, mask, run.loss, h=1e-5)
    for line in report.lines():
        print(line)
    worst_cf = 0.0
    for g in model_mod.GROUPS:
        for layer in model.groups[g]:
            x = rng.random((2, layer.in_dim))
            gy = rng.normal(size=(2, layer.width))
            worst_cf = max(worst_cf, logit_closed_form_worst_error(layer, x, gy))
    print(f"closed-form logit gradient worst abs err: {worst_cf:.3e}")
    ok = report.passed and worst_cf < 1e-10
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_shift_bench(args) -> int:
    run = _load_run(args)
    if run.data["kind"] != "synthetic-shift" and run.data["kind"] != "mono-file":
        raise ConfigError("shift-bench needs a synthetic-shift or mono-file dataset")
    shifts = [int(s) for s in args.shifts.split(",") if s != ""]
    S = run.model.seq_len
    for f in shifts:
        if not 0 <= f < S:
            raise ConfigError(f"shift {f} outside [0, {S})")
    base_out = run.train.out_dir
    os.makedirs(base_out, exist_ok=True)
    rows = []
    for f in shifts:
        import copy

        sub = copy.deepcopy(run)
        sub.data["shift"] = f
        sub.train.out_dir = os.path.join(base_out, f"shift{f}")
        dataset = build_dataset(sub)
        model = Seq2SeqModel(sub.model)
        optimizer = AdamW(model.parameters(), sub.optimizer)
        scheduler = sub.scheduler.build(sub.train.eval_every)
        summary = train_loop(model, dataset, sub.loss, optimizer, scheduler, sub.train)
        acc = summary["val"]["acc"]
        rows.append((f, acc))
        print(f"shift {f}: acc={acc:.4f}")
    csv_path = os.path.join(base_out, "shift_bench.csv")
    with open(csv_path, "w") as fh:
        fh.write("shift,accuracy\n")
        for f, acc in rows:
            fh.write(f"{f},{acc:.6f}\n")
    print(f"wrote {csv_path}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="logicseq",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="shipped presets: " + ", ".join(preset_names()),
    )
    sub = ap.add_subparsers(dest="verb", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        if flags.get("config", True):
            p.add_argument("--config", required=True, help="config file or preset name")
        if flags.get("checkpoint"):
            p.add_argument("--checkpoint", required=True)
        if flags.get("mode"):
            p.add_argument("--mode", choices=["soft", "hard"], default="soft")
        if flags.get("steps"):
            p.add_argument("--steps", type=int, default=None)
        p.add_argument("--seed-override", type=int, default=None)
        return p

    add("train", cmd_train, steps=True)
    add("eval", cmd_eval, checkpoint=True, mode=True)
    p = sub.add_parser("collapse")
    p.set_defaults(fn=cmd_collapse)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed-override", type=int, default=None)
    p = add("infer", cmd_infer, checkpoint=True, mode=True)
    p.add_argument("--input", default=None, help="text file; default stdin")
    p = add("gradcheck", cmd_gradcheck)
    p.add_argument("--dims", default="tiny")
    p = add("shift-bench", cmd_shift_bench, steps=True)
    p.add_argument("--shifts", default="0,2,4,6")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, ckpt.CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainAbort, OptimizerError, ValueError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
