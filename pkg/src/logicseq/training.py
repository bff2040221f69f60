"""Training: composite loss with scheduled auxiliaries, AdamW, plateau LR.

The total objective is label-smoothed cross-entropy over non-pad target
positions plus linearly ramped auxiliary terms (by default the embedding
regulariser, ramping from 0 to 0.1 between two configured steps).  AdamW
uses decoupled weight decay applied to every trainable tensor; the
learning rate is cut by a fixed factor whenever validation loss fails to
improve for a patience window.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import checkpoint as ckpt
from . import model as model_mod
from .data import stack_batch, batch_by_tokens, token_accuracy, perplexity
from .model import GROUPS


class OptimizerError(RuntimeError):
    """Non-finite gradients: the step was rejected."""


class TrainAbort(RuntimeError):
    """Training stopped on a non-finite loss; diagnostics were dumped."""


# --- losses -------------------------------------------------------------------


@dataclass
class AuxTerm:
    loss_id: str = "embedding_reg"
    ramp_start_step: int = 1000
    ramp_end_step: int = 100000
    w_max: float = 0.1

    def __post_init__(self):
        if self.ramp_start_step >= self.ramp_end_step:
            raise ValueError("aux ramp must have start < end")
        if self.w_max < 0:
            raise ValueError("aux w_max must be >= 0")


@dataclass
class LossConfig:
    label_smoothing: float = 0.1
    aux_terms: list = field(default_factory=lambda: [AuxTerm()])

    def __post_init__(self):
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label smoothing must be in [0, 1)")


def aux_weight(step, term: AuxTerm) -> float:
    """Linear ramp: 0 up to the start step, w_max from the end step on."""
    if step <= term.ramp_start_step:
        return 0.0
    if step >= term.ramp_end_step:
        return term.w_max
    frac = (step - term.ramp_start_step) / (term.ramp_end_step - term.ramp_start_step)
    return term.w_max * frac


def _smoothed_targets(shape, targets, alpha):
    batch_shape, vocab = shape[:-1], shape[-1]
    smooth = np.full(shape, alpha / vocab)
    np.put_along_axis(smooth, targets[..., None], alpha / vocab + (1 - alpha), axis=-1)
    return smooth


def smoothed_cross_entropy(probs, targets, alpha, pad_mask) -> float:
    """-sum_j ytilde_j log p_j, averaged over non-pad positions.

    ytilde = (1-alpha) one_hot + alpha/V; the log is floored at 1e-12.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    mask = np.asarray(pad_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("all-pad batch: nothing to score")
    smooth = _smoothed_targets(probs.shape, targets, alpha)
    logp = np.log(np.maximum(probs, 1e-12))
    per_pos = -(smooth * logp).sum(axis=-1)
    return float(per_pos[mask].sum() / n)


def smoothed_ce_score_grad(probs, targets, alpha, pad_mask) -> np.ndarray:
    """Gradient of smoothed_cross_entropy w.r.t. the pre-softmax scores."""
    probs = np.asarray(probs)
    mask = np.asarray(pad_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("all-pad batch: nothing to score")
    smooth = _smoothed_targets(probs.shape, np.asarray(targets), alpha)
    grad = (probs - smooth) / n
    grad[~mask] = 0.0
    return grad


# --- optimizer -----------------------------------------------------------------


@dataclass
class AdamWConfig:
    lr: float = 0.05
    weight_decay: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamW:
    """AdamW with bias correction and decoupled decay on the pre-step value."""

    def __init__(self, params: dict, cfg: AdamWConfig = None):
        self.cfg = cfg or AdamWConfig()
        self.lr = self.cfg.lr
        self.t = 0
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient in {k!r}; step rejected")
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps) + c.weight_decay * p
            p -= self.lr * update

    def state_arrays(self) -> dict:
        out = {f"m::{k}": v for k, v in self.m.items()}
        out.update({f"v::{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays, t):
        self.t = int(t)
        for k in self.m:
            self.m[k] = arrays[f"m::{k}"]
            self.v[k] = arrays[f"v::{k}"]


def adamw_step(optimizer: AdamW, params: dict, grads: dict) -> dict:
    """Apply one optimizer step in place and return the params."""
    optimizer.step(params, grads)
    return params


# --- scheduler -----------------------------------------------------------------


@dataclass
class PlateauScheduler:
    gamma: float = 0.8
    patience: int = 20  # non-improving validation events before a cut
    min_delta: float = 1e-4
    best: float = float("inf")
    since: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def plateau_update(sched: PlateauScheduler, val_loss: float, current_lr: float) -> float:
    """Advance the plateau monitor; returns the (possibly reduced) lr."""
    if val_loss < sched.best - sched.min_delta:
        sched.best = val_loss
        sched.since = 0
        return current_lr
    sched.since += 1
    if sched.since >= sched.patience:
        sched.since = 0
        return current_lr * sched.gamma
    return current_lr


# --- gradient statistics ---------------------------------------------------------


def gradient_stats(grads: dict) -> dict:
    """Per layer-group mean, population std and std/mean of |grad|.

    Covers the gate logits only (the quantity reported for layer groups);
    the ratio is nan when a group's gradient is identically zero.
    """
    stats = {}
    for g in GROUPS:
        mags = [np.abs(v).ravel() for k, v in grads.items() if k[0] == g and k != "embedding"]
        if not mags:
            raise ValueError(f"no gradients for group {g!r}")
        mag = np.concatenate(mags)
        mean = float(mag.mean())
        std = float(mag.std())
        stats[g] = (mean, std, std / mean if mean > 0 else float("nan"))
    return stats


# --- training loop ----------------------------------------------------------------


@dataclass
class TrainSettings:
    steps: int
    eval_every: int = 500
    checkpoint_every: int = 1000
    batch_tokens: int = 1024
    out_dir: str = "runs/default"


def gate_entropy_loss(model) -> float:
    """Mean softmax entropy of the gate mixtures across all neurons.

    Zero iff every neuron has a one-hot mixture; penalising it shrinks the
    gap between the soft network and its collapsed Boolean counterpart by
    pushing each neuron to commit to a single gate.
    """
    total = 0.0
    count = 0
    for g in GROUPS:
        for layer in model.groups[g]:
            p = _softmax64(layer.logits)
            total += float(-(p * np.log(np.maximum(p, 1e-300))).sum())
            count += layer.width
    return total / count


def gate_entropy_grads(model) -> dict:
    """d(gate_entropy_loss)/d(logits) per layer: -p*(log p + H) / n_neurons."""
    n = sum(layer.width for g in GROUPS for layer in model.groups[g])
    out = {}
    for g in GROUPS:
        for i, layer in enumerate(model.groups[g]):
            p = _softmax64(layer.logits)
            logp = np.log(np.maximum(p, 1e-300))
            ent = -(p * logp).sum(axis=1, keepdims=True)
            out[f"{g}{i}"] = -p * (logp + ent) / n
    return out


def _softmax64(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def total_loss_and_grads(model, batch, loss_cfg: LossConfig, step: int):
    """Forward + backward for one batch; returns (loss, grads, parts)."""
    src, tgt_in, tgt_out, mask = batch
    res = model_mod.forward_teacher(model, src, tgt_in, train=True)
    main = smoothed_cross_entropy(res.probs, tgt_out, loss_cfg.label_smoothing, mask)
    total = main
    aux_w = 0.0
    for term in loss_cfg.aux_terms:
        w = aux_weight(step, term)
        if term.loss_id == "embedding_reg":
            total += w * res.l_emb
            aux_w = w
        elif term.loss_id == "gate_entropy":
            total += w * gate_entropy_loss(model)
        else:
            raise ValueError(f"unknown auxiliary loss {term.loss_id!r}")
    grad_scores = smoothed_ce_score_grad(
        res.probs, tgt_out, loss_cfg.label_smoothing, mask
    )
    grads = model_mod.model_backward(model, res.tapes, grad_scores)
    for term in loss_cfg.aux_terms:
        w = aux_weight(step, term)
        if w <= 0:
            continue
        if term.loss_id == "embedding_reg":
            grads["embedding"] += w * model_mod.embedding_reg_grad(model, res.tapes)
        elif term.loss_id == "gate_entropy":
            for name, g in gate_entropy_grads(model).items():
                grads[name] += w * g
    return total, grads, {"main": main, "aux_w": aux_w}


def evaluate_soft(model, pairs, loss_cfg: LossConfig, batch_tokens=1024):
    """Validation metrics: smoothed loss, accuracy, perplexity."""
    losses, weights = [], []
    correct = total = 0
    nll_sum = 0.0
    for batch in batch_by_tokens(pairs, batch_tokens):
        src, tgt_in, tgt_out, mask = stack_batch(batch)
        res = model_mod.forward_teacher(model, src, tgt_in, train=False)
        n = int(mask.sum())
        losses.append(
            smoothed_cross_entropy(res.probs, tgt_out, loss_cfg.label_smoothing, mask)
        )
        weights.append(n)
        preds = res.probs.argmax(-1)
        correct += int((preds[mask] == tgt_out[mask]).sum())
        total += n
        p = np.take_along_axis(res.probs, tgt_out[..., None], axis=-1)[..., 0]
        nll_sum += float(-np.log(np.maximum(p[mask], 1e-12)).sum())
    loss = float(np.average(losses, weights=weights))
    return {
        "loss": loss,
        "acc": correct / total,
        "ppl": float(np.exp(nll_sum / total)),
    }


def _checkpoint_paths(out_dir, step):
    stem = os.path.join(out_dir, f"step_{step:08d}")
    return stem + ".rdlg", stem + ".optim.npz", stem + ".state.json"


def save_train_state(out_dir, step, model, optimizer, scheduler, epoch, batch_idx):
    model_path, optim_path, state_path = _checkpoint_paths(out_dir, step)
    ckpt.save_model(model, model_path)
    np.savez(optim_path, **optimizer.state_arrays())
    state = {
        "step": step,
        "t": optimizer.t,
        "lr": optimizer.lr,
        "scheduler": asdict(scheduler),
        "epoch": epoch,
        "batch_idx": batch_idx,
    }
    with open(state_path, "w") as f:
        json.dump(state, f, indent=2)
    return model_path


def find_latest_checkpoint(out_dir):
    if not os.path.isdir(out_dir):
        return None
    steps = []
    for name in os.listdir(out_dir):
        if name.startswith("step_") and name.endswith(".rdlg"):
            steps.append(int(name[5:13]))
    return max(steps) if steps else None


def _append_csv(path, header, row):
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(header)
        w.writerow(row)


METRICS_HEADER = ["step", "train_loss", "val_loss", "lr", "aux_w", "acc", "ppl"]
GRADSTATS_HEADER = ["step", "group", "mean", "std", "std_over_mean"]


def train_loop(model, dataset, loss_cfg, optimizer, scheduler, settings: TrainSettings):
    """Run (or resume) training; writes checkpoints and CSV logs.

    Data order is deterministic given the model's data seed: each epoch
    shuffles with its own derived stream, so a fixed-seed rerun reproduces
    the metric log and a resume fast-forwards to the stored position.
    """
    os.makedirs(settings.out_dir, exist_ok=True)
    step = 0
    epoch = 0
    start_batch = 0

    latest = find_latest_checkpoint(settings.out_dir)
    if latest is not None:
        model_path, optim_path, state_path = _checkpoint_paths(settings.out_dir, latest)
        loaded = ckpt.load_model(model_path)
        model.embedding = loaded.embedding
        model.groups = loaded.groups
        with open(state_path) as f:
            state = json.load(f)
        arrays = dict(np.load(optim_path))
        optimizer.m = {}
        optimizer.v = {}
        params = model.parameters()
        for k in params:
            optimizer.m[k] = arrays[f"m::{k}"]
            optimizer.v[k] = arrays[f"v::{k}"]
        optimizer.t = state["t"]
        optimizer.lr = state["lr"]
        for f_, v in state["scheduler"].items():
            setattr(scheduler, f_, v)
        step = state["step"]
        epoch = state["epoch"]
        start_batch = state["batch_idx"]
    else:
        save_train_state(settings.out_dir, 0, model, optimizer, scheduler, 0, 0)

    metrics_path = os.path.join(settings.out_dir, "metrics.csv")
    grads_path = os.path.join(settings.out_dir, "grad_stats.csv")
    data_seed = model.config.seeds.data

    running = []
    last_stats = None
    while step < settings.steps:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=data_seed, spawn_key=(epoch,)))
        batches = batch_by_tokens(dataset.train_pairs, settings.batch_tokens, rng)
        for bi in range(start_batch, len(batches)):
            if step >= settings.steps:
                break
            batch = stack_batch(batches[bi])
            step += 1
            loss, grads, parts = total_loss_and_grads(model, batch, loss_cfg, step)
            if not np.isfinite(loss):
                dump = {
                    "step": step,
                    "loss": float(loss),
                    "lr": optimizer.lr,
                    "param_norms": {
                        k: float(np.abs(v).max()) for k, v in model.parameters().items()
                    },
                }
                with open(os.path.join(settings.out_dir, "abort_dump.json"), "w") as f:
                    json.dump(dump, f, indent=2)
                raise TrainAbort(f"non-finite loss at step {step}; state dumped")
            optimizer.step(model.parameters(), grads)
            model.bump_param_versions()
            running.append(loss)
            last_stats = grads

            if step % settings.eval_every == 0 or step == settings.steps:
                val = evaluate_soft(
                    model, dataset.val_pairs, loss_cfg, settings.batch_tokens
                )
                optimizer.lr = plateau_update(scheduler, val["loss"], optimizer.lr)
                _append_csv(
                    metrics_path,
                    METRICS_HEADER,
                    [
                        step,
                        f"{np.mean(running):.6f}",
                        f"{val['loss']:.6f}",
                        f"{optimizer.lr:.6g}",
                        f"{parts['aux_w']:.6g}",
                        f"{val['acc']:.6f}",
                        f"{val['ppl']:.6f}",
                    ],
                )
                running = []
                for g, (mean, std, ratio) in gradient_stats(last_stats).items():
                    _append_csv(
                        grads_path,
                        GRADSTATS_HEADER,
                        [step, g, f"{mean:.6e}", f"{std:.6e}", f"{ratio:.6e}"],
                    )
            if step % settings.checkpoint_every == 0 or step == settings.steps:
                save_train_state(
                    settings.out_dir, step, model, optimizer, scheduler, epoch, bi + 1
                )
        else:
            epoch += 1
            start_batch = 0
            continue
        break

    final = evaluate_soft(model, dataset.val_pairs, loss_cfg, settings.batch_tokens)
    return {"step": step, "val": final, "out_dir": settings.out_dir}
