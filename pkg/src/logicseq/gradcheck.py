"""Analytic-vs-numeric gradient verification on small models.

Central finite differences over every trainable parameter against the
hand-written backward pass, with the stochastic hidden states pinned so
both sides see the same function.  Also re-derives per-neuron logit
gradients from the mixture closed form p_i*(f_i - sum_j p_j f_j) as an
independent check of the layer backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .gates import relaxed_eval
from .layers import backward_soft, forward_soft
from .training import LossConfig, aux_weight, smoothed_cross_entropy, smoothed_ce_score_grad

MAX_GRADCHECK_PARAMS = 5000


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    per_group_worst: dict
    n_params: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def lines(self):
        out = [f"parameters checked: {self.n_params}"]
        for name, (err, where) in sorted(self.per_group_worst.items()):
            out.append(f"  {name:>10}: worst rel err {err:.3e} at {where}")
        out.append(f"max relative error {self.max_rel_err:.3e} (tolerance {self.tolerance:g})")
        out.append("PASS" if self.passed else "FAIL")
        return out


def _group_of(name):
    return "embedding" if name == "embedding" else name[0]


def gradient_check(model, src, tgt_in, tgt_out, mask, loss_cfg: LossConfig = None,
                   step=2000, h=1e-5, tolerance=1e-4) -> GradCheckReport:
    """Compare every parameter gradient against central differences."""
    loss_cfg = loss_cfg or LossConfig()
    params = model.parameters()
    n_params = sum(p.size for p in params.values())
    if n_params > MAX_GRADCHECK_PARAMS:
        raise ValueError(
            f"{n_params} parameters exceeds the gradcheck budget "
            f"({MAX_GRADCHECK_PARAMS}); use tiny dims"
        )
    cfg = model.config
    batch = np.atleast_2d(src).shape[0]
    k0 = model.sample_hidden(batch, cfg.sizes_k[-1])
    p0 = model.sample_hidden(batch, cfg.sizes_p[-1])

    def loss_and_result():
        res = model_mod.forward_teacher(model, src, tgt_in, k0=k0, p0=p0)
        loss = smoothed_cross_entropy(res.probs, tgt_out, loss_cfg.label_smoothing, mask)
        for term in loss_cfg.aux_terms:
            if term.loss_id == "embedding_reg":
                loss += aux_weight(step, term) * res.l_emb
        return loss, res

    _, res = loss_and_result()
    grad_scores = smoothed_ce_score_grad(res.probs, tgt_out, loss_cfg.label_smoothing, mask)
    grads = model_mod.model_backward(model, res.tapes, grad_scores)
    for term in loss_cfg.aux_terms:
        if term.loss_id == "embedding_reg":
            w = aux_weight(step, term)
            if w > 0:
                grads["embedding"] += w * model_mod.embedding_reg_grad(model, res.tapes)

    worst = 0.0
    worst_param = ""
    per_group = {}
    for name, arr in params.items():
        flat = arr.ravel()
        gflat = grads[name].ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            model.bump_param_versions()
            up, _ = loss_and_result()
            flat[i] = saved - h
            model.bump_param_versions()
            down, _ = loss_and_result()
            flat[i] = saved
            model.bump_param_versions()
            fd = (up - down) / (2 * h)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-5)
            g = _group_of(name)
            if g not in per_group or rel > per_group[g][0]:
                per_group[g] = (rel, f"{name}[{i}]")
            if rel > worst:
                worst, worst_param = rel, f"{name}[{i}]"
    return GradCheckReport(
        max_rel_err=worst,
        worst_param=worst_param,
        per_group_worst=per_group,
        n_params=n_params,
        tolerance=tolerance,
    )


def logit_closed_form_worst_error(layer, x, grad_y) -> float:
    """Max |backward grad_z - closed form| over the layer's logits.

    The closed form multiplies the upstream gradient into
    p_i * (f_i - sum_j p_j f_j) per neuron, evaluated with the scalar gate
    relaxations; independent of the corner-coefficient backward path.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    grad_y = np.atleast_2d(np.asarray(grad_y, dtype=np.float64))
    _, tape = forward_soft(layer, x)
    _, grad_z = backward_soft(layer, tape, grad_y)

    p = tape.mix
    expected = np.zeros_like(grad_z)
    for j in range(layer.width):
        a = x[:, layer.conn_a[j]]
        b = x[:, layer.conn_b[j]]
        f = np.stack([relaxed_eval(l, a, b) for l in range(16)], axis=1)  # (B,16)
        mean = f @ p[j]
        for l in range(16):
            expected[j, l] = np.sum(grad_y[:, j] * p[j, l] * (f[:, l] - mean))
    return float(np.max(np.abs(grad_z - expected)))
