"""Trainable soft logic layers.

A layer is `width` neurons, each wired to a fixed random pair of inputs
and carrying 16 trainable logits.  In soft mode a neuron outputs the
softmax-weighted mixture of all 16 relaxed gate outputs on its two inputs;
collapsing a layer keeps only each neuron's argmax gate, leaving a plain
Boolean circuit layer.

Inputs outside [0, 1] (possible only when inverted dropout scaling is
active upstream) saturate at the unit interval on output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .gates import RESIDUAL_GATE, TRUTH_TABLES_F


@dataclass(frozen=True)
class NodeInit:
    """How a fresh layer's gate logits are drawn.

    gaussian: logits ~ N(0, sigma^2).
    residual: gaussian plus `beta` added to the pass-through-first-input
    gate, biasing deep stacks toward identity wiring at the start.
    """

    kind: str = "residual"
    sigma: float = 1.0
    beta: float = 5.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "residual"):
            raise ValueError(f"unknown node init {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "residual" and self.beta <= 0:
            raise ValueError("residual beta must be > 0")


@dataclass
class GumbelConfig:
    """Gumbel-softmax gate sampling: mixture weights softmax((z + G)/tau)."""

    enabled: bool = False
    tau: float = 1.0
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.enabled and self.tau <= 0:
            raise ValueError("gumbel tau must be > 0")


@dataclass
class LayerTape:
    """Forward state cached for the matching backward call."""

    layer: "SoftLogicLayer"
    param_version: int
    x: np.ndarray          # (batch, in_dim) input actually consumed
    mix: np.ndarray        # (width, 16) mixture weights used
    coeff: np.ndarray      # (width, 4) corner coefficients
    y: np.ndarray          # (batch, width) output
    grad_scale: float = 1.0  # 1/tau when the mixture was Gumbel-perturbed
    squeezed: bool = False   # input arrived 1-D


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class SoftLogicLayer:
    """Fixed random pair connectivity + per-neuron 16-way gate logits."""

    def __init__(self, in_dim, width, conn_a, conn_b, logits):
        if in_dim < 2:
            raise ValueError(f"in_dim must be >= 2, got {in_dim}")
        conn_a = np.ascontiguousarray(conn_a, dtype=np.uint32)
        conn_b = np.ascontiguousarray(conn_b, dtype=np.uint32)
        if conn_a.shape != (width,) or conn_b.shape != (width,):
            raise ValueError("connectivity arrays must have shape (width,)")
        if np.any(conn_a == conn_b):
            raise ValueError("conn_a[j] == conn_b[j] degenerates the gate")
        if np.any(conn_a >= in_dim) or np.any(conn_b >= in_dim):
            raise ValueError("connectivity index out of range")
        if logits.shape != (width, 16):
            raise ValueError("logits must have shape (width, 16)")
        self.in_dim = int(in_dim)
        self.width = int(width)
        self.conn_a = conn_a
        self.conn_b = conn_b
        self.logits = np.ascontiguousarray(logits)
        self._param_version = 0

    @property
    def param_version(self):
        return self._param_version

    def bump_param_version(self):
        """Must be called after any in-place edit of `logits`."""
        self._param_version += 1

    def set_logits(self, logits):
        self.logits[...] = logits
        self.bump_param_version()


def new_layer(in_dim, width, connectivity_seed, init: NodeInit, init_rng=None):
    """Build a layer with seeded random connectivity and initial logits.

    Connectivity is uniform over ordered input pairs with conn_a != conn_b
    enforced by rejection.  When `init_rng` is omitted the logits are drawn
    from the same stream as the connectivity, so one seed pins the whole
    layer bit-for-bit.
    """
    if in_dim < 2:
        raise ValueError(f"in_dim must be >= 2, got {in_dim}")
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    rng = np.random.Generator(np.random.PCG64(connectivity_seed))
    conn_a = rng.integers(0, in_dim, size=width)
    conn_b = rng.integers(0, in_dim, size=width)
    dup = conn_a == conn_b
    while np.any(dup):
        conn_b[dup] = rng.integers(0, in_dim, size=int(dup.sum()))
        dup = conn_a == conn_b

    if init_rng is None:
        init_rng = rng
    logits = init_rng.normal(0.0, init.sigma, size=(width, 16))
    if init.kind == "residual":
        logits[:, RESIDUAL_GATE] += init.beta
    return SoftLogicLayer(in_dim, width, conn_a, conn_b, logits)


def _as_batch(layer, x):
    x = np.asarray(x)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ValueError(
            f"input has shape {x.shape}, layer expects (*, {layer.in_dim})"
        )
    return np.ascontiguousarray(x, dtype=layer.logits.dtype), squeezed


def _run(layer, x, mix, grad_scale):
    x2, squeezed = _as_batch(layer, x)
    coeff = np.ascontiguousarray(mix @ TRUTH_TABLES_F.astype(mix.dtype))
    y = _kernels.layer_forward(x2, layer.conn_a, layer.conn_b, coeff)
    tape = LayerTape(
        layer=layer,
        param_version=layer.param_version,
        x=x2,
        mix=mix,
        coeff=coeff,
        y=y,
        grad_scale=grad_scale,
        squeezed=squeezed,
    )
    return (y[0] if squeezed else y), tape


def forward_soft(layer, x):
    """Soft forward pass: y_j = sum_l softmax(z_j)_l * g_l(x_a, x_b).

    Accepts a single (in_dim,) vector or a (batch, in_dim) matrix; the
    output matches.  Returns (y, tape) with the tape required by
    backward_soft.
    """
    mix = softmax(layer.logits)
    return _run(layer, x, mix, 1.0)


def forward_gumbel(layer, x, cfg: GumbelConfig, noise=None):
    """Forward pass with Gumbel-perturbed temperature-scaled mixtures.

    `noise` overrides the sampled Gumbel matrix (tests pass zeros, which
    with tau=1 makes this identical to forward_soft).
    """
    if not cfg.enabled:
        raise ValueError("gumbel forward called with cfg.enabled=False")
    if cfg.tau <= 0:
        raise ValueError("gumbel tau must be > 0")
    if noise is None:
        rng = cfg.rng
        if rng is None:
            raise ValueError("GumbelConfig.rng is required when noise is not given")
        u = rng.random(size=layer.logits.shape)
        noise = -np.log(-np.log(u))
    mix = softmax((layer.logits + noise) / cfg.tau)
    return _run(layer, x, mix, 1.0 / cfg.tau)


def backward_soft(layer, tape: LayerTape, grad_y):
    """Reverse pass matching a forward tape.

    Returns (grad_x, grad_z).  grad_z follows the mixture rule
    grad_z[j,l] = sum_batch grad_y * p_l * (g_l - y_j) (scaled by 1/tau
    for Gumbel tapes); grad_x accumulates both connection contributions,
    summing over neurons that share an input.
    """
    if tape.layer is not layer:
        raise ValueError("tape was produced by a different layer")
    if tape.param_version != layer.param_version:
        raise ValueError("stale tape: layer parameters changed since forward")
    grad_y = np.asarray(grad_y, dtype=tape.y.dtype)
    squeezed = grad_y.ndim == 1
    if squeezed:
        grad_y = grad_y[None, :]
    if grad_y.shape != tape.y.shape:
        raise ValueError(f"grad_y shape {grad_y.shape} != output shape {tape.y.shape}")
    grad_y = np.ascontiguousarray(grad_y)

    grad_x, corner = _kernels.layer_backward(
        tape.x, layer.conn_a, layer.conn_b, tape.coeff, grad_y
    )
    # sum_b grad_y*g_l per gate, minus the mixture mean, weighted by p
    gy_g = corner @ TRUTH_TABLES_F.T.astype(corner.dtype)
    q = np.einsum("ij,ij->j", grad_y, tape.y)
    grad_z = tape.grad_scale * tape.mix * (gy_g - q[:, None])
    return (grad_x[0] if tape.squeezed else grad_x), grad_z


@dataclass
class CollapsedLogicLayer:
    """Discrete layer: one hard gate per neuron, connectivity copied."""

    in_dim: int
    width: int
    conn_a: np.ndarray
    conn_b: np.ndarray
    gates: np.ndarray = field(repr=False)  # (width,) uint8 truth-table indices


def collapse_layer(layer) -> CollapsedLogicLayer:
    """Keep each neuron's highest-logit gate (lowest index wins ties)."""
    gates = np.argmax(layer.logits, axis=1).astype(np.uint8)
    return CollapsedLogicLayer(
        in_dim=layer.in_dim,
        width=layer.width,
        conn_a=layer.conn_a.copy(),
        conn_b=layer.conn_b.copy(),
        gates=gates,
    )


def forward_hard(clayer: CollapsedLogicLayer, bits):
    """Discrete evaluation on a {0,1} vector or (batch, in_dim) matrix."""
    bits = np.asarray(bits)
    squeezed = bits.ndim == 1
    if squeezed:
        bits = bits[None, :]
    if bits.shape[1] != clayer.in_dim:
        raise ValueError(f"input width {bits.shape[1]} != in_dim {clayer.in_dim}")
    a = bits[:, clayer.conn_a].astype(np.uint8)
    b = bits[:, clayer.conn_b].astype(np.uint8)
    pattern = (a << 1) | b
    out = (clayer.gates[None, :] >> pattern) & 1
    return out[0] if squeezed else out
