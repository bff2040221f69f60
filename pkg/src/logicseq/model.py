"""Sequence-to-sequence network built from soft logic layers.

Architecture: a shared embedding table relaxed through a sigmoid feeds an
encoder (feedforward N group, then a K group recurrent over time whose
final state is the context vector) and a decoder (feedforward L group on
the shifted target, a recurrent P group consuming [previous P state;
context; L output], and an M head on [P state; context; L output] whose
output is reduced to vocabulary scores by GroupSum and a softmax).

Forward passes record per-layer tapes; `model_backward` replays them in
reverse through both recurrences, the sigmoid relaxation and the
embedding lookups.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .data import BOS_ID, EOS_ID
from .layers import (
    GumbelConfig,
    LayerTape,
    NodeInit,
    SoftLogicLayer,
    backward_soft,
    forward_gumbel,
    forward_soft,
    new_layer,
    softmax,
)

GROUPS = ("n", "k", "l", "p", "m")
DROPOUT_SITES = ("embedding",) + GROUPS


class ConfigError(ValueError):
    """A model/run configuration violates a structural constraint."""


@dataclass(frozen=True)
class HiddenInit:
    """Distribution of the initial K/P hidden states (fresh per sequence)."""

    kind: str = "gaussian"  # gaussian | zero | one | uniform
    mean: float = 0.5
    std: float = 0.25

    def __post_init__(self):
        if self.kind not in ("gaussian", "zero", "one", "uniform"):
            raise ConfigError(f"unknown hidden init {self.kind!r}")
        if self.kind == "gaussian" and self.std < 0:
            raise ConfigError("hidden init std must be >= 0")


@dataclass(frozen=True)
class Seeds:
    connectivity: int = 0
    init: int = 1
    hidden_noise: int = 2
    gumbel: int = 3
    data: int = 4


@dataclass
class ModelConfig:
    vocab_size: int
    emb_dim: int
    seq_len: int
    sizes_n: list
    sizes_k: list
    sizes_l: list
    sizes_p: list
    sizes_m: list
    group_factor: int
    groupsum_tau: float = 2.0
    hidden_init: HiddenInit = field(default_factory=HiddenInit)
    node_init: NodeInit = field(default_factory=NodeInit)
    dropout: dict = field(default_factory=dict)  # site -> p, sites in DROPOUT_SITES
    gumbel_enabled: bool = False
    gumbel_tau: float = 1.0
    # train-time only: replace each group/embedding output x with a
    # Bernoulli(x) bit sample (straight-through gradient).  Downstream
    # layers then only ever see bits during training, which forces the
    # learned solution to survive collapse; eval and generation are
    # untouched.
    activation_sampling: bool = False
    seeds: Seeds = field(default_factory=Seeds)
    dtype: str = "float64"

    def sizes(self, group):
        return getattr(self, f"sizes_{group}")

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def group_input_dims(cfg: ModelConfig) -> dict:
    """Input width of every layer, group by group, from the wiring rules."""
    wn, wk = cfg.sizes_n[-1], cfg.sizes_k[-1]
    wl, wp = cfg.sizes_l[-1], cfg.sizes_p[-1]
    firsts = {
        "n": cfg.emb_dim,
        "k": wn + wk,
        "l": cfg.emb_dim,
        "p": wp + wk + wl,
        "m": wp + wk + wl,
    }
    return {
        g: [firsts[g]] + list(cfg.sizes(g)[:-1]) for g in GROUPS
    }


def validate_config(cfg: ModelConfig) -> None:
    """Raise ConfigError on any structural violation; cheap, no allocation."""
    if cfg.vocab_size < 5:
        raise ConfigError("vocab_size must be >= 5 (four specials plus content)")
    if cfg.emb_dim < 2:
        raise ConfigError("emb_dim must be >= 2")
    if cfg.seq_len < 1:
        raise ConfigError("seq_len must be >= 1")
    if cfg.group_factor < 1:
        raise ConfigError("group_factor must be >= 1")
    if cfg.groupsum_tau <= 0:
        raise ConfigError("groupsum_tau must be > 0")
    for g in GROUPS:
        sizes = cfg.sizes(g)
        if not sizes:
            raise ConfigError(f"sizes_{g} must not be empty")
        if any(int(w) != w or w < 1 for w in sizes):
            raise ConfigError(f"sizes_{g} must be positive integers")
        if any(w < 2 for w in sizes[:-1]):
            raise ConfigError(f"sizes_{g}: widths feeding another layer must be >= 2")
    if cfg.sizes_m[-1] != cfg.vocab_size * cfg.group_factor:
        raise ConfigError(
            f"last M width {cfg.sizes_m[-1]} != vocab_size*group_factor "
            f"= {cfg.vocab_size * cfg.group_factor}"
        )
    for site, p in cfg.dropout.items():
        if site not in DROPOUT_SITES:
            raise ConfigError(f"unknown dropout site {site!r}")
        if not 0 <= p < 1:
            raise ConfigError(f"dropout[{site!r}] must be in [0, 1)")
    if cfg.gumbel_enabled and cfg.gumbel_tau <= 0:
        raise ConfigError("gumbel tau must be > 0")
    if cfg.dtype not in ("float64", "float32"):
        raise ConfigError(f"dtype must be float64 or float32, got {cfg.dtype!r}")


def logit_param_counts(cfg: ModelConfig) -> dict:
    """Trainable gate-logit parameters per group: 16 * sum(widths)."""
    return {g: 16 * int(sum(cfg.sizes(g))) for g in GROUPS}


def gate_count(cfg: ModelConfig) -> int:
    """Gates in the collapsed circuit: one per neuron across all groups."""
    return int(sum(sum(cfg.sizes(g)) for g in GROUPS))


def embedding_param_count(cfg: ModelConfig) -> int:
    return int(cfg.vocab_size * cfg.emb_dim)


def total_trainable_params(cfg: ModelConfig) -> int:
    return embedding_param_count(cfg) + sum(logit_param_counts(cfg).values())


def config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["hidden_init"] = asdict(cfg.hidden_init)
    d["node_init"] = asdict(cfg.node_init)
    d["seeds"] = asdict(cfg.seeds)
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["hidden_init"] = HiddenInit(**d["hidden_init"])
    d["node_init"] = NodeInit(**d["node_init"])
    d["seeds"] = Seeds(**d["seeds"])
    return ModelConfig(**d)


# --- embedding -------------------------------------------------------------


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def embed_relax(embedding, token_ids):
    """Sigmoid-relaxed embedding rows, elementwise in (0, 1)."""
    token_ids = np.asarray(token_ids)
    if token_ids.size and token_ids.max() >= embedding.shape[0]:
        raise ValueError(
            f"token id {int(token_ids.max())} out of range "
            f"for vocab {embedding.shape[0]}"
        )
    return sigmoid(embedding[token_ids])


def embed_hard(embedding, token_ids):
    """Heaviside-binarised embedding rows: bit = 1 iff entry >= 0."""
    token_ids = np.asarray(token_ids)
    if token_ids.size and token_ids.max() >= embedding.shape[0]:
        raise ValueError(
            f"token id {int(token_ids.max())} out of range "
            f"for vocab {embedding.shape[0]}"
        )
    return (embedding[token_ids] >= 0).astype(np.uint8)


def embedding_reg_loss(x) -> float:
    """Mean of x*(1-x): zero on {0,1}-valued entries, 0.25 at x=0.5."""
    x = np.asarray(x)
    return float(np.mean(x * (1.0 - x)))


def group_sum(v, k, tau):
    """Sum consecutive groups of k entries and scale by 1/tau."""
    v = np.asarray(v)
    if v.shape[-1] % k != 0:
        raise ValueError(f"width {v.shape[-1]} not divisible by group factor {k}")
    return v.reshape(*v.shape[:-1], v.shape[-1] // k, k).sum(axis=-1) / tau


# --- the model --------------------------------------------------------------


class Seq2SeqModel:
    def __init__(self, config: ModelConfig, *, embedding=None, groups=None):
        validate_config(config)
        self.config = config
        dtype = config.np_dtype()
        dims = group_input_dims(config)

        if embedding is not None:
            self.embedding = np.ascontiguousarray(embedding, dtype=dtype)
            if self.embedding.shape != (config.vocab_size, config.emb_dim):
                raise ConfigError("embedding tensor shape mismatch")
            self.groups = groups
        else:
            init_rng = np.random.Generator(np.random.PCG64(config.seeds.init))
            self.embedding = init_rng.normal(
                0.0, 1.0, size=(config.vocab_size, config.emb_dim)
            ).astype(dtype)
            n_layers = sum(len(config.sizes(g)) for g in GROUPS)
            conn_seeds = np.random.SeedSequence(config.seeds.connectivity).spawn(
                n_layers
            )
            self.groups = {}
            li = 0
            for g in GROUPS:
                stack = []
                for in_dim, width in zip(dims[g], config.sizes(g)):
                    layer = new_layer(
                        in_dim, width, conn_seeds[li], config.node_init, init_rng
                    )
                    layer.logits = layer.logits.astype(dtype)
                    stack.append(layer)
                    li += 1
                self.groups[g] = stack
        self.reset_streams()

    def reset_streams(self):
        """Re-seed the stochastic streams (hidden noise, dropout, Gumbel)."""
        hidden_ss, dropout_ss = np.random.SeedSequence(
            self.config.seeds.hidden_noise
        ).spawn(2)
        self._hidden_rng = np.random.Generator(np.random.PCG64(hidden_ss))
        self._dropout_rng = np.random.Generator(np.random.PCG64(dropout_ss))
        self.gumbel = GumbelConfig(
            enabled=self.config.gumbel_enabled,
            tau=self.config.gumbel_tau,
            rng=np.random.Generator(np.random.PCG64(self.config.seeds.gumbel)),
        )

    # parameter access (ordered: embedding, then n, k, l, p, m stacks)
    def parameters(self) -> dict:
        params = {"embedding": self.embedding}
        for g in GROUPS:
            for i, layer in enumerate(self.groups[g]):
                params[f"{g}{i}"] = layer.logits
        return params

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.parameters().items()}

    def bump_param_versions(self):
        for g in GROUPS:
            for layer in self.groups[g]:
                layer.bump_param_version()

    def sample_hidden(self, batch, width, rng=None):
        hi = self.config.hidden_init
        dtype = self.config.np_dtype()
        if hi.kind == "zero":
            return np.zeros((batch, width), dtype=dtype)
        if hi.kind == "one":
            return np.ones((batch, width), dtype=dtype)
        rng = rng if rng is not None else self._hidden_rng
        if hi.kind == "uniform":
            return rng.random((batch, width)).astype(dtype)
        draw = rng.normal(hi.mean, hi.std, size=(batch, width))
        return np.clip(draw, 0.0, 1.0).astype(dtype)

    def dropout_p(self, site) -> float:
        return float(self.config.dropout.get(site, 0.0))


# --- tapes ------------------------------------------------------------------


@dataclass
class GroupCall:
    tapes: list  # LayerTape per layer in the stack
    drop_mask: np.ndarray | None


@dataclass
class ForwardTapes:
    src_ids: np.ndarray
    tgt_in_ids: np.ndarray
    x_src: np.ndarray  # (B,S,d) sigmoid outputs, pre-dropout
    x_tgt: np.ndarray
    src_emb_mask: np.ndarray | None
    tgt_emb_mask: np.ndarray | None
    enc_n: list  # GroupCall per timestep
    enc_k: list
    dec_l: list
    dec_p: list
    dec_m: list
    c: np.ndarray  # (B, wk) context consumed by the decoder
    scores: np.ndarray
    probs: np.ndarray


@dataclass
class ForwardResult:
    probs: np.ndarray  # (B, S, V)
    scores: np.ndarray
    l_emb: float
    tapes: ForwardTapes


@dataclass
class EncoderOutput:
    context: np.ndarray  # (B, wk) final K state


def _lift_ids(ids, seq_len, name):
    ids = np.asarray(ids, dtype=np.int64)
    squeezed = ids.ndim == 1
    if squeezed:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] != seq_len:
        raise ValueError(f"{name} must have shape (*, {seq_len}), got {ids.shape}")
    return ids, squeezed


def _apply_dropout(x, p, rng, train):
    if not train or p <= 0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def _maybe_sample_bits(model, x, train):
    # Bernoulli(x) sample, straight-through backward (identity)
    if not train or not model.config.activation_sampling:
        return x
    return (model._dropout_rng.random(x.shape) < x).astype(x.dtype)


def _run_group(model, group, x, train):
    tapes = []
    h = x
    gcfg = model.gumbel
    use_gumbel = train and gcfg.enabled
    for layer in model.groups[group]:
        if use_gumbel:
            h, tape = forward_gumbel(layer, h, gcfg)
        else:
            h, tape = forward_soft(layer, h)
        tapes.append(tape)
    h, mask = _apply_dropout(h, model.dropout_p(group), model._dropout_rng, train)
    h = _maybe_sample_bits(model, h, train)
    return h, GroupCall(tapes, mask)


def _backward_group(model, group, calls_or_call, grad_out, grads):
    call = calls_or_call
    g = grad_out if call.drop_mask is None else grad_out * call.drop_mask
    for i in range(len(model.groups[group]) - 1, -1, -1):
        layer = model.groups[group][i]
        g, gz = backward_soft(layer, call.tapes[i], g)
        grads[f"{group}{i}"] += gz
    return g


def encode(model, src_ids, *, train=False, k0=None):
    """Run the N/K encoder over a padded batch; returns context and tapes."""
    cfg = model.config
    src_ids, squeezed = _lift_ids(src_ids, cfg.seq_len, "src_ids")
    batch = src_ids.shape[0]
    x_raw = embed_relax(model.embedding, src_ids).astype(cfg.np_dtype())
    x, emb_mask = _apply_dropout(
        x_raw, model.dropout_p("embedding"), model._dropout_rng, train
    )
    x = _maybe_sample_bits(model, x, train)
    wk = cfg.sizes_k[-1]
    k_prev = model.sample_hidden(batch, wk) if k0 is None else np.asarray(k0)
    enc_n, enc_k = [], []
    for t in range(cfg.seq_len):
        h, call_n = _run_group(model, "n", x[:, t], train)
        k_in = np.concatenate([h, k_prev], axis=1)
        k_prev, call_k = _run_group(model, "k", k_in, train)
        enc_n.append(call_n)
        enc_k.append(call_k)
    return (
        EncoderOutput(context=k_prev),
        {
            "src_ids": src_ids,
            "x_src": x_raw,
            "src_emb_mask": emb_mask,
            "enc_n": enc_n,
            "enc_k": enc_k,
            "squeezed": squeezed,
        },
    )


def decode_teacher_forced(model, context, tgt_in_ids, *, train=False, p0=None):
    """Teacher-forced decoder pass over BOS-shifted target ids."""
    cfg = model.config
    tgt_in_ids, _ = _lift_ids(tgt_in_ids, cfg.seq_len, "tgt_in_ids")
    batch = tgt_in_ids.shape[0]
    if context.shape != (batch, cfg.sizes_k[-1]):
        raise ValueError("context shape mismatch")
    y_raw = embed_relax(model.embedding, tgt_in_ids).astype(cfg.np_dtype())
    y, emb_mask = _apply_dropout(
        y_raw, model.dropout_p("embedding"), model._dropout_rng, train
    )
    y = _maybe_sample_bits(model, y, train)
    wp = cfg.sizes_p[-1]
    p_prev = model.sample_hidden(batch, wp) if p0 is None else np.asarray(p0)
    dec_l, dec_p, dec_m = [], [], []
    scores = np.empty((batch, cfg.seq_len, cfg.vocab_size))
    for t in range(cfg.seq_len):
        l_out, call_l = _run_group(model, "l", y[:, t], train)
        p_in = np.concatenate([p_prev, context, l_out], axis=1)
        p_prev, call_p = _run_group(model, "p", p_in, train)
        m_in = np.concatenate([p_prev, context, l_out], axis=1)
        m_out, call_m = _run_group(model, "m", m_in, train)
        scores[:, t] = group_sum(m_out, cfg.group_factor, cfg.groupsum_tau)
        dec_l.append(call_l)
        dec_p.append(call_p)
        dec_m.append(call_m)
    probs = softmax(scores)
    return {
        "tgt_in_ids": tgt_in_ids,
        "x_tgt": y_raw,
        "tgt_emb_mask": emb_mask,
        "dec_l": dec_l,
        "dec_p": dec_p,
        "dec_m": dec_m,
        "scores": scores,
        "probs": probs,
        "l_emb_tgt": embedding_reg_loss(y_raw),
    }


def forward_teacher(model, src_ids, tgt_in_ids, *, train=False, k0=None, p0=None):
    """Full training-mode forward; l_emb averages source and target sides."""
    enc_out, enc_tapes = encode(model, src_ids, train=train, k0=k0)
    dec = decode_teacher_forced(
        model, enc_out.context, tgt_in_ids, train=train, p0=p0
    )
    x_src, x_tgt = enc_tapes["x_src"], dec["x_tgt"]
    total = x_src.size + x_tgt.size
    l_emb = (
        float((x_src * (1 - x_src)).sum() + (x_tgt * (1 - x_tgt)).sum()) / total
    )
    tapes = ForwardTapes(
        src_ids=enc_tapes["src_ids"],
        tgt_in_ids=dec["tgt_in_ids"],
        x_src=x_src,
        x_tgt=x_tgt,
        src_emb_mask=enc_tapes["src_emb_mask"],
        tgt_emb_mask=dec["tgt_emb_mask"],
        enc_n=enc_tapes["enc_n"],
        enc_k=enc_tapes["enc_k"],
        dec_l=dec["dec_l"],
        dec_p=dec["dec_p"],
        dec_m=dec["dec_m"],
        c=enc_out.context,
        scores=dec["scores"],
        probs=dec["probs"],
    )
    return ForwardResult(
        probs=dec["probs"], scores=dec["scores"], l_emb=l_emb, tapes=tapes
    )


def _sigmoid_embed_backward(grads, embedding, ids, x_raw, grad_x, emb_mask):
    if emb_mask is not None:
        grad_x = grad_x * emb_mask
    rows = grad_x * x_raw * (1.0 - x_raw)
    np.add.at(grads["embedding"], ids, rows)


def model_backward(model, tapes: ForwardTapes, grad_scores, aux_out=None):
    """Reverse pass from per-step score gradients to all parameter grads.

    Walks GroupSum, the M head, the P recurrence (through time), the L
    stack, the context fan-in, the K recurrence (through time), the N
    stack, the sigmoid relaxation and the embedding rows.  Gradients on
    the sampled initial hidden states are discarded.  Pass a dict as
    `aux_out` to also receive the accumulated context gradient.
    """
    cfg = model.config
    grad_scores = np.asarray(grad_scores)
    if grad_scores.shape != tapes.scores.shape:
        raise ValueError("grad_scores shape mismatch with recorded scores")
    batch, S = grad_scores.shape[:2]
    wn, wk = cfg.sizes_n[-1], cfg.sizes_k[-1]
    wl, wp = cfg.sizes_l[-1], cfg.sizes_p[-1]
    k_fac, tau = cfg.group_factor, cfg.groupsum_tau

    grads = model.zero_grads()
    grad_c = np.zeros((batch, wk))
    grad_p_carry = np.zeros((batch, wp))
    grad_x_tgt = np.zeros_like(tapes.x_tgt)

    for t in range(S - 1, -1, -1):
        gm = np.repeat(grad_scores[:, t], k_fac, axis=1) / tau
        gm_in = _backward_group(model, "m", tapes.dec_m[t], gm, grads)
        gp_total = gm_in[:, :wp] + grad_p_carry
        grad_c += gm_in[:, wp : wp + wk]
        gl_total = gm_in[:, wp + wk :].copy()

        gp_in = _backward_group(model, "p", tapes.dec_p[t], gp_total, grads)
        grad_p_carry = gp_in[:, :wp]
        grad_c += gp_in[:, wp : wp + wk]
        gl_total += gp_in[:, wp + wk :]

        grad_x_tgt[:, t] = _backward_group(model, "l", tapes.dec_l[t], gl_total, grads)
    # grad_p_carry now sits on the sampled p_0: discarded

    if aux_out is not None:
        aux_out["context"] = grad_c.copy()
    grad_k = grad_c
    grad_x_src = np.zeros_like(tapes.x_src)
    for t in range(S - 1, -1, -1):
        gk_in = _backward_group(model, "k", tapes.enc_k[t], grad_k, grads)
        gh = gk_in[:, :wn]
        grad_k = gk_in[:, wn:]
        grad_x_src[:, t] = _backward_group(model, "n", tapes.enc_n[t], gh, grads)
    # grad_k now sits on the sampled k_0: discarded

    _sigmoid_embed_backward(
        grads, model.embedding, tapes.src_ids, tapes.x_src, grad_x_src,
        tapes.src_emb_mask,
    )
    _sigmoid_embed_backward(
        grads, model.embedding, tapes.tgt_in_ids, tapes.x_tgt, grad_x_tgt,
        tapes.tgt_emb_mask,
    )
    return grads


def embedding_reg_grad(model, tapes: ForwardTapes) -> np.ndarray:
    """d(embedding regulariser)/d(embedding table), for the auxiliary loss.

    The regulariser is the mean of x*(1-x) over both the source and target
    sigmoid outputs; its derivative chains (1-2x)/count through the
    sigmoid derivative x*(1-x) into the looked-up rows.
    """
    grad = np.zeros_like(model.embedding, dtype=np.float64)
    count = tapes.x_src.size + tapes.x_tgt.size
    for ids, x in ((tapes.src_ids, tapes.x_src), (tapes.tgt_in_ids, tapes.x_tgt)):
        rows = (1.0 - 2.0 * x) / count * x * (1.0 - x)
        np.add.at(grad, ids, rows)
    return grad


# --- autoregressive generation ----------------------------------------------


def generate_batch(model, src_ids, max_len=None, *, bos_id=BOS_ID, eos_id=EOS_ID):
    """Greedy decoding for a batch; rows are padded with eos after stopping."""
    cfg = model.config
    src_ids, squeezed = _lift_ids(src_ids, cfg.seq_len, "src_ids")
    if max_len is None:
        max_len = cfg.seq_len
    batch = src_ids.shape[0]
    enc_out, _ = encode(model, src_ids, train=False)
    c = enc_out.context
    p_prev = model.sample_hidden(batch, cfg.sizes_p[-1])
    prev = np.full(batch, bos_id, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    out = np.full((batch, max_len), eos_id, dtype=np.int64)
    for t in range(max_len):
        y = embed_relax(model.embedding, prev).astype(cfg.np_dtype())
        l_out, _ = _run_group(model, "l", y, False)
        p_in = np.concatenate([p_prev, c, l_out], axis=1)
        p_prev, _ = _run_group(model, "p", p_in, False)
        m_in = np.concatenate([p_prev, c, l_out], axis=1)
        m_out, _ = _run_group(model, "m", m_in, False)
        scores = group_sum(m_out, cfg.group_factor, cfg.groupsum_tau)
        tok = np.argmax(scores, axis=1)
        out[~done, t] = tok[~done]
        done |= tok == eos_id
        if done.all():
            out = out[:, : t + 1]
            break
        prev = tok
    return out[0] if squeezed else out


def generate(model, src_ids, max_len=None):
    """Greedy single-sequence decoding; stops at EOS (included) or max_len."""
    row = generate_batch(model, src_ids, max_len)
    toks = list(int(t) for t in row)
    if EOS_ID in toks:
        toks = toks[: toks.index(EOS_ID) + 1]
    return toks
