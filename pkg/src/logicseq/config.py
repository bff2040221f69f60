"""Run configuration: one strict JSON document drives every CLI verb.

rejects unknown keys at any level so a typo cannot silently run an
unintended ablation.  Named presets ship inside the package and can be
referenced by bare name (e.g. ``--config toy-copy``).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .data import (
    DataError,
    PreparedPair,
    Vocab,
    build_vocab,
    prepare_pair,
    prepare_shift_pair,
    tokenize,
)
from .layers import NodeInit
from .model import (
    ConfigError,
    HiddenInit,
    ModelConfig,
    Seeds,
    validate_config,
)
from .training import AdamWConfig, AuxTerm, LossConfig, PlateauScheduler, TrainSettings


def _check_keys(d, allowed, required, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    missing = sorted(set(required) - set(d))
    if missing:
        raise ConfigError(f"{path}: missing keys {missing}")


def _parse_model(d) -> ModelConfig:
    allowed = {
        "vocab_size", "emb_dim", "seq_len", "sizes_n", "sizes_k", "sizes_l",
        "sizes_p", "sizes_m", "group_factor", "groupsum_tau", "hidden_init",
        "node_init", "dropout", "gumbel", "activation_sampling", "seeds", "dtype",
    }
    required = {
        "vocab_size", "emb_dim", "seq_len", "sizes_n", "sizes_k", "sizes_l",
        "sizes_p", "sizes_m", "group_factor",
    }
    _check_keys(d, allowed, required, "model")

    hidden = d.get("hidden_init", {})
    _check_keys(hidden, {"kind", "mean", "std"}, {"kind"} if hidden else set(),
                "model.hidden_init")
    node = d.get("node_init", {})
    _check_keys(node, {"kind", "sigma", "beta"}, {"kind"} if node else set(),
                "model.node_init")
    gumbel = d.get("gumbel", {})
    _check_keys(gumbel, {"enabled", "tau"}, set(), "model.gumbel")
    seeds = d.get("seeds", {})
    _check_keys(seeds, {"connectivity", "init", "hidden_noise", "gumbel", "data"},
                set(), "model.seeds")

    dropout = d.get("dropout", {})
    if isinstance(dropout, (int, float)):
        dropout = {site: float(dropout) for site in
                   ("embedding", "n", "k", "l", "p", "m")}

    cfg = ModelConfig(
        vocab_size=int(d["vocab_size"]),
        emb_dim=int(d["emb_dim"]),
        seq_len=int(d["seq_len"]),
        sizes_n=[int(w) for w in d["sizes_n"]],
        sizes_k=[int(w) for w in d["sizes_k"]],
        sizes_l=[int(w) for w in d["sizes_l"]],
        sizes_p=[int(w) for w in d["sizes_p"]],
        sizes_m=[int(w) for w in d["sizes_m"]],
        group_factor=int(d["group_factor"]),
        groupsum_tau=float(d.get("groupsum_tau", 2.0)),
        hidden_init=HiddenInit(**hidden) if hidden else HiddenInit(),
        node_init=NodeInit(**node) if node else NodeInit(),
        dropout={k: float(v) for k, v in dropout.items()},
        gumbel_enabled=bool(gumbel.get("enabled", False)),
        gumbel_tau=float(gumbel.get("tau", 1.0)),
        activation_sampling=bool(d.get("activation_sampling", False)),
        seeds=Seeds(**{k: int(v) for k, v in seeds.items()}),
        dtype=str(d.get("dtype", "float64")),
    )
    validate_config(cfg)
    return cfg


def _parse_loss(d) -> LossConfig:
    _check_keys(d, {"label_smoothing", "aux"}, set(), "loss")
    aux_terms = []
    for i, a in enumerate(d.get("aux", [])):
        _check_keys(
            a,
            {"loss_id", "ramp_start_step", "ramp_end_step", "w_max"},
            {"loss_id"},
            f"loss.aux[{i}]",
        )
        aux_terms.append(AuxTerm(
            loss_id=a["loss_id"],
            ramp_start_step=int(a.get("ramp_start_step", 1000)),
            ramp_end_step=int(a.get("ramp_end_step", 100000)),
            w_max=float(a.get("w_max", 0.1)),
        ))
    if "aux" not in d:
        aux_terms = [AuxTerm()]
    try:
        return LossConfig(
            label_smoothing=float(d.get("label_smoothing", 0.1)),
            aux_terms=aux_terms,
        )
    except ValueError as e:
        raise ConfigError(f"loss: {e}") from e


def _parse_optimizer(d) -> AdamWConfig:
    _check_keys(d, {"lr", "weight_decay", "beta1", "beta2", "eps"}, set(), "optimizer")
    return AdamWConfig(
        lr=float(d.get("lr", 0.05)),
        weight_decay=float(d.get("weight_decay", 0.001)),
        beta1=float(d.get("beta1", 0.9)),
        beta2=float(d.get("beta2", 0.999)),
        eps=float(d.get("eps", 1e-8)),
    )


@dataclass
class SchedulerConfig:
    gamma: float = 0.8
    patience_steps: int = 10000
    min_delta: float = 1e-4

    def build(self, eval_every) -> PlateauScheduler:
        # patience is configured in training steps; the monitor advances
        # once per validation event
        patience_evals = max(1, round(self.patience_steps / eval_every))
        return PlateauScheduler(
            gamma=self.gamma, patience=patience_evals, min_delta=self.min_delta
        )


def _parse_scheduler(d) -> SchedulerConfig:
    _check_keys(d, {"gamma", "patience_steps", "min_delta"}, set(), "scheduler")
    return SchedulerConfig(
        gamma=float(d.get("gamma", 0.8)),
        patience_steps=int(d.get("patience_steps", 10000)),
        min_delta=float(d.get("min_delta", 1e-4)),
    )


_DATA_SCHEMAS = {
    "synthetic-shift": (
        {"kind", "vocab_tokens", "sentences", "val_sentences", "min_len",
         "max_len", "shift", "val_held_in"},
        {"vocab_tokens", "sentences"},
    ),
    "synthetic-translate": (
        {"kind", "vocab_tokens", "sentences", "val_sentences", "min_len",
         "max_len", "reverse"},
        {"vocab_tokens", "sentences"},
    ),
    "parallel-files": ({"kind", "src", "tgt", "val_fraction"}, {"src", "tgt"}),
    "tsv": ({"kind", "path", "val_fraction"}, {"path"}),
    "mono-file": ({"kind", "path", "shift", "val_fraction"}, {"path"}),
}


def _parse_data(d) -> dict:
    if "kind" not in d:
        raise ConfigError("data: missing 'kind'")
    kind = d["kind"]
    if kind not in _DATA_SCHEMAS:
        raise ConfigError(f"data: unknown kind {kind!r}")
    allowed, required = _DATA_SCHEMAS[kind]
    _check_keys(d, allowed, required | {"kind"}, "data")
    return dict(d)


def _parse_train(d) -> TrainSettings:
    _check_keys(
        d,
        {"steps", "eval_every", "checkpoint_every", "batch_tokens", "out_dir"},
        {"steps"},
        "train",
    )
    return TrainSettings(
        steps=int(d["steps"]),
        eval_every=int(d.get("eval_every", 500)),
        checkpoint_every=int(d.get("checkpoint_every", 1000)),
        batch_tokens=int(d.get("batch_tokens", 1024)),
        out_dir=str(d.get("out_dir", "runs/default")),
    )


@dataclass
class RunConfig:
    model: ModelConfig
    loss: LossConfig
    optimizer: AdamWConfig
    scheduler: SchedulerConfig
    data: dict
    train: TrainSettings


def parse_run_config(doc: dict) -> RunConfig:
    _check_keys(
        doc,
        {"model", "loss", "optimizer", "scheduler", "data", "train"},
        {"model", "data", "train"},
        "config",
    )
    run = RunConfig(
        model=_parse_model(doc["model"]),
        loss=_parse_loss(doc.get("loss", {})),
        optimizer=_parse_optimizer(doc.get("optimizer", {})),
        scheduler=_parse_scheduler(doc.get("scheduler", {})),
        data=_parse_data(doc["data"]),
        train=_parse_train(doc["train"]),
    )
    kind = run.data["kind"]
    if kind.startswith("synthetic"):
        if run.data["vocab_tokens"] + 4 > run.model.vocab_size:
            raise ConfigError(
                "data.vocab_tokens + 4 specials exceeds model.vocab_size"
            )
    return run


def load_run_config(path_or_name: str) -> RunConfig:
    """Load a config file, or a shipped preset by bare name."""
    path = resolve_config_path(path_or_name)
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_run_config(doc)


def resolve_config_path(path_or_name: str) -> str:
    if os.path.exists(path_or_name):
        return path_or_name
    name = path_or_name[:-5] if path_or_name.endswith(".json") else path_or_name
    preset = resources.files("logicseq").joinpath(f"presets/{name}.json")
    if preset.is_file():
        return str(preset)
    raise ConfigError(
        f"config {path_or_name!r} is neither a file nor a shipped preset"
    )


def preset_names() -> list:
    root = resources.files("logicseq").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


# --- dataset construction ------------------------------------------------------


@dataclass
class Dataset:
    train_pairs: list
    val_pairs: list
    vocab: Vocab


def _synthetic_lexicon(n) -> list:
    return [f"w{i:02d}" for i in range(n)]


def _synthetic_sentences(n, lexicon, min_len, max_len, rng) -> list:
    out = []
    for _ in range(n):
        ln = int(rng.integers(min_len, max_len + 1))
        out.append([lexicon[i] for i in rng.integers(0, len(lexicon), size=ln)])
    return out


def _reject_filter(pairs):
    kept = [p for p in pairs if p is not None]
    if not kept:
        raise DataError("all samples were rejected during preparation")
    return kept


def build_dataset(run: RunConfig) -> Dataset:
    """Materialise train/val PreparedPairs and the shared vocabulary."""
    d = run.data
    cfg = run.model
    S = cfg.seq_len
    kind = d["kind"]
    gen_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seeds.data, spawn_key=(10**9,))
    )

    if kind in ("synthetic-shift", "synthetic-translate"):
        lexicon = _synthetic_lexicon(int(d["vocab_tokens"]))
        min_len = int(d.get("min_len", max(1, S - 2)))
        max_len = int(d.get("max_len", S - 1))
        n_train = int(d["sentences"])
        n_val = int(d.get("val_sentences", max(1, n_train // 10)))
        held_in = bool(d.get("val_held_in", kind == "synthetic-shift"))
        train_sents = _synthetic_sentences(n_train, lexicon, min_len, max_len, gen_rng)
        val_sents = (
            train_sents[:n_val]
            if held_in
            else _synthetic_sentences(n_val, lexicon, min_len, max_len, gen_rng)
        )
        vocab = build_vocab(train_sents, cfg.vocab_size)
        if kind == "synthetic-shift":
            shift = int(d.get("shift", 0))
            train_pairs = [prepare_shift_pair(s, vocab, S, shift) for s in train_sents]
            val_pairs = [prepare_shift_pair(s, vocab, S, shift) for s in val_sents]
        else:
            perm = gen_rng.permutation(len(lexicon))
            mapping = {lexicon[i]: lexicon[perm[i]] for i in range(len(lexicon))}
            reverse = bool(d.get("reverse", True))

            def translate(sent):
                out = [mapping[t] for t in sent]
                return out[::-1] if reverse else out

            train_pairs = [
                prepare_pair(s, translate(s), vocab, S) for s in train_sents
            ]
            val_pairs = [prepare_pair(s, translate(s), vocab, S) for s in val_sents]
        return Dataset(_reject_filter(train_pairs), _reject_filter(val_pairs), vocab)

    if kind == "mono-file":
        lines = _read_lines(d["path"])
        toks = [tokenize(ln) for ln in lines]
        vocab = build_vocab([t for t in toks if t], cfg.vocab_size)
        shift = int(d.get("shift", 0))
        pairs = [prepare_shift_pair(t, vocab, S, shift) for t in toks]
        return _split(pairs, float(d.get("val_fraction", 0.05)), vocab)

    if kind == "tsv":
        lines = _read_lines(d["path"])
        src_tgt = []
        for ln in lines:
            parts = ln.split("\t")
            if len(parts) == 2:
                src_tgt.append((tokenize(parts[0]), tokenize(parts[1])))
        return _build_parallel(src_tgt, cfg, S, float(d.get("val_fraction", 0.05)))

    if kind == "parallel-files":
        src_lines = _read_lines(d["src"])
        tgt_lines = _read_lines(d["tgt"])
        if len(src_lines) != len(tgt_lines):
            raise DataError("parallel files have different line counts")
        src_tgt = [(tokenize(a), tokenize(b)) for a, b in zip(src_lines, tgt_lines)]
        return _build_parallel(src_tgt, cfg, S, float(d.get("val_fraction", 0.05)))

    raise ConfigError(f"unhandled data kind {kind!r}")


def _read_lines(path):
    if not os.path.exists(path):
        raise DataError(f"data file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return [ln.strip() for ln in f if ln.strip()]


def _build_parallel(src_tgt, cfg, S, val_fraction):
    both = [t for pair in src_tgt for t in pair if t]
    vocab = build_vocab(both, cfg.vocab_size)
    pairs = [prepare_pair(s, t, vocab, S) for s, t in src_tgt]
    return _split(pairs, val_fraction, vocab)


def _split(pairs, val_fraction, vocab) -> Dataset:
    pairs = _reject_filter(pairs)
    n_val = max(1, int(len(pairs) * val_fraction))
    if n_val >= len(pairs):
        raise DataError("validation split would consume the whole corpus")
    return Dataset(pairs[:-n_val], pairs[-n_val:], vocab)
