import numpy as np
import pytest

from logicseq.layers import NodeInit
from logicseq.model import HiddenInit, ModelConfig, Seeds, Seq2SeqModel


def tiny_config(**overrides):
    base = dict(
        vocab_size=8,
        emb_dim=8,
        seq_len=3,
        sizes_n=[6],
        sizes_k=[8, 6],
        sizes_l=[6],
        sizes_p=[8, 6],
        sizes_m=[10, 16],
        group_factor=2,
        groupsum_tau=2.0,
        node_init=NodeInit(kind="residual", sigma=1.0, beta=3.0),
        seeds=Seeds(7, 8, 9, 10, 11),
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    return Seq2SeqModel(tiny_config())


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(5)
    src = rng.integers(4, 8, size=(2, 3))
    src[:, -1] = 2  # EOS
    tgt_out = src.copy()
    tgt_in = np.concatenate([np.ones((2, 1), dtype=np.int64), tgt_out[:, :-1]], axis=1)
    mask = np.ones_like(tgt_out, dtype=bool)
    return src, tgt_in, tgt_out, mask
