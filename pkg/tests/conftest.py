"""Shared helpers for building small models and corpora in tests."""

import numpy as np

from charnmt.model import Model, ModelConfig, init_params
from charnmt.textpipe import EOS_ID


def small_model(seed=0, decoder="base", precision="wide", src_vocab=11, tgt_vocab=9, **kw):
    cfg = ModelConfig(
        src_vocab_size=src_vocab, tgt_vocab_size=tgt_vocab,
        d_emb=4, d_enc=5, d_dec=6, decoder=decoder, precision=precision, **kw,
    )
    return Model(cfg, init_params(cfg, seed))


def random_source(rng, vocab_size=11, max_len=8):
    n = int(rng.integers(1, max_len))
    body = rng.integers(4, vocab_size, size=n)
    return np.concatenate([body, [EOS_ID]])
