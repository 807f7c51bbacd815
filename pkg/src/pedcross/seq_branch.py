"""Sequence attention branch: typed past+predicted trajectory tokens through
an encoder-only transformer, mean-pooled and projected to the 40-d fusion
embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .layers import (EncoderLayer, LayerNorm, Linear, Module, ModuleList,
                     TokenEmbedding)

PAST_LEN = 15
HORIZON = 60
EMBED_DIM = 40


@dataclass
class SeqBranchConfig:
    layers: int = 6
    heads: int = 12
    d_model: int = 128
    ffn_dim: int = 1024
    n_features: int = 5
    use_type_ids: bool = True
    use_pred: bool = True

    def __post_init__(self):
        if self.d_model // self.heads < 1:
            raise ValueError(
                f"d_model={self.d_model} too small for {self.heads} heads")

    @property
    def token_width(self) -> int:
        """Type ids add one input column; they only exist when predicted
        tokens are present (a single sequence type needs no marker)."""
        extra = 1 if (self.use_type_ids and self.use_pred) else 0
        return self.n_features + extra

    @property
    def seq_len(self) -> int:
        return PAST_LEN + HORIZON if self.use_pred else PAST_LEN

    @classmethod
    def full(cls, **kw) -> "SeqBranchConfig":
        return cls(**kw)

    @classmethod
    def small(cls, **kw) -> "SeqBranchConfig":
        return cls(layers=2, heads=2, ffn_dim=256, **kw)

    @classmethod
    def tiny(cls, **kw) -> "SeqBranchConfig":
        return cls(layers=1, heads=2, d_model=16, ffn_dim=32, **kw)


def append_type_ids(past: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """[.., 15, m] + [.., 60, m] -> [.., 75, m+1]; the trailing column is 0
    for observed rows and 1 for predicted rows."""
    past = np.asarray(past)
    pred = np.asarray(pred)
    if past.shape[-2] != PAST_LEN or pred.shape[-2] != HORIZON or \
            past.shape[-1] != pred.shape[-1]:
        raise ValueError(
            f"expected [..,15,m] and [..,60,m], got {past.shape} and "
            f"{pred.shape}")
    seq = np.concatenate([past, pred], axis=-2)
    ids = np.zeros(seq.shape[:-1] + (1,), dtype=seq.dtype)
    ids[..., PAST_LEN:, :] = 1.0
    return np.concatenate([seq, ids], axis=-1)


class SequenceAttentionBranch(Module):
    def __init__(self, config: SeqBranchConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.config = config
        self.embed = TokenEmbedding(config.token_width, config.d_model,
                                    config.seq_len, rng, dtype=dtype)
        self.blocks = ModuleList(
            EncoderLayer(config.d_model, config.heads, config.ffn_dim, rng,
                         dtype=dtype) for _ in range(config.layers))
        self.norm = LayerNorm(config.d_model, dtype=dtype)
        self.projection = Linear(config.d_model, EMBED_DIM, rng, dtype=dtype)

    def build_tokens(self, past: np.ndarray,
                     pred: np.ndarray | None) -> np.ndarray:
        cfg = self.config
        if not cfg.use_pred:
            return np.asarray(past)
        if pred is None:
            raise ValueError("this branch configuration needs a predicted "
                             "trajectory")
        if cfg.use_type_ids:
            return append_type_ids(past, pred)
        return np.concatenate([past, pred], axis=-2)

    def encode_pooled(self, tokens: Tensor) -> Tensor:
        """[B, n, width] -> [B, d_model] mean-pooled encoding."""
        if tokens.shape[-1] != self.config.token_width or \
                tokens.shape[-2] != self.config.seq_len:
            raise ValueError(
                f"expected [..,{self.config.seq_len},"
                f"{self.config.token_width}] tokens, got {tokens.shape}")
        h = self.embed(tokens)
        for block in self.blocks:
            h = block(h)
        return self.norm(h).mean(axis=1)

    def forward_tokens(self, tokens: Tensor) -> Tensor:
        return self.projection(self.encode_pooled(tokens))

    def forward(self, past: np.ndarray, pred: np.ndarray | None = None) -> Tensor:
        """Normalized past [15,m] or [B,15,m] (plus pred) -> embedding
        [40] / [B,40]."""
        arr = self.build_tokens(past, pred)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        out = self.forward_tokens(Tensor(arr.astype(np.float32, copy=False)))
        return out[0] if single else out
