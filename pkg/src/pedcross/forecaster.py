"""Non-autoregressive encoder-decoder transformer for trajectory forecasting.

The decoder consumes the 15 observed rows concatenated with 60 zero rows
and emits all 75 rows in a single pass; only the trailing 60 are
returned. Inputs are expected in normalized (offset + z-scored) space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, concat
from .layers import (DecoderLayer, EncoderLayer, LayerNorm, Linear, Module,
                     ModuleList, TokenEmbedding)

PAST_LEN = 15
HORIZON = 60


@dataclass
class ForecasterConfig:
    enc_layers: int = 8
    dec_layers: int = 8
    heads: int = 4
    d_model: int = 128
    ffn_dim: int = 512
    n_features: int = 5
    past_len: int = PAST_LEN
    horizon: int = HORIZON

    def __post_init__(self):
        if self.d_model // self.heads < 1:
            raise ValueError(
                f"d_model={self.d_model} too small for {self.heads} heads")
        if self.past_len + self.horizon != 75:
            raise ValueError("past_len + horizon must equal 75")

    @classmethod
    def full(cls, n_features: int = 5) -> "ForecasterConfig":
        return cls(n_features=n_features)

    @classmethod
    def small(cls, n_features: int = 5) -> "ForecasterConfig":
        return cls(enc_layers=2, dec_layers=2, heads=2, ffn_dim=256,
                   n_features=n_features)

    @classmethod
    def tiny(cls, n_features: int = 5) -> "ForecasterConfig":
        """Desk-size config for gradient checks."""
        return cls(enc_layers=1, dec_layers=1, heads=2, d_model=16,
                   ffn_dim=32, n_features=n_features)


def build_decoder_input(past: np.ndarray, horizon: int = HORIZON) -> np.ndarray:
    """[.., 15, m] -> [.., 75, m]: observed rows then zero placeholders."""
    past = np.asarray(past)
    if past.shape[-2] != PAST_LEN:
        raise ValueError(
            f"expected {PAST_LEN} observed rows, got shape {past.shape}")
    zeros = np.zeros(past.shape[:-2] + (horizon, past.shape[-1]),
                     dtype=past.dtype)
    return np.concatenate([past, zeros], axis=-2)


class TrajectoryForecaster(Module):
    def __init__(self, config: ForecasterConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.config = config
        total = config.past_len + config.horizon
        self.enc_embed = TokenEmbedding(config.n_features, config.d_model,
                                        total, rng, dtype=dtype)
        self.dec_embed = TokenEmbedding(config.n_features, config.d_model,
                                        total, rng, dtype=dtype)
        self.encoder = ModuleList(
            EncoderLayer(config.d_model, config.heads, config.ffn_dim, rng,
                         dtype=dtype) for _ in range(config.enc_layers))
        self.enc_norm = LayerNorm(config.d_model, dtype=dtype)
        self.decoder = ModuleList(
            DecoderLayer(config.d_model, config.heads, config.ffn_dim, rng,
                         dtype=dtype) for _ in range(config.dec_layers))
        self.dec_norm = LayerNorm(config.d_model, dtype=dtype)
        self.out_proj = Linear(config.d_model, config.n_features, rng,
                               dtype=dtype)
        # pass counters: non-autoregression means exactly one encoder and
        # one decoder sweep per prediction
        self.encoder_passes = 0
        self.decoder_passes = 0

    def _encode(self, past: Tensor) -> Tensor:
        self.encoder_passes += 1
        h = self.enc_embed(past)
        for layer in self.encoder:
            h = layer(h)
        return self.enc_norm(h)

    def _decode(self, dec_in: Tensor, memory: Tensor) -> Tensor:
        self.decoder_passes += 1
        h = self.dec_embed(dec_in)
        for layer in self.decoder:
            h = layer(h, memory)
        return self.dec_norm(h)

    def forward(self, past: Tensor) -> Tensor:
        """[B, 15, m] normalized past -> [B, 60, m] normalized forecast."""
        if past.shape[-2] != self.config.past_len or \
                past.shape[-1] != self.config.n_features:
            raise ValueError(
                f"expected [..,{self.config.past_len},"
                f"{self.config.n_features}], got {past.shape}")
        if not np.all(np.isfinite(past.data)):
            raise ValueError("past trajectory contains non-finite values")
        memory = self._encode(past)
        dec_in = Tensor(build_decoder_input(past.data, self.config.horizon))
        full = self.out_proj(self._decode(dec_in, memory))
        return full[:, self.config.past_len:, :]

    def predict(self, past: np.ndarray) -> np.ndarray:
        """Single sequence [15, m] -> [60, m] (no gradient tracking)."""
        from .autograd import no_grad

        with no_grad():
            out = self.forward(Tensor(past[None].astype(np.float32)))
        return out.data[0]


def traj_mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every (sample, step, channel) entry."""
    if pred.shape != target.shape:
        raise ValueError(
            f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def persistence_baseline(past: np.ndarray, horizon: int = HORIZON) -> np.ndarray:
    """Repeat the last observed row for the whole horizon."""
    past = np.asarray(past)
    last = past[..., -1:, :]
    reps = [1] * (past.ndim - 2) + [horizon, 1]
    return np.tile(last, reps)
