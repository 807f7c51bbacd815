"""Late fusion of the 40-d sequence and visual embeddings into 2 logits."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .autograd import Tensor, concat, stack
from .layers import Linear, Module

EMBED_DIM = 40


def _check(emb: Tensor, name: str):
    if emb.shape[-1] != EMBED_DIM:
        raise ValueError(f"{name} embedding must have length {EMBED_DIM}, "
                         f"got {emb.shape}")


class DenseFusion(Module):
    """concat(80) -> dense 80 -> dense 40 -> dense 2, GELU between hidden
    layers, linear logits."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(2 * EMBED_DIM, 80, rng, dtype=dtype)
        self.fc2 = Linear(80, 40, rng, dtype=dtype)
        self.fc3 = Linear(40, 2, rng, dtype=dtype)

    def forward(self, seq_emb: Tensor, vis_emb: Tensor) -> Tensor:
        _check(seq_emb, "sequence")
        _check(vis_emb, "visual")
        h = concat([seq_emb, vis_emb], axis=-1)
        h = F.gelu(self.fc1(h))
        h = F.gelu(self.fc2(h))
        return self.fc3(h)


class ModalityAttentionFusion(Module):
    """Stack the two embeddings into a 2x40 matrix, self-attend over the
    modality axis, concatenate the attention context back, and classify."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(2 * 2 * EMBED_DIM, 80, rng, dtype=dtype)
        self.fc2 = Linear(80, 40, rng, dtype=dtype)
        self.fc3 = Linear(40, 2, rng, dtype=dtype)

    def combined(self, seq_emb: Tensor, vis_emb: Tensor) -> Tensor:
        _check(seq_emb, "sequence")
        _check(vis_emb, "visual")
        return stack([seq_emb, vis_emb], axis=-2)      # [.., 2, 40]

    def forward(self, seq_emb: Tensor, vis_emb: Tensor) -> Tensor:
        combined = self.combined(seq_emb, vis_emb)
        context = F.scaled_dot_product_attention(combined, combined, combined)
        merged = concat([context, combined], axis=-1)  # [.., 2, 80]
        flat = merged.reshape(*merged.shape[:-2], 4 * EMBED_DIM)
        h = F.gelu(self.fc1(flat))
        h = F.gelu(self.fc2(h))
        return self.fc3(h)
