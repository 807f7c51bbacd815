"""Visual Attention Network backbone built around large kernel attention.

Each LKA gate decomposes a large receptive field into a 5x5 depthwise
convolution, a 7x7 depthwise convolution with dilation 3, and a 1x1
channel convolution; the result multiplies the block input elementwise.
Stages downsample with overlapping strided patch embeddings (4,2,2,2),
so the input resolution must be divisible by 32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .autograd import Tensor
from .layers import (BatchNorm2d, Conv2d, LayerNorm, Linear, Module,
                     ModuleList)

PATCH_STRIDES = (4, 2, 2, 2)
TOTAL_STRIDE = 32


@dataclass
class VanConfig:
    dims: tuple = (64, 128, 320, 512)
    depths: tuple = (3, 3, 12, 3)
    mlp_ratios: tuple = (8, 8, 4, 4)
    in_channels: int = 3
    num_classes: int = 1000   # reference classifier head; 0 disables it
    input_size: int = 224
    variant: str = "b2"

    def __post_init__(self):
        if self.input_size % TOTAL_STRIDE != 0:
            raise ValueError(
                f"input size {self.input_size} must be divisible by "
                f"{TOTAL_STRIDE} (cumulative patch stride)")
        if not (len(self.dims) == len(self.depths) == len(self.mlp_ratios) == 4):
            raise ValueError("dims/depths/mlp_ratios must each have 4 stages")

    @classmethod
    def b2(cls, **kw) -> "VanConfig":
        return cls(variant="b2", **kw)

    @classmethod
    def b0(cls, **kw) -> "VanConfig":
        return cls(dims=(32, 64, 160, 256), depths=(3, 3, 5, 2),
                   mlp_ratios=(8, 8, 4, 4), variant="b0", **kw)

    @classmethod
    def tiny_test(cls, **kw) -> "VanConfig":
        """One narrow block per stage; used by the gradient suite."""
        kw.setdefault("input_size", 32)
        return cls(dims=(4, 8, 8, 8), depths=(1, 1, 1, 1),
                   mlp_ratios=(2, 2, 2, 2), variant="tiny", **kw)

    @property
    def feature_dim(self) -> int:
        return self.dims[-1]


class LargeKernelAttention(Module):
    def __init__(self, dim: int, rng, dtype=np.float32):
        super().__init__()
        self.local = Conv2d(dim, dim, 5, rng, padding="same", groups=dim,
                            dtype=dtype)
        self.long_range = Conv2d(dim, dim, 7, rng, padding="same",
                                 dilation=3, groups=dim, dtype=dtype)
        self.channel_mix = Conv2d(dim, dim, 1, rng, padding=0, dtype=dtype)
        # test hook: when set, replaces the computed attention map
        self.attn_override = None

    def attention_map(self, x: Tensor) -> Tensor:
        return self.channel_mix(self.long_range(self.local(x)))

    def forward(self, x: Tensor) -> Tensor:
        if self.attn_override is not None:
            return x * Tensor(np.asarray(self.attn_override, dtype=x.dtype))
        return x * self.attention_map(x)


class SpatialAttention(Module):
    def __init__(self, dim: int, rng, dtype=np.float32):
        super().__init__()
        self.proj_in = Conv2d(dim, dim, 1, rng, padding=0, dtype=dtype)
        self.gate = LargeKernelAttention(dim, rng, dtype=dtype)
        self.proj_out = Conv2d(dim, dim, 1, rng, padding=0, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.gate(F.gelu(self.proj_in(x)))
        return self.proj_out(h) + x


class ConvMlp(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Conv2d(dim, hidden, 1, rng, padding=0, dtype=dtype)
        self.dw = Conv2d(hidden, hidden, 3, rng, padding="same",
                         groups=hidden, dtype=dtype)
        self.fc2 = Conv2d(hidden, dim, 1, rng, padding=0, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.dw(self.fc1(x))))


class VanBlock(Module):
    LAYER_SCALE_INIT = 1e-2

    def __init__(self, dim: int, mlp_ratio: int, rng, dtype=np.float32):
        super().__init__()
        self.norm1 = BatchNorm2d(dim, dtype=dtype)
        self.attn = SpatialAttention(dim, rng, dtype=dtype)
        self.norm2 = BatchNorm2d(dim, dtype=dtype)
        self.mlp = ConvMlp(dim, dim * mlp_ratio, rng, dtype=dtype)
        self.scale1 = Tensor(
            np.full((dim, 1, 1), self.LAYER_SCALE_INIT, dtype=dtype),
            requires_grad=True)
        self.scale2 = Tensor(
            np.full((dim, 1, 1), self.LAYER_SCALE_INIT, dtype=dtype),
            requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.scale1 * self.attn(self.norm1(x))
        return x + self.scale2 * self.mlp(self.norm2(x))


class PatchEmbed(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 rng, dtype=np.float32):
        super().__init__()
        self.proj = Conv2d(c_in, c_out, kernel, rng, stride=stride,
                           padding=kernel // 2, dtype=dtype)
        self.norm = BatchNorm2d(c_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.proj(x))


class VanBackbone(Module):
    """Four-stage hierarchy; `forward` returns the pooled final-stage
    feature and `forward_logits` applies the classifier head."""

    def __init__(self, config: VanConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.config = config
        c_prev = config.in_channels
        self.embeds = ModuleList()
        self.stages = ModuleList()
        self.norms = ModuleList()
        for i, (dim, depth, ratio) in enumerate(
                zip(config.dims, config.depths, config.mlp_ratios)):
            kernel = 7 if i == 0 else 3
            self.embeds.append(PatchEmbed(c_prev, dim, kernel,
                                          PATCH_STRIDES[i], rng, dtype=dtype))
            self.stages.append(ModuleList(
                VanBlock(dim, ratio, rng, dtype=dtype) for _ in range(depth)))
            self.norms.append(LayerNorm(dim, dtype=dtype))
            c_prev = dim
        if config.num_classes > 0:
            self.head = Linear(config.dims[-1], config.num_classes, rng,
                               dtype=dtype)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, x: Tensor) -> Tensor:
        """[B, 3, H, W] -> pooled feature [B, dims[-1]]."""
        if x.shape[-1] % TOTAL_STRIDE or x.shape[-2] % TOTAL_STRIDE:
            raise ValueError(
                f"input spatial size {x.shape[-2:]}, must be divisible "
                f"by {TOTAL_STRIDE}")
        n_stages = len(self.stages)
        for i in range(n_stages):
            x = self.embeds[i](x)
            for block in self.stages[i]:
                x = block(x)
            b, c, h, w = x.shape
            tokens = x.reshape(b, c, h * w).transpose(0, 2, 1)
            tokens = self.norms[i](tokens)
            if i < n_stages - 1:
                x = tokens.transpose(0, 2, 1).reshape(b, c, h, w)
            else:
                x = tokens.mean(axis=1)
        return x

    def forward_logits(self, x: Tensor) -> Tensor:
        head = getattr(self, "head", None)
        if head is None:
            raise ValueError("backbone was built without a classifier head")
        return head(self.forward(x))
