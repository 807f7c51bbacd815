"""Module tree, parameter registry, and the standard layers.

Parameter names follow attribute paths ("encoder.blocks.2.w") so stage
checkpoints can freeze/serialize by prefix.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .autograd import DEFAULT_DTYPE, Tensor


class Module:
    """Minimal module tree: Tensor attributes are parameters, registered
    ndarray buffers are persistent non-trainable state."""

    def __init__(self):
        self.training = True
        self._buffers = {}

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        setattr(self, name, value)

    def children(self):
        def expand(name, value):
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                for i, m in enumerate(value):
                    yield from expand(f"{name}.{i}", m)

        for name, value in vars(self).items():
            yield from expand(name, value)

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield (prefix + name, value)
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in getattr(self, "_buffers", {}):
            yield (prefix + name, getattr(self, name))
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict:
        """name -> ndarray for every parameter and buffer."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays: dict, prefix: str = "",
                          strict: bool = True):
        own = {name: p for name, p in self.named_parameters()}
        bufs = dict(self.named_buffers())
        missing = []
        for name, param in own.items():
            key = prefix + name
            if key not in arrays:
                missing.append(key)
                continue
            arr = np.asarray(arrays[key], dtype=param.data.dtype)
            if arr.shape != param.data.shape:
                raise ValueError(
                    f"checkpoint tensor {key} has shape {arr.shape}, "
                    f"expected {param.data.shape}")
            param.data = arr.copy()
        for name, buf in bufs.items():
            key = prefix + name
            if key in arrays:
                buf[...] = np.asarray(arrays[key], dtype=buf.dtype).reshape(buf.shape)
            elif strict:
                missing.append(key)
        if strict and missing:
            raise ValueError(f"checkpoint is missing tensors: {missing[:5]}"
                             + ("..." if len(missing) > 5 else ""))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(list):
    pass


def _uniform(rng: np.random.Generator, bound: float, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=DEFAULT_DTYPE):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.w = Tensor(_uniform(rng, bound, (d_in, d_out), dtype),
                        requires_grad=True)
        self.b = Tensor(_uniform(rng, bound, (d_out,), dtype),
                        requires_grad=True) if bias else None
        if self.b is None:
            del self.b  # keep the attribute space clean for named_parameters

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.w, getattr(self, "b", None))


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding="same",
                 dilation: int = 1, groups: int = 1, bias: bool = True,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        fan_in = (c_in // groups) * kernel * kernel
        bound = 1.0 / math.sqrt(fan_in)
        self.w = Tensor(
            _uniform(rng, bound, (c_out, c_in // groups, kernel, kernel), dtype),
            requires_grad=True)
        if bias:
            self.b = Tensor(_uniform(rng, bound, (c_out,), dtype),
                            requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.w, getattr(self, "b", None),
                        stride=self.stride, dilation=self.dilation,
                        groups=self.groups, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(c, dtype=np.float64))
        self.register_buffer("running_var", np.ones(c, dtype=np.float64))
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm_2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, self.training,
                               self.momentum, self.eps)


class MultiheadAttention(Module):
    """Projections sized (d_model // heads) * heads, so head counts that do
    not divide d_model still work (the inner width just shrinks)."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if heads < 1 or d_model // heads < 1:
            raise ValueError(f"need d_model >= heads >= 1, got "
                             f"d_model={d_model}, heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        inner = self.d_head * heads
        self.q_proj = Linear(d_model, inner, rng, dtype=dtype)
        # a key bias shifts every score of a query equally and cancels in
        # the softmax, so it is omitted (its exact gradient is zero)
        self.k_proj = Linear(d_model, inner, rng, bias=False, dtype=dtype)
        self.v_proj = Linear(d_model, inner, rng, dtype=dtype)
        self.out_proj = Linear(inner, d_model, rng, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def forward(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        b, n, _ = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        ctx = F.scaled_dot_product_attention(q, k, v)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, n, self.heads * self.d_head)
        return self.out_proj(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_hidden: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        self.fc1 = Linear(d_model, d_hidden, rng, dtype=dtype)
        self.fc2 = Linear(d_hidden, d_model, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(Module):
    """Post-norm transformer encoder layer."""

    def __init__(self, d_model, heads, d_hidden, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.attn = MultiheadAttention(d_model, heads, rng, dtype=dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, d_hidden, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x, x, x))
        return self.norm2(x + self.ffn(x))


class DecoderLayer(Module):
    """Post-norm decoder layer; self-attention is unmasked because the
    whole output sequence is produced in a single pass."""

    def __init__(self, d_model, heads, d_hidden, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.self_attn = MultiheadAttention(d_model, heads, rng, dtype=dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.cross_attn = MultiheadAttention(d_model, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, d_hidden, rng, dtype=dtype)
        self.norm3 = LayerNorm(d_model, dtype=dtype)

    def forward(self, x: Tensor, memory: Tensor) -> Tensor:
        x = self.norm1(x + self.self_attn(x, x, x))
        x = self.norm2(x + self.cross_attn(x, memory, memory))
        return self.norm3(x + self.ffn(x))


def sinusoidal_encoding(n_positions: int, d_model: int,
                        dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Fixed sin/cos position table [n_positions, d_model]."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * (i // 2) / d_model)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class TokenEmbedding(Module):
    """Linear token projection plus fixed sinusoidal position encoding."""

    def __init__(self, n_features: int, d_model: int, max_len: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.proj = Linear(n_features, d_model, rng, dtype=dtype)
        self.register_buffer("pos_table",
                             sinusoidal_encoding(max_len, d_model, dtype))

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        if n > self.pos_table.shape[0]:
            raise ValueError(f"sequence length {n} exceeds position table "
                             f"({self.pos_table.shape[0]})")
        return self.proj(x) + Tensor(self.pos_table[:n])
