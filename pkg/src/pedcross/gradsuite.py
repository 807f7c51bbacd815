"""Finite-difference verification of every operator and composed block.

Operators are probed at every coordinate; composed blocks sample a fixed
number of coordinates per parameter (different coordinates per seed, so
repeated seeds widen coverage). 32-bit checks compare float32 analytic
gradients against a float64 numeric oracle at 1e-4; 64-bit checks run the
whole graph in float64 at 1e-6.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import functional as F
from .autograd import Tensor
from .gradcheck import grad_check

TOL = {np.float32: 1e-4, np.float64: 1e-6}
BLOCK_COORDS = 8


def _t(rng, shape, dtype, scale=1.0):
    return Tensor(rng.standard_normal(shape).astype(dtype) * scale,
                  requires_grad=True)


# -- operator-level checks -------------------------------------------------

def check_linear(rng, dtype):
    x = _t(rng, (3, 4), dtype)
    w = _t(rng, (4, 5), dtype)
    b = _t(rng, (5,), dtype)
    target = rng.standard_normal((3, 5)).astype(dtype)
    return (lambda: ((F.linear(x, w, b) - Tensor(target)) ** 2).sum(),
            [("x", x), ("w", w), ("b", b)])


def check_attention(rng, dtype):
    q = _t(rng, (2, 5, 4), dtype)
    k = _t(rng, (2, 5, 4), dtype)
    v = _t(rng, (2, 5, 4), dtype)
    return (lambda: (F.scaled_dot_product_attention(q, k, v) ** 2).sum(),
            [("q", q), ("k", k), ("v", v)])


def check_layer_norm(rng, dtype):
    x = _t(rng, (4, 6), dtype)
    g = _t(rng, (6,), dtype)
    b = _t(rng, (6,), dtype)
    mixer = rng.standard_normal((4, 6)).astype(dtype)
    return (lambda: (F.layer_norm(x, g, b) * Tensor(mixer)).sum(),
            [("x", x), ("gamma", g), ("beta", b)])


def check_gelu_softmax(rng, dtype):
    x = _t(rng, (3, 7), dtype)
    return (lambda: (F.softmax(F.gelu(x), axis=-1) ** 3).sum(), [("x", x)])


def check_conv_depthwise(rng, dtype):
    x = _t(rng, (2, 3, 8, 9), dtype)
    w = _t(rng, (3, 1, 3, 3), dtype)
    return (lambda: (F.conv2d(x, w, None, dilation=2, groups=3,
                              padding="same") ** 2).sum(),
            [("x", x), ("w", w)])


def check_conv_dense(rng, dtype):
    x = _t(rng, (2, 3, 8, 9), dtype)
    w = _t(rng, (4, 3, 3, 3), dtype)
    b = _t(rng, (4,), dtype)
    return (lambda: (F.conv2d(x, w, b, stride=2, padding=1) ** 2).sum(),
            [("x", x), ("w", w), ("b", b)])


def check_conv_pointwise(rng, dtype):
    x = _t(rng, (2, 4, 5, 5), dtype)
    w = _t(rng, (6, 4, 1, 1), dtype)
    return (lambda: (F.conv2d(x, w, None, padding=0) ** 2).sum(),
            [("x", x), ("w", w)])


def check_batch_norm_train(rng, dtype):
    x = _t(rng, (3, 4, 5, 5), dtype)
    g = _t(rng, (4,), dtype)
    b = _t(rng, (4,), dtype)
    rm = np.zeros(4)
    rv = np.ones(4)

    def loss():
        y = F.batch_norm_2d(x, g, b, rm.copy(), rv.copy(), training=True)
        return (y ** 3).sum()

    return loss, [("x", x), ("gamma", g), ("beta", b)]


def check_batch_norm_eval(rng, dtype):
    x = _t(rng, (3, 4, 5, 5), dtype)
    g = _t(rng, (4,), dtype)
    b = _t(rng, (4,), dtype)
    rm = rng.standard_normal(4)
    rv = rng.uniform(0.5, 2.0, 4)
    return (lambda: (F.batch_norm_2d(x, g, b, rm, rv,
                                     training=False) ** 2).sum(),
            [("x", x), ("gamma", g), ("beta", b)])


# -- composed blocks ---------------------------------------------------------

def check_block_forecaster(rng, dtype):
    from .forecaster import ForecasterConfig, TrajectoryForecaster, \
        traj_mse_loss

    model = TrajectoryForecaster(ForecasterConfig.tiny(), rng, dtype=dtype)
    model.train()
    past = Tensor(rng.standard_normal((2, 15, 5)).astype(dtype))
    target = Tensor(rng.standard_normal((2, 60, 5)).astype(dtype))
    return (lambda: traj_mse_loss(model(past), target),
            list(model.named_parameters()))


def check_block_seq_branch(rng, dtype):
    from .seq_branch import SeqBranchConfig, SequenceAttentionBranch

    model = SequenceAttentionBranch(SeqBranchConfig.tiny(), rng, dtype=dtype)
    tokens = Tensor(rng.standard_normal((2, 75, 6)).astype(dtype))
    mixer = rng.standard_normal((2, 40)).astype(dtype)
    return (lambda: (model.forward_tokens(tokens) * Tensor(mixer)).sum(),
            list(model.named_parameters()))


def check_block_van(rng, dtype):
    from .van import VanBlock

    block = VanBlock(4, 2, rng, dtype=dtype)
    block.train()
    x = Tensor(rng.standard_normal((2, 4, 8, 8)).astype(dtype))
    mixer = rng.standard_normal((2, 4, 8, 8)).astype(dtype)
    return (lambda: (block(x) * Tensor(mixer)).sum(),
            list(block.named_parameters()))


def check_block_fusion(rng, dtype):
    from .fusion import DenseFusion

    head = DenseFusion(rng, dtype=dtype)
    a = _t(rng, (3, 40), dtype, scale=0.5)
    b = _t(rng, (3, 40), dtype, scale=0.5)
    params = [("seq_emb", a), ("vis_emb", b)] + list(head.named_parameters())
    return (lambda: (head(a, b) ** 2).sum(), params)


def check_block_fusion_attention(rng, dtype):
    from .fusion import ModalityAttentionFusion

    head = ModalityAttentionFusion(rng, dtype=dtype)
    a = _t(rng, (2, 40), dtype, scale=0.5)
    b = _t(rng, (2, 40), dtype, scale=0.5)
    params = [("seq_emb", a), ("vis_emb", b)] + list(head.named_parameters())
    return (lambda: (head(a, b) ** 2).sum(), params)


OPERATOR_CHECKS = {
    "linear": check_linear,
    "attention": check_attention,
    "layer_norm": check_layer_norm,
    "gelu_softmax": check_gelu_softmax,
    "conv_depthwise_dilated": check_conv_depthwise,
    "conv_dense_strided": check_conv_dense,
    "conv_pointwise": check_conv_pointwise,
    "batch_norm_train": check_batch_norm_train,
    "batch_norm_eval": check_batch_norm_eval,
}

BLOCK_CHECKS = {
    "forecaster_tiny": check_block_forecaster,
    "seq_branch_tiny": check_block_seq_branch,
    "van_block": check_block_van,
    "fusion_head": check_block_fusion,
    "fusion_attention_head": check_block_fusion_attention,
}


def run_one(name, builder, seed: int, dtype, max_coords=None):
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    loss_fn, params = builder(rng, dtype)
    return grad_check(loss_fn, params, tol=TOL[dtype],
                      max_coords=max_coords,
                      rng=np.random.default_rng([seed, 17]))


def run_operator_suite(n_seeds: int = 3, verbose: bool = False) -> int:
    """Run every check across seeds and both precisions. Returns the number
    of failures."""
    failures = 0
    for dtype in (np.float64, np.float32):
        for table, coords in ((OPERATOR_CHECKS, None),
                              (BLOCK_CHECKS, BLOCK_COORDS)):
            for name, builder in table.items():
                worst = 0.0
                ok = True
                for seed in range(n_seeds):
                    report = run_one(name, builder, seed, dtype,
                                     max_coords=coords)
                    worst = max(worst, report.max_rel_error)
                    ok = ok and report.ok
                failures += 0 if ok else 1
                if verbose:
                    bits = 64 if dtype == np.float64 else 32
                    status = "PASS" if ok else "FAIL"
                    print(f"{status} {name:26s} {bits}-bit  "
                          f"max rel err {worst:.3e} "
                          f"(tol {TOL[dtype]:.0e}, {n_seeds} seeds)")
    return failures
