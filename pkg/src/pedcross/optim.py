"""Adam with a linear warmup / linear decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor


@dataclass
class WarmupLinearSchedule:
    """LR ramps 0 -> peak over `warmup_steps`, then decays linearly to 0
    at `total_steps`."""

    peak_lr: float
    total_steps: int
    warmup_steps: int | None = None

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.warmup_steps is None:
            self.warmup_steps = max(1, round(0.1 * self.total_steps))
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")

    def lr_at_step(self, step: int) -> float:
        if step < 0:
            raise ValueError(f"negative step {step}")
        if step > self.total_steps:
            return 0.0
        if step <= self.warmup_steps:
            if self.warmup_steps == 0:
                return self.peak_lr
            return self.peak_lr * step / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        return self.peak_lr * (self.total_steps - step) / span


def lr_at_step(peak_lr: float, warmup_steps: int, total_steps: int,
               step: int) -> float:
    return WarmupLinearSchedule(peak_lr, total_steps,
                                warmup_steps).lr_at_step(step)


class Adam:
    """Adam over parameter groups; each group carries an lr multiplier so a
    group can be held at lr 0 without leaving the optimizer."""

    def __init__(self, params, schedule: WarmupLinearSchedule,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if isinstance(params, dict) or (params and isinstance(params[0], dict)):
            groups = params
        else:
            groups = [{"params": list(params), "scale": 1.0}]
        self.groups = [{"params": list(g["params"]),
                        "scale": float(g.get("scale", 1.0))} for g in groups]
        self.schedule = schedule
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {}
        self._v = {}
        for g in self.groups:
            for p in g["params"]:
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    @property
    def current_lr(self) -> float:
        return self.schedule.lr_at_step(self.step_count)

    def set_group_scale(self, index: int, scale: float):
        self.groups[index]["scale"] = float(scale)

    def step(self):
        lr = self.schedule.lr_at_step(min(self.step_count,
                                          self.schedule.total_steps))
        self.step_count += 1
        return self._apply(lr)

    def _apply(self, lr: float) -> float:
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for group in self.groups:
            glr = lr * group["scale"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * np.square(p.grad)
                if glr == 0.0:
                    continue
                update = (glr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
                p.data = p.data - update.astype(p.data.dtype)
        return lr


def collect_trainable(named_params, frozen_prefixes=()) -> list:
    """Parameters whose names do not start with any frozen prefix; also
    flips requires_grad so frozen weights drop out of the graph."""
    trainable = []
    for name, p in named_params:
        frozen = any(name.startswith(pref) for pref in frozen_prefixes)
        p.requires_grad = not frozen
        if not frozen:
            trainable.append((name, p))
    return trainable
