"""Central-difference gradient verification.

The numeric oracle always runs in float64: parameters are cast up, the
loss closure is re-evaluated around each coordinate, then the originals
are restored. Analytic gradients are taken in whatever precision the
parameters currently hold, so the same harness measures both the 32-bit
and 64-bit accuracy of every backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GradCheckError(RuntimeError):
    pass


@dataclass
class ParamCheck:
    name: str
    rel_error: float
    n_coords: int
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    step: float
    params: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return max((p.rel_error for p in self.params), default=0.0)

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"grad check {status}: max rel err "
                f"{self.max_rel_error:.3e} (tol {self.tol:.1e}, "
                f"{len(self.params)} parameters)")


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, 1e-12)


def grad_check(loss_fn, named_params, tol: float = 1e-6, step: float = 1e-5,
               max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` against central differences.

    loss_fn must rebuild the scalar loss from the parameters' current
    `.data` on every call. `max_coords` caps how many coordinates per
    parameter are probed numerically (all coordinates when None).
    """
    params = list(named_params)
    if rng is None:
        rng = np.random.default_rng(0)

    for _, p in params:
        p.grad = None
    loss = loss_fn()
    value = loss.item()
    if not math.isfinite(value):
        raise GradCheckError(f"loss is not finite ({value}); check aborted")
    loss.backward()
    analytic = {}
    for name, p in params:
        if p.grad is None:
            analytic[name] = np.zeros_like(p.data)
        else:
            analytic[name] = np.array(p.grad, copy=True)
        if not np.all(np.isfinite(analytic[name])):
            raise GradCheckError(f"analytic gradient of {name} is not finite")

    originals = [(p, p.data) for _, p in params]
    for _, p in params:
        p.data = p.data.astype(np.float64)

    report = GradCheckReport(tol=tol, step=step)
    try:
        for name, p in params:
            flat = p.data.reshape(-1)
            n = flat.size
            if max_coords is not None and n > max_coords:
                coords = rng.choice(n, size=max_coords, replace=False)
            else:
                coords = np.arange(n)
            numeric = np.empty(len(coords))
            for j, idx in enumerate(coords):
                saved = flat[idx]
                flat[idx] = saved + step
                up = loss_fn().item()
                flat[idx] = saved - step
                down = loss_fn().item()
                flat[idx] = saved
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise GradCheckError(
                        f"loss non-finite while probing {name}[{idx}]")
                numeric[j] = (up - down) / (2.0 * step)
            a_sel = analytic[name].reshape(-1)[coords].astype(np.float64)
            err = _rel_error(a_sel, numeric)
            report.params.append(
                ParamCheck(name=name, rel_error=err, n_coords=len(coords),
                           passed=err < tol))
    finally:
        for p, data in originals:
            p.data = data
    return report
