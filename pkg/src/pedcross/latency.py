"""Per-sample inference latency: model alone (M) and model plus data
preprocessing (M+D).

Each run times one sample end to end with a monotonic clock, splitting at
the preprocess/forward boundary, so M+D >= M holds per run by
construction. Decoded images are staged in memory beforehand; the frame
read counter is asserted flat across the timed region. Reference
preprocessing costs of pose (32.98 ms) and segmentation (157.30 ms)
pipelines appear in the report footer as cited constants only.
"""

from __future__ import annotations

import csv
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import images, kernels
from .autograd import Tensor, no_grad

REFERENCE_DELAYS_MS = {
    "pose_estimation": 32.98,
    "semantic_segmentation": 157.30,
}


@dataclass
class LatencyReport:
    model_ms_mean: float
    model_ms_std: float
    model_ms_median: float
    total_ms_mean: float
    total_ms_std: float
    total_ms_median: float
    n_warmup: int
    n_runs: int
    hardware: str
    params_millions: float | None = None
    variant: str = ""
    per_run_model_ms: list = field(default_factory=list)
    per_run_total_ms: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()
                if not k.startswith("per_run")}

    def write_csv(self, path):
        """Columns mirror the deployment comparison layout: M, M+D, Params."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "M_ms", "M+D_ms", "params_millions"])
            params = "" if self.params_millions is None \
                else f"{self.params_millions:.2f}"
            writer.writerow([self.variant or "model",
                             f"{self.model_ms_mean:.3f}",
                             f"{self.total_ms_mean:.3f}", params])
            writer.writerow([])
            writer.writerow(["# reference preprocessing delays of competing "
                             "pipelines (cited constants, not measured here)"])
            for name, ms in REFERENCE_DELAYS_MS.items():
                writer.writerow([f"# {name}", f"{ms:.2f}"])


def _hardware_note() -> str:
    return (f"{platform.machine()} / {platform.processor() or 'unknown cpu'} "
            f"/ python {platform.python_version()} "
            f"/ kernels={kernels.active_backend()}")


def benchmark_latency(model, samples, stats, n_warmup: int = 5,
                      n_runs: int = 50) -> LatencyReport:
    """Batch-1 latency over `samples` cycled round-robin.

    M covers the three network forwards + fusion on pre-built inputs;
    D covers normalization, the forecaster->overlay handoff, overlay
    rendering, resize, and image normalization.
    """
    if n_runs < 10:
        raise ValueError(f"n_runs must be >= 10 for a stable estimate, "
                         f"got {n_runs}")
    for s in samples:
        if s.first_image is None or s.last_image is None:
            raise ValueError("samples must have images staged in memory")
    model.eval()
    reads_before = images.FRAME_READS["count"]
    model_ms = np.empty(n_runs)
    total_ms = np.empty(n_runs)

    def one_pass(sample):
        t0 = time.perf_counter_ns()
        # --- D: everything between raw sample and network-ready inputs ---
        norm_obs, pred_norm, pred_px = model.branch_inputs(sample, stats)
        tokens = model.sam.build_tokens(norm_obs, pred_norm).astype(np.float32)
        planes = model.vam.prepare(sample.first_image, sample.obs_boxes,
                                   sample.last_image, pred_px)
        t1 = time.perf_counter_ns()
        # --- M: branch forwards + fusion ---
        seq_emb = model.sam.forward_tokens(Tensor(tokens[None]))
        vis_emb = model.vam.projection(model.vam.backbone_features(
            [Tensor(p[None]) for p in planes]))
        logits = model.fusion(seq_emb, vis_emb)
        _ = logits.data
        t2 = time.perf_counter_ns()
        return (t2 - t1) / 1e6, (t2 - t0) / 1e6

    with no_grad():
        for i in range(n_warmup):
            one_pass(samples[i % len(samples)])
        for i in range(n_runs):
            m, md = one_pass(samples[i % len(samples)])
            model_ms[i] = m
            total_ms[i] = md
    if images.FRAME_READS["count"] != reads_before:
        raise RuntimeError("benchmark touched frame files inside the timed "
                           "region; images must be pre-staged")
    from .model import count_parameters

    return LatencyReport(
        model_ms_mean=float(model_ms.mean()),
        model_ms_std=float(model_ms.std()),
        model_ms_median=float(np.median(model_ms)),
        total_ms_mean=float(total_ms.mean()),
        total_ms_std=float(total_ms.std()),
        total_ms_median=float(np.median(total_ms)),
        n_warmup=n_warmup, n_runs=n_runs, hardware=_hardware_note(),
        params_millions=count_parameters(model) / 1e6,
        variant=model.config.variant,
        per_run_model_ms=model_ms.tolist(),
        per_run_total_ms=total_ms.tolist())


# -- kernel backend comparison (compiled extension vs numpy fallback) ------

def benchmark_kernel_backends(channels: int = 64, size: int = 56,
                              batch: int = 4, n_runs: int = 20,
                              seed: int = 0) -> dict:
    """Time the depthwise kernels (5x5 and dilated 7x7, forward + backward)
    on each available backend. Returns {backend: {case: ms}}."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, channels, size, size)).astype(np.float32)
    gy = rng.standard_normal(x.shape).astype(np.float32)
    cases = {"dw5x5": (5, 1, 2), "dw7x7_d3": (7, 3, 9)}
    results = {}
    previous = kernels.active_backend()
    try:
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            results[backend] = {}
            for case, (k, dil, pad) in cases.items():
                w = rng.standard_normal((channels, k, k)).astype(np.float32)
                kernels.dwconv2d_forward(x, w, 1, dil, pad, pad)  # warmup
                t0 = time.perf_counter_ns()
                for _ in range(n_runs):
                    kernels.dwconv2d_forward(x, w, 1, dil, pad, pad)
                t1 = time.perf_counter_ns()
                for _ in range(n_runs):
                    kernels.dwconv2d_backward_x(gy, w, size, size, 1, dil,
                                                pad, pad)
                    kernels.dwconv2d_backward_w(gy, x, k, k, 1, dil, pad, pad)
                t2 = time.perf_counter_ns()
                results[backend][f"{case}_forward_ms"] = (t1 - t0) / 1e6 / n_runs
                results[backend][f"{case}_backward_ms"] = (t2 - t1) / 1e6 / n_runs
    finally:
        kernels.set_backend(previous)
    return results
