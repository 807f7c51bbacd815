"""Ablation runner: retrain the stages a scenario touches, reuse the rest
from the base run, and evaluate side by side."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import MetricsReport, compute_metrics
from .model import (SCENARIO_NAMES, SCENARIO_TOGGLES, AblationToggles,
                    CrossingNet, ModelConfig, load_model)
from .sampling import attach_images, extract_classification_samples
from .synthetic import load_dataset

# Stages whose weights a scenario invalidates (everything downstream of the
# architectural change). Unlisted stages reuse the base checkpoints.
SCENARIO_RETRAIN = {
    1: ("fusion",),
    2: ("van1", "fusion"),
    3: ("sam", "fusion"),
    4: ("trajpred", "sam", "van1", "van2", "fusion"),
    5: ("sam", "fusion"),
    6: ("van1", "fusion"),
}


def scenario_config(base: ModelConfig, scenario: int) -> ModelConfig:
    if scenario not in SCENARIO_TOGGLES:
        raise ValueError(f"unknown ablation scenario {scenario}; valid: "
                         f"{sorted(SCENARIO_TOGGLES)}")
    return ModelConfig(variant=base.variant,
                       toggles=AblationToggles.for_scenario(scenario),
                       van_input_size=base.van_input_size,
                       init_seed=base.init_seed)


def evaluate_manifest(manifest_path, data_dir, split: str = "test") -> MetricsReport:
    model, stats, _doc = load_model(manifest_path)
    trackset, meta = load_dataset(data_dir)
    extraction = extract_classification_samples(
        trackset, stride=meta.get("stride", 5))
    samples = [s for s in extraction.samples if s.split == split]
    if not samples:
        raise ValueError(f"no samples in split {split!r}")
    attach_images(samples, Path(data_dir) / "frames",
                  meta.get("image_format", "ppm"))
    probs = model.predict_batch(samples, stats)
    labels = np.array([s.label for s in samples])
    return compute_metrics(probs, labels)


def run_ablation(scenario: int, data_dir, base_out, out_dir, seed: int,
                 stage_specs: dict | None = None, progress=None):
    """Train + evaluate one scenario against the base model.

    `base_out` must hold a completed base run (model_manifest.json); its
    checkpoints seed the stages this scenario does not retrain.
    """
    from .checkpoint import load_checkpoint
    from .model import save_manifest, stage_prefixes
    from .training import StageRunner, default_stages, train_all

    base_out = Path(base_out)
    out_dir = Path(out_dir)
    base_manifest = base_out / "model_manifest.json"
    if not base_manifest.exists():
        raise FileNotFoundError(f"base run manifest not found: "
                                f"{base_manifest}")
    with open(base_manifest) as fh:
        base_doc = json.load(fh)
    base_config = ModelConfig.from_dict(base_doc["model"])
    config = scenario_config(base_config, scenario)

    retrain = [s for s in SCENARIO_RETRAIN[scenario]
               if s in config.stage_names()]
    reuse = [s for s in config.stage_names() if s not in retrain]

    # Start from the scenario architecture, pull reusable stage weights
    # from the base checkpoints.
    from .sampling import compute_class_weight, compute_norm_stats, \
        extract_trajectory_samples
    from .training import _sha256_file, save_stage_checkpoint

    trackset, meta = load_dataset(data_dir)
    stride = meta.get("stride", 5)
    overlap = base_doc.get("overlap", 0.6)
    train_windows = extract_trajectory_samples(trackset.split("train"),
                                               overlap=overlap)
    val_windows = extract_trajectory_samples(trackset.split("val"),
                                             overlap=overlap)
    from .sampling import NormStats

    stats = NormStats.from_dict(base_doc["norm_stats"])
    extraction = extract_classification_samples(trackset, stride=stride)
    samples = {name: [s for s in extraction.samples if s.split == name]
               for name in ("train", "val", "test")}
    attach_images(samples["train"] + samples["val"],
                  Path(data_dir) / "frames", meta.get("image_format", "ppm"))
    alpha = base_doc.get("alpha") or compute_class_weight(
        [s.label for s in samples["train"]])

    model = CrossingNet(config)
    prefix_map = stage_prefixes(config)
    base_prefixes = stage_prefixes(base_config)
    ckpt_dir = out_dir / "checkpoints"
    checkpoints = {}
    for stage in reuse:
        base_rel = base_doc["checkpoints"].get(stage)
        if base_rel is None:
            raise FileNotFoundError(f"base run has no checkpoint for "
                                    f"stage {stage}")
        arrays, _ = load_checkpoint(base_out / base_rel)
        model.load_state_arrays(arrays, strict=False)
        save_stage_checkpoint(ckpt_dir / f"{stage}.ckpt", model,
                              prefix_map[stage],
                              meta={"stage": stage, "reused_from":
                                    str(base_out / base_rel)})
        checkpoints[stage] = Path("checkpoints") / f"{stage}.ckpt"

    specs = default_stages()
    if stage_specs:
        specs.update(stage_specs)
    runner = StageRunner(model, stats, alpha, samples["train"],
                         samples["val"], train_windows, val_windows, seed)
    for stage in config.stage_names():
        if stage not in retrain:
            continue
        if progress:
            progress(f"scenario {scenario}: retraining stage {stage}")
        record = runner.run(specs[stage])
        save_stage_checkpoint(ckpt_dir / f"{stage}.ckpt", model,
                              prefix_map[stage],
                              meta={"stage": stage, "scenario": scenario})
        record.write_csv(out_dir / "logs" / f"{stage}.csv")
        checkpoints[stage] = Path("checkpoints") / f"{stage}.ckpt"

    manifest_path = out_dir / "model_manifest.json"
    save_manifest(manifest_path, config, checkpoints, stats, alpha,
                  extra={"seed": seed, "scenario": scenario,
                         "scenario_name": SCENARIO_NAMES[scenario],
                         "stride": stride, "overlap": overlap})

    report = evaluate_manifest(manifest_path, data_dir)
    base_report = evaluate_manifest(base_manifest, data_dir)
    write_comparison_csv(out_dir / "ablation_comparison.csv",
                         {"base": base_report,
                          f"scenario {scenario}": report},
                         notes={f"scenario {scenario}":
                                SCENARIO_NAMES[scenario]})
    return report, base_report


def write_comparison_csv(path, reports: dict, notes: dict | None = None):
    """Rows = configurations, columns = Acc/AUC/F1/P/R."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "accuracy", "auc", "f1", "precision",
                         "recall", "description"])
        for name, report in reports.items():
            note = (notes or {}).get(name, "")
            writer.writerow([name] + report.row() + [note])
