"""Single-stage training for the `train-stage` subcommand.

Progress lives in <out>/training_state.json; each stage requires every
earlier stage in the variant's order to be completed first and errors
with the missing stage name otherwise. Finishing the last stage writes
the model manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import get_float, get_int, stage_specs_from_config
from .model import CrossingNet, save_manifest, stage_prefixes
from .sampling import (NormStats, attach_images, compute_class_weight,
                       compute_norm_stats, extract_classification_samples,
                       extract_trajectory_samples)
from .synthetic import load_dataset
from .training import StageRunner, save_stage_checkpoint

STATE_FILE = "training_state.json"


def _load_state(out_dir: Path) -> dict | None:
    path = out_dir / STATE_FILE
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def _save_state(out_dir: Path, state: dict) -> None:
    with open(out_dir / STATE_FILE, "w") as fh:
        json.dump(state, fh, indent=2, sort_keys=True)


def run_single_stage(args, load_cfg, progress) -> Path:
    from .checkpoint import load_checkpoint
    from .config import DESK_SCALE

    defaults = dict(DESK_SCALE) if args.desk_scale else {}
    cfg_map = load_cfg(args, defaults)
    specs = stage_specs_from_config(cfg_map)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    from .cli import _model_config

    config = _model_config(args, cfg_map)
    order = config.stage_names()
    if args.stage not in order:
        raise ValueError(f"stage {args.stage!r} does not exist for this "
                         f"variant (order: {' -> '.join(order)})")

    state = _load_state(out_dir)
    if state is None:
        if args.stage != order[0]:
            raise RuntimeError(
                f"stage {args.stage!r} requires completed stage "
                f"{order[0]!r} first (stage order: {' -> '.join(order)})")
        state = {"model": config.to_dict(), "completed": [],
                 "seed": args.seed,
                 "overlap": get_float(cfg_map, "overlap", 0.6)}
    completed = list(state.get("completed", []))
    for prerequisite in order[:order.index(args.stage)]:
        if prerequisite not in completed:
            raise RuntimeError(
                f"stage {args.stage!r} requires completed stage "
                f"{prerequisite!r} first (stage order: "
                f"{' -> '.join(order)})")

    trackset, meta = load_dataset(args.data)
    stride = meta.get("stride", 5)
    overlap = state.get("overlap", 0.6)
    train_windows = extract_trajectory_samples(trackset.split("train"),
                                               overlap=overlap)
    val_windows = extract_trajectory_samples(trackset.split("val"),
                                             overlap=overlap)
    if "norm_stats" in state:
        stats = NormStats.from_dict(state["norm_stats"])
    else:
        stats = compute_norm_stats(train_windows)
        state["norm_stats"] = stats.to_dict()
    extraction = extract_classification_samples(trackset, stride=stride)
    samples = {name: [s for s in extraction.samples if s.split == name]
               for name in ("train", "val", "test")}
    attach_images(samples["train"] + samples["val"],
                  Path(args.data) / "frames", meta.get("image_format", "ppm"))
    if "alpha" in state:
        alpha = state["alpha"]
    else:
        alpha = compute_class_weight([s.label for s in samples["train"]])
        state["alpha"] = alpha

    model = CrossingNet(config)
    prefix_map = stage_prefixes(config)
    ckpt_dir = out_dir / "checkpoints"
    for stage in completed:
        arrays, _meta = load_checkpoint(ckpt_dir / f"{stage}.ckpt")
        model.load_state_arrays(arrays, strict=False)

    runner = StageRunner(model, stats, alpha, samples["train"],
                         samples["val"], train_windows, val_windows,
                         args.seed)
    if progress:
        progress(f"stage {args.stage} ...")
    record = runner.run(specs[args.stage])
    save_stage_checkpoint(ckpt_dir / f"{args.stage}.ckpt", model,
                          prefix_map[args.stage],
                          meta={"stage": args.stage, "seed": args.seed})
    record.write_csv(out_dir / "logs" / f"{args.stage}.csv")
    if progress:
        progress(f"stage {args.stage} done in {record.wall_seconds:.1f}s "
                 f"(best val loss {record.best_val_loss:.4f})")
    if args.stage not in completed:
        completed.append(args.stage)
    state["completed"] = completed
    _save_state(out_dir, state)

    if all(stage in completed for stage in order):
        manifest = out_dir / "model_manifest.json"
        save_manifest(manifest, config,
                      {s: Path("checkpoints") / f"{s}.ckpt" for s in order},
                      stats, alpha,
                      extra={"seed": args.seed, "stride": stride,
                             "overlap": overlap})
        if progress:
            progress(f"all stages complete; manifest: {manifest}")
        return manifest
    return out_dir / STATE_FILE
