"""Command-line entry point.

Subcommands: gen-data, train, train-stage, eval, bench, ablate, predict,
grad-check, count-params. Heavy imports happen inside handlers so
--deterministic can pin BLAS/OpenMP to one thread before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

STAGES = ("trajpred", "sam", "van1", "van2", "fusion")


def _pin_single_thread():
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = "1"


def _write_run_manifest(out_dir, args, extra=None):
    """Every run records its resolved configuration and seed."""
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {k: (str(v) if isinstance(v, Path) else v)
           for k, v in vars(args).items() if k != "func"}
    doc["argv"] = sys.argv[1:]
    doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    if extra:
        doc.update(extra)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)


def _load_cfg(args, extra_defaults=None):
    from .config import load_config_file, merge

    file_cfg = load_config_file(args.config) if args.config else {}
    return merge(extra_defaults or {}, file_cfg, {})


def _progress(msg):
    print(msg, flush=True)


# -- handlers --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .synthetic import SyntheticConfig, generate_dataset

    cfg_map = _load_cfg(args)
    base = SyntheticConfig.from_dict(
        {k: json.loads(v) if v.startswith("[") else v
         for k, v in cfg_map.items()}) if cfg_map else SyntheticConfig()
    overrides = {}
    if args.tracks is not None:
        overrides["n_tracks"] = args.tracks
    if args.image_size is not None:
        overrides["image_height"] = args.image_size
        overrides["image_width"] = args.image_size
    if args.balance is not None:
        overrides["label_balance"] = args.balance
    config = SyntheticConfig.from_dict({**base.to_dict(), **overrides})
    trackset = generate_dataset(config, args.seed, args.out,
                                stride=args.stride,
                                image_format=args.image_format)
    _write_run_manifest(args.out, args,
                        {"n_tracks": len(trackset),
                         "config": config.to_dict()})
    print(f"wrote {len(trackset)} tracks to {args.out}")
    return 0


def _model_config(args, cfg_map):
    from .config import get_int
    from .model import AblationToggles, ModelConfig

    toggles = AblationToggles.for_scenario(args.scenario) \
        if getattr(args, "scenario", None) else AblationToggles()
    return ModelConfig(
        variant=args.variant,
        toggles=toggles,
        van_input_size=get_int(cfg_map, "van_input_size", 224),
        init_seed=args.seed)


def cmd_train(args) -> int:
    from .config import DESK_SCALE, get_float, get_int, \
        stage_specs_from_config
    from .training import train_all

    defaults = dict(DESK_SCALE) if args.desk_scale else {}
    cfg_map = _load_cfg(args, defaults)
    config = _model_config(args, cfg_map)
    specs = stage_specs_from_config(cfg_map)
    manifest = train_all(config, args.data, args.out, args.seed,
                         stage_specs=specs,
                         overlap=get_float(cfg_map, "overlap", 0.6),
                         stride=get_int(cfg_map, "stride", 5),
                         progress=_progress)
    _write_run_manifest(args.out, args, {"model": config.to_dict(),
                                         "manifest": str(manifest)})
    print(f"manifest: {manifest}")
    return 0


def cmd_train_stage(args) -> int:
    from .train_stage_cli import run_single_stage

    manifest = run_single_stage(args, _load_cfg, _progress)
    _write_run_manifest(args.out, args, {"stage": args.stage,
                                         "state": str(manifest)})
    return 0


def cmd_eval(args) -> int:
    from .ablation import evaluate_manifest

    report = evaluate_manifest(args.manifest, args.data, split=args.split)
    report.save_json(Path(args.out) / f"metrics_{args.split}.json")
    _write_run_manifest(args.out, args, {"metrics": report.to_dict()})
    auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"split={args.split} n={report.n_samples} "
          f"acc={report.accuracy:.4f} auc={auc} f1={report.f1:.4f} "
          f"precision={report.precision:.4f} recall={report.recall:.4f}")
    return 0


def cmd_bench(args) -> int:
    import numpy as np

    from .latency import benchmark_kernel_backends, benchmark_latency

    out = Path(args.out)
    if args.compare_backends:
        table = benchmark_kernel_backends(n_runs=max(10, args.runs // 5))
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "kernel_backends.json", "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
        for backend, cases in table.items():
            for case, ms in cases.items():
                print(f"{backend:9s} {case:24s} {ms:8.3f} ms")
        _write_run_manifest(args.out, args, {"kernel_backends": table})
        return 0

    model, stats, samples = _bench_inputs(args)
    report = benchmark_latency(model, samples, stats,
                               n_warmup=args.warmup, n_runs=args.runs)
    report.write_csv(out / "latency.csv")
    with open(out / "latency.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    _write_run_manifest(args.out, args, {"latency": report.to_dict()})
    print(f"M   = {report.model_ms_mean:8.2f} ms "
          f"(median {report.model_ms_median:.2f}, std {report.model_ms_std:.2f})")
    print(f"M+D = {report.total_ms_mean:8.2f} ms "
          f"(median {report.total_ms_median:.2f}, std {report.total_ms_std:.2f})")
    print(f"params = {report.params_millions:.2f}M   [{report.hardware}]")
    return 0


def _bench_inputs(args):
    """Either a trained manifest + real samples, or a random-weight model on
    synthetic samples (latency does not depend on weight values)."""
    import numpy as np

    from .model import CrossingNet, load_model
    from .sampling import NormStats, attach_images, \
        extract_classification_samples
    from .synthetic import SyntheticConfig, generate_tracks, frame_image
    from .config import get_int

    cfg_map = _load_cfg(args)
    if args.manifest:
        model, stats, _doc = load_model(args.manifest)
        if not args.data:
            raise ValueError("bench with --manifest also needs --data")
        from .synthetic import load_dataset

        trackset, meta = load_dataset(args.data)
        samples = [s for s in extract_classification_samples(
            trackset, stride=meta.get("stride", 5)).samples
            if s.split == "test"][:32]
        attach_images(samples, Path(args.data) / "frames",
                      meta.get("image_format", "ppm"))
        return model, stats, samples
    config = _model_config(args, cfg_map)
    model = CrossingNet(config)
    syn = SyntheticConfig(n_tracks=6,
                          image_height=get_int(cfg_map, "bench_image_size", 64),
                          image_width=get_int(cfg_map, "bench_image_size", 64))
    trackset = generate_tracks(syn, args.seed)
    samples = extract_classification_samples(trackset, stride=10).samples[:8]
    for s in samples:
        track = trackset.by_id(s.pedestrian_id)
        s.first_image = frame_image(syn, args.seed, track, s.first_frame_no)
        s.last_image = frame_image(syn, args.seed, track, s.last_frame_no)
    stats = NormStats(mean=np.zeros(5), std=np.ones(5))
    return model, stats, samples


def cmd_ablate(args) -> int:
    from .ablation import run_ablation
    from .config import DESK_SCALE, stage_specs_from_config

    defaults = dict(DESK_SCALE) if args.desk_scale else {}
    cfg_map = _load_cfg(args, defaults)
    specs = stage_specs_from_config(cfg_map)
    report, base_report = run_ablation(args.scenario, args.data, args.base,
                                       args.out, args.seed,
                                       stage_specs=specs, progress=_progress)
    _write_run_manifest(args.out, args,
                        {"scenario": args.scenario,
                         "metrics": report.to_dict(),
                         "base_metrics": base_report.to_dict()})
    print(f"base     acc={base_report.accuracy:.4f} f1={base_report.f1:.4f}")
    print(f"scenario acc={report.accuracy:.4f} f1={report.f1:.4f}")
    return 0


def cmd_predict(args) -> int:
    import numpy as np

    from .images import read_frame
    from .model import load_model
    from .sampling import Sample

    model, stats, _doc = load_model(args.manifest)
    with open(args.sample) as fh:
        doc = json.load(fh)
    observed = np.asarray(doc["observed"], dtype=np.float64)
    if observed.shape != (15, 5):
        raise ValueError(f"sample 'observed' must be 15x5, "
                         f"got {observed.shape}")
    base = Path(args.sample).parent
    def _img(key):
        p = Path(doc[key])
        return read_frame(p if p.is_absolute() else base / p)
    sample = Sample(
        pedestrian_id=doc.get("pedestrian_id", "sample"), split="test",
        observed=observed, label=int(doc.get("label", 0)),
        tte_frames=int(doc.get("tte_frames", 30)),
        first_frame_no=int(doc.get("first_frame_no", 0)),
        last_frame_no=int(doc.get("last_frame_no", 15)),
        first_image=_img("first_frame_image"),
        last_image=_img("last_frame_image"))
    pred = model.predict(sample, stats)
    print(f"probability={pred.probability:.6f} label={pred.label}")
    if args.out:
        _write_run_manifest(args.out, args,
                            {"probability": pred.probability,
                             "label": pred.label})
    return 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_operator_suite

    failures = run_operator_suite(n_seeds=args.seeds, verbose=True)
    if args.out:
        _write_run_manifest(args.out, args, {"failures": failures})
    return 0 if failures == 0 else 1


def cmd_count_params(args) -> int:
    from .model import CrossingNet, count_parameters

    cfg_map = _load_cfg(args)
    config = _model_config(args, cfg_map)
    model = CrossingNet(config)
    total = count_parameters(model)
    for name, sub in (("trajpred", model.trajpred), ("sam", model.sam),
                      ("vam", model.vam), ("fusion", model.fusion)):
        print(f"{name:10s} {count_parameters(sub):>12,}")
    print(f"{'total':10s} {total:>12,}")
    if args.out:
        _write_run_manifest(args.out, args, {"total_params": total})
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pedcross",
        description="Pedestrian crossing-intention prediction: synthetic "
                    "data, staged training, evaluation, and latency "
                    "benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, needs_variant=False):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--out", required=out_required,
                       help="output directory (run manifest, artifacts)")
        p.add_argument("--deterministic", action="store_true",
                       help="pin BLAS/OpenMP to one thread for bitwise "
                            "reproducibility")
        if needs_variant:
            p.add_argument("--variant", choices=("full", "small"),
                           default="small", help="model size variant")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--tracks", type=int, help="number of pedestrian tracks")
    p.add_argument("--image-size", type=int,
                   help="square frame size in pixels")
    p.add_argument("--balance", type=float,
                   help="positive-class fraction, in (0,1)")
    p.add_argument("--stride", type=int, default=5,
                   help="sample stride; frames are rendered for samples at "
                        "this stride")
    p.add_argument("--image-format", choices=("ppm", "png"), default="ppm")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the full staged training pipeline")
    common(p, needs_variant=True)
    p.add_argument("--data", required=True, help="generated dataset dir")
    p.add_argument("--desk-scale", action="store_true",
                   help="use the reduced desk-scale epoch schedule")
    p.add_argument("--scenario", type=int, choices=range(1, 7),
                   help="train an ablation architecture directly")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-stage", help="run one training stage")
    common(p, needs_variant=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stage", required=True, choices=STAGES)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--scenario", type=int, choices=range(1, 7))
    p.set_defaults(func=cmd_train_stage)

    p = sub.add_parser("eval", help="evaluate a trained model on a split")
    common(p)
    p.add_argument("--manifest", required=True, help="model manifest path")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"),
                   default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency benchmark (batch size 1)")
    common(p, needs_variant=True)
    p.add_argument("--manifest", help="trained model manifest (otherwise "
                                      "random weights are timed)")
    p.add_argument("--data", help="dataset dir for real samples")
    p.add_argument("--runs", type=int, default=50,
                   help="timed runs (>= 10)")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--compare-backends", action="store_true",
                   help="benchmark compiled vs numpy convolution kernels "
                        "instead of the model")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="retrain + evaluate one ablation "
                                      "scenario against a base run")
    common(p)
    p.add_argument("--scenario", type=int, required=True,
                   choices=range(1, 7))
    p.add_argument("--data", required=True)
    p.add_argument("--base", required=True,
                   help="directory of the completed base training run")
    p.add_argument("--desk-scale", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="classify one sample JSON")
    common(p, out_required=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample", required=True,
                   help="sample JSON: observed 15x5, frame image paths")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grad-check", help="finite-difference operator and "
                                          "block gradient suite")
    common(p, out_required=False)
    p.add_argument("--seeds", type=int, default=3,
                   help="random seeds per check")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("count-params", help="print trainable parameter "
                                            "counts")
    common(p, out_required=False, needs_variant=True)
    p.add_argument("--scenario", type=int, choices=range(1, 7))
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if "--deterministic" in argv:
        _pin_single_thread()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # structured failure -> exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
