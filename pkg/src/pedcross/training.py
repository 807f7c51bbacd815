"""Stage-wise training: forecaster pretraining, branch pretraining with
temporary classification heads, then fusion fine-tuning.

Each stage freezes everything it does not own (frozen tensors are checked
bitwise by the tests), attaches a disposable 40->2 head where needed, and
caches the activations of frozen upstream modules so epochs only pay for
the weights actually being trained.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .autograd import Tensor, no_grad
from .forecaster import traj_mse_loss
from .layers import Linear, Module
from .model import (CrossingNet, ModelConfig, save_manifest,
                    save_stage_checkpoint, stage_prefixes)
from .optim import Adam, WarmupLinearSchedule, collect_trainable
from .sampling import (NormStats, attach_images, compute_class_weight,
                       compute_norm_stats, extract_classification_samples,
                       extract_trajectory_samples, offset_and_zscore)
from .synthetic import load_dataset

CLAMP = 1e-7


def weighted_ce_loss(probs: Tensor, labels: np.ndarray, alpha: float) -> Tensor:
    """-(1/N) sum( alpha*y*log(p) + (1-alpha)*(1-y)*log(1-p) )."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    labels = np.asarray(labels, dtype=probs.dtype)
    if probs.shape != labels.shape:
        raise ValueError(
            f"probs shape {probs.shape} != labels shape {labels.shape}")
    from .autograd import clip, log

    p = clip(probs, CLAMP, 1.0 - CLAMP)
    pos = log(p) * Tensor(labels) * alpha
    neg = log(1.0 - p) * Tensor(1.0 - labels) * (1.0 - alpha)
    return -(pos + neg).mean()


@dataclass
class StageSpec:
    """One row of the training schedule."""

    name: str
    peak_lr: float
    epochs: int
    batch_size: int
    loss: str                      # "mse" | "weighted_ce"
    vam_proj_freeze_epochs: int = 0
    max_train_samples: int = 0     # 0 = use everything

    def replace(self, **kw) -> "StageSpec":
        import dataclasses

        return dataclasses.replace(self, **kw)


def default_stages() -> dict:
    return {
        "trajpred": StageSpec("trajpred", 5e-5, 40, 64, "mse"),
        "sam": StageSpec("sam", 5e-6, 60, 16, "weighted_ce"),
        "van1": StageSpec("van1", 5e-5, 15, 16, "weighted_ce"),
        "van2": StageSpec("van2", 5e-5, 15, 16, "weighted_ce"),
        "fusion": StageSpec("fusion", 5e-6, 60, 16, "weighted_ce",
                            vam_proj_freeze_epochs=15),
    }


@dataclass
class EpochLog:
    epoch: int
    split: str
    loss: float
    acc: float | None
    lr: float


@dataclass
class TrainingRunRecord:
    stage: str
    seed: int
    logs: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    checkpoint_sha256: str = ""
    wall_seconds: float = 0.0

    def train_losses(self):
        return [l.loss for l in self.logs if l.split == "train"]

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "split", "loss", "acc", "lr"])
            for log in self.logs:
                acc = "" if log.acc is None else f"{log.acc:.6f}"
                writer.writerow([log.epoch, log.split, f"{log.loss:.8f}",
                                 acc, f"{log.lr:.3e}"])


class TempHead(Module):
    """Disposable classification head (40 then 2 neurons) used only while
    pretraining a branch; never serialized."""

    def __init__(self, d_in: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(d_in, 40, rng)
        self.fc2 = Linear(40, 2, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def _ce_forward(logits: Tensor, labels: np.ndarray, alpha: float):
    probs = F.softmax(logits, axis=-1)[:, 1]
    loss = weighted_ce_loss(probs, labels, alpha)
    acc = float(((probs.data >= 0.5).astype(int) == labels).mean())
    return loss, acc


def _fit(record: TrainingRunRecord, groups, spec: StageSpec, n_train: int,
         train_batch_fn, val_fn, rng: np.random.Generator,
         on_epoch_start=None, buffers=()):
    """Generic epoch loop: shuffled minibatches, Adam with warmup-decay,
    validation-loss best-state selection over the given param groups (and
    any stage-owned buffers, e.g. batch-norm running stats)."""
    if n_train < 1:
        raise ValueError(f"stage {spec.name}: no training samples")
    steps_per_epoch = max(1, (n_train + spec.batch_size - 1) // spec.batch_size)
    schedule = WarmupLinearSchedule(spec.peak_lr,
                                    total_steps=spec.epochs * steps_per_epoch)
    optimizer = Adam(groups, schedule)
    tracked = [p for g in groups for p in g["params"]]
    buffers = list(buffers)
    best_state = None
    for epoch in range(spec.epochs):
        if on_epoch_start is not None:
            on_epoch_start(epoch, optimizer)
        order = rng.permutation(n_train)
        epoch_loss, epoch_acc, n_batches = 0.0, 0.0, 0
        acc = None
        for lo in range(0, n_train, spec.batch_size):
            idx = order[lo:lo + spec.batch_size]
            optimizer.zero_grad()
            loss, acc = train_batch_fn(idx)
            loss.backward()
            lr = optimizer.step()
            record.lr_trace.append(lr)
            epoch_loss += loss.item()
            epoch_acc += 0.0 if acc is None else acc
            n_batches += 1
        record.logs.append(EpochLog(
            epoch, "train", epoch_loss / n_batches,
            (epoch_acc / n_batches) if acc is not None else None,
            optimizer.current_lr))
        val_loss, val_acc = val_fn()
        record.logs.append(EpochLog(epoch, "val", val_loss, val_acc,
                                    optimizer.current_lr))
        if not np.isfinite(val_loss):
            raise RuntimeError(
                f"stage {spec.name}: validation loss became non-finite "
                f"at epoch {epoch}")
        if val_loss < record.best_val_loss:
            record.best_val_loss = val_loss
            record.best_epoch = epoch
            best_state = ([(p, p.data.copy()) for p in tracked],
                          [(b, b.copy()) for b in buffers])
    if best_state is not None:
        for p, data in best_state[0]:
            p.data = data
        for b, data in best_state[1]:
            b[...] = data
    return record


def _normalize_windows(windows, stats: NormStats, n_features: int):
    past = np.empty((len(windows), 15, n_features), dtype=np.float32)
    future = np.empty((len(windows), 60, n_features), dtype=np.float32)
    for i, (p, f, _pid, _start) in enumerate(windows):
        seq = np.concatenate([p, f], axis=0)
        norm, _ = offset_and_zscore(seq, stats)
        past[i] = norm[:15, :n_features]
        future[i] = norm[15:, :n_features]
    return past, future


def _cache_predictions(model: CrossingNet, samples, stats: NormStats,
                       chunk: int = 256):
    """One frozen forecaster sweep: per-sample (norm_obs, pred_norm, ref)."""
    n_feat = model.config.n_features
    norm_obs = np.empty((len(samples), 15, n_feat), dtype=np.float32)
    refs = np.empty((len(samples), 4))
    for i, s in enumerate(samples):
        obs, ref = model.normalized_observation(s.observed, stats)
        norm_obs[i] = obs
        refs[i] = ref
    preds = np.empty((len(samples), 60, n_feat), dtype=np.float32)
    model.trajpred.eval()
    with no_grad():
        for lo in range(0, len(samples), chunk):
            out = model.trajpred(Tensor(norm_obs[lo:lo + chunk]))
            preds[lo:lo + chunk] = out.data
    return norm_obs, preds, refs


def _subsample(rng, spec: StageSpec, arrays_len: int) -> np.ndarray:
    if spec.max_train_samples and arrays_len > spec.max_train_samples:
        return rng.choice(arrays_len, size=spec.max_train_samples,
                          replace=False)
    return np.arange(arrays_len)


class StageRunner:
    """Holds the dataset-side context shared by all training stages."""

    def __init__(self, model: CrossingNet, stats: NormStats, alpha: float,
                 train_samples, val_samples, train_windows, val_windows,
                 seed: int):
        self.model = model
        self.stats = stats
        self.alpha = alpha
        self.train_samples = train_samples
        self.val_samples = val_samples
        self.train_windows = train_windows
        self.val_windows = val_windows
        self.seed = seed

    def _rng(self, stage: str) -> np.random.Generator:
        return np.random.default_rng(
            [self.seed, sum(map(ord, stage)), len(stage)])

    def run(self, spec: StageSpec) -> TrainingRunRecord:
        t0 = time.monotonic()
        record = TrainingRunRecord(stage=spec.name, seed=self.seed)
        runner = {
            "trajpred": self._run_trajpred,
            "sam": self._run_sam,
            "van1": self._run_van,
            "van2": self._run_van,
            "fusion": self._run_fusion,
        }[spec.name]
        self.model.eval()  # stages opt their own submodules into train mode
        runner(spec, record)
        self.model.eval()
        record.wall_seconds = time.monotonic() - t0
        return record

    # -- stage 1: trajectory forecaster --------------------------------
    def _run_trajpred(self, spec: StageSpec, record: TrainingRunRecord):
        model, rng = self.model, self._rng("trajpred")
        n_feat = model.config.n_features
        tr_past, tr_future = _normalize_windows(self.train_windows,
                                                self.stats, n_feat)
        va_past, va_future = _normalize_windows(self.val_windows,
                                                self.stats, n_feat)
        keep = _subsample(rng, spec, len(tr_past))
        tr_past, tr_future = tr_past[keep], tr_future[keep]
        trainable = collect_trainable(model.named_parameters(),
                                      frozen_prefixes=self._frozen("trajpred"))
        model.trajpred.train()

        def train_batch(idx):
            pred = model.trajpred(Tensor(tr_past[idx]))
            return traj_mse_loss(pred, Tensor(tr_future[idx])), None

        def validate():
            with no_grad():
                pred = model.trajpred(Tensor(va_past))
                loss = traj_mse_loss(pred, Tensor(va_future))
            return loss.item(), None

        groups = [{"params": [p for _, p in trainable], "scale": 1.0}]
        _fit(record, groups, spec, len(tr_past), train_batch, validate, rng)

    # -- stage 2: sequence branch encoder --------------------------------
    def _run_sam(self, spec: StageSpec, record: TrainingRunRecord):
        model, rng = self.model, self._rng("sam")
        norm_obs, preds, _refs = _cache_predictions(
            model, self.train_samples, self.stats)
        v_obs, v_preds, _ = _cache_predictions(
            model, self.val_samples, self.stats)
        use_pred = model.sam.config.use_pred
        tokens = np.stack([
            model.sam.build_tokens(norm_obs[i], preds[i] if use_pred else None)
            for i in range(len(norm_obs))]).astype(np.float32)
        v_tokens = np.stack([
            model.sam.build_tokens(v_obs[i], v_preds[i] if use_pred else None)
            for i in range(len(v_obs))]).astype(np.float32)
        labels = np.array([s.label for s in self.train_samples])
        v_labels = np.array([s.label for s in self.val_samples])
        keep = _subsample(rng, spec, len(tokens))
        tokens, labels = tokens[keep], labels[keep]

        head = TempHead(model.sam.config.d_model, rng)
        trainable = collect_trainable(model.named_parameters(),
                                      frozen_prefixes=self._frozen("sam"))
        model.sam.train()

        def train_batch(idx):
            pooled = model.sam.encode_pooled(Tensor(tokens[idx]))
            return _ce_forward(head(pooled), labels[idx], self.alpha)

        def validate():
            with no_grad():
                pooled = model.sam.encode_pooled(Tensor(v_tokens))
                loss, acc = _ce_forward(head(pooled), v_labels, self.alpha)
            return loss.item(), acc

        groups = [{"params": [p for _, p in trainable] + head.parameters(),
                   "scale": 1.0}]
        _fit(record, groups, spec, len(tokens), train_batch, validate, rng)

    # -- stages 3/4: visual backbones ------------------------------------
    def _van_overlays(self, stage: str, samples, preds_px):
        """Overlay image (uint8) seen by this stage's VAN, per sample."""
        vam = self.model.vam
        out = []
        for s, pred_px in zip(samples, preds_px):
            rendered = vam.render_inputs(s.first_image, s.obs_boxes,
                                         s.last_image, pred_px)
            if stage == "van2":
                out.append(rendered[1])
            else:
                out.append(rendered[0])
        return out

    def _run_van(self, spec: StageSpec, record: TrainingRunRecord):
        model, rng = self.model, self._rng(spec.name)
        if spec.name == "van2" and not model.config.dual_van:
            raise ValueError("this variant has a single VAN; there is no "
                             "van2 stage")
        if model.config.dual_van:
            van = model.vam.van_first if spec.name == "van1" \
                else model.vam.van_second
        else:
            van = model.vam.van
        needs_pred = model.vam.config.use_pred
        preds_px = {"train": [None] * len(self.train_samples),
                    "val": [None] * len(self.val_samples)}
        if needs_pred:
            for split, samples in (("train", self.train_samples),
                                   ("val", self.val_samples)):
                _obs, preds, refs = _cache_predictions(model, samples,
                                                       self.stats)
                preds_px[split] = [
                    model.predicted_boxes_px(preds[i], self.stats, refs[i])
                    for i in range(len(samples))]
        overlays = self._van_overlays(spec.name, self.train_samples,
                                      preds_px["train"])
        v_overlays = self._van_overlays(spec.name, self.val_samples,
                                        preds_px["val"])
        labels = np.array([s.label for s in self.train_samples])
        v_labels = np.array([s.label for s in self.val_samples])
        keep = _subsample(rng, spec, len(overlays))
        overlays = [overlays[i] for i in keep]
        labels = labels[keep]

        size = (model.config.van_input_size, model.config.van_input_size)
        from .images import to_network_input

        def planes(imgs):
            return Tensor(np.stack([to_network_input(im, size)
                                    for im in imgs]))

        head = TempHead(van.feature_dim, rng)
        trainable = collect_trainable(
            model.named_parameters(),
            frozen_prefixes=self._frozen(spec.name))
        van.train()
        stage_buffers = [b for _, b in van.named_buffers()]

        def train_batch(idx):
            feats = van(planes([overlays[i] for i in idx]))
            return _ce_forward(head(feats), labels[idx], self.alpha)

        def validate():
            van.eval()
            losses, accs, n = 0.0, 0.0, 0
            with no_grad():
                for lo in range(0, len(v_overlays), 32):
                    part = v_overlays[lo:lo + 32]
                    feats = van(planes(part))
                    loss, acc = _ce_forward(head(feats),
                                            v_labels[lo:lo + len(part)],
                                            self.alpha)
                    losses += loss.item() * len(part)
                    accs += acc * len(part)
                    n += len(part)
            van.train()
            return losses / n, accs / n

        groups = [{"params": [p for _, p in trainable] + head.parameters(),
                   "scale": 1.0}]
        _fit(record, groups, spec, len(overlays), train_batch, validate, rng,
             buffers=stage_buffers)
        van.eval()

    # -- stage 5: fusion ---------------------------------------------------
    def _cache_branch_features(self, samples):
        model = self.model
        norm_obs, preds, refs = _cache_predictions(model, samples, self.stats)
        use_pred = model.sam.config.use_pred
        tokens = np.stack([
            model.sam.build_tokens(norm_obs[i], preds[i] if use_pred else None)
            for i in range(len(samples))]).astype(np.float32)
        pooled = np.empty((len(samples), model.sam.config.d_model),
                          dtype=np.float32)
        feat_dim = (2 if model.config.dual_van else 1) * \
            model.vam.config.van.feature_dim
        vis_feats = np.empty((len(samples), feat_dim), dtype=np.float32)
        size = (model.config.van_input_size, model.config.van_input_size)
        from .images import to_network_input

        with no_grad():
            for lo in range(0, len(samples), 32):
                part = samples[lo:lo + 32]
                pooled[lo:lo + len(part)] = model.sam.encode_pooled(
                    Tensor(tokens[lo:lo + len(part)])).data
                slots = None
                for j, s in enumerate(part):
                    pred_px = None
                    if model.vam.config.use_pred:
                        pred_px = model.predicted_boxes_px(
                            preds[lo + j], self.stats, refs[lo + j])
                    prepared = model.vam.prepare(s.first_image, s.obs_boxes,
                                                 s.last_image, pred_px)
                    if slots is None:
                        slots = [[] for _ in prepared]
                    for slot, p in zip(slots, prepared):
                        slot.append(p)
                stacked = [Tensor(np.stack(slot)) for slot in slots]
                vis_feats[lo:lo + len(part)] = \
                    model.vam.backbone_features(stacked).data
        return pooled, vis_feats

    def _run_fusion(self, spec: StageSpec, record: TrainingRunRecord):
        model, rng = self.model, self._rng("fusion")
        pooled, vis_feats = self._cache_branch_features(self.train_samples)
        v_pooled, v_vis = self._cache_branch_features(self.val_samples)
        labels = np.array([s.label for s in self.train_samples])
        v_labels = np.array([s.label for s in self.val_samples])

        trainable = collect_trainable(model.named_parameters(),
                                      frozen_prefixes=self._frozen("fusion"))
        main = [p for name, p in trainable
                if not name.startswith("vam.projection.")]
        vam_proj = [p for name, p in trainable
                    if name.startswith("vam.projection.")]
        groups = [{"params": main, "scale": 1.0},
                  {"params": vam_proj, "scale": 0.0
                   if spec.vam_proj_freeze_epochs > 0 else 1.0}]

        def on_epoch_start(epoch, optimizer):
            if epoch == spec.vam_proj_freeze_epochs:
                optimizer.set_group_scale(1, 1.0)

        def train_batch(idx):
            seq_emb = model.sam.projection(Tensor(pooled[idx]))
            vis_emb = model.vam.projection(Tensor(vis_feats[idx]))
            return _ce_forward(model.fusion(seq_emb, vis_emb), labels[idx],
                               self.alpha)

        def validate():
            with no_grad():
                seq_emb = model.sam.projection(Tensor(v_pooled))
                vis_emb = model.vam.projection(Tensor(v_vis))
                loss, acc = _ce_forward(model.fusion(seq_emb, vis_emb),
                                        v_labels, self.alpha)
            return loss.item(), acc

        _fit(record, groups, spec, len(pooled), train_batch, validate, rng,
             on_epoch_start=on_epoch_start)

    def _frozen(self, stage: str) -> tuple:
        """Prefixes of every parameter NOT owned by `stage`."""
        prefix_map = stage_prefixes(self.model.config)
        owned = prefix_map[stage]
        frozen = []
        for other, prefixes in prefix_map.items():
            if other != stage:
                frozen.extend(prefixes)
        return tuple(p for p in frozen if p not in owned)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def train_all(config: ModelConfig, data_dir, out_dir, seed: int,
              stage_specs: dict | None = None, overlap: float = 0.6,
              stride: int = 5, progress=None) -> Path:
    """Run every stage in order and write checkpoints, logs, and the model
    manifest under `out_dir`. Returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = default_stages()
    if stage_specs:
        specs.update(stage_specs)

    trackset, meta = load_dataset(data_dir)
    stride = meta.get("stride", stride)
    train_windows = extract_trajectory_samples(trackset.split("train"),
                                               overlap=overlap)
    val_windows = extract_trajectory_samples(trackset.split("val"),
                                             overlap=overlap)
    if not train_windows or not val_windows:
        raise ValueError("dataset too small: no trajectory windows in the "
                         "train or val split")
    stats = compute_norm_stats(train_windows)
    extraction = extract_classification_samples(trackset, stride=stride)
    samples = {name: [s for s in extraction.samples if s.split == name]
               for name in ("train", "val", "test")}
    frames_dir = Path(data_dir) / "frames"
    fmt = meta.get("image_format", "ppm")
    attach_images(samples["train"] + samples["val"], frames_dir, fmt)
    alpha = compute_class_weight([s.label for s in samples["train"]])

    model = CrossingNet(config)
    runner = StageRunner(model, stats, alpha, samples["train"],
                         samples["val"], train_windows, val_windows, seed)
    checkpoints = {}
    records = []
    prefix_map = stage_prefixes(config)
    for stage in config.stage_names():
        if progress:
            progress(f"stage {stage} ...")
        record = runner.run(specs[stage])
        ckpt_path = out_dir / "checkpoints" / f"{stage}.ckpt"
        save_stage_checkpoint(ckpt_path, model, prefix_map[stage],
                              meta={"stage": stage, "seed": seed})
        record.checkpoint_sha256 = _sha256_file(ckpt_path)
        record.write_csv(out_dir / "logs" / f"{stage}.csv")
        checkpoints[stage] = Path("checkpoints") / f"{stage}.ckpt"
        records.append(record)
        if progress:
            progress(f"stage {stage} done in {record.wall_seconds:.1f}s "
                     f"(best val loss {record.best_val_loss:.4f})")

    manifest_path = out_dir / "model_manifest.json"
    save_manifest(manifest_path, config, checkpoints, stats, alpha,
                  extra={"seed": seed, "data_dir": str(data_dir),
                         "stride": stride, "overlap": overlap})
    return manifest_path
