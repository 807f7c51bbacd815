"""Full crossing-intention model: forecaster + sequence branch + visual
branch + late fusion, with the six ablation toggles and the manifest that
ties trained stage checkpoints together."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .autograd import Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .forecaster import ForecasterConfig, TrajectoryForecaster
from .fusion import DenseFusion, ModalityAttentionFusion
from .layers import Module
from .overlay import load_palette, palette_digest
from .sampling import NormStats, invert_offset_zscore, offset_and_zscore
from .seq_branch import SeqBranchConfig, SequenceAttentionBranch
from .van import VanConfig
from .visual_branch import VisualAttentionBranch, VisualBranchConfig


class MissingStageError(RuntimeError):
    pass


SCENARIO_TOGGLES = {
    1: "attn_fusion",
    2: "single_van",
    3: "no_type_ids",
    4: "no_speed",
    5: "no_pred_sam",
    6: "no_pred_vam",
}

SCENARIO_NAMES = {
    1: "combine branches with a modality self-attention layer",
    2: "single VAN with combined past+predicted overlays",
    3: "remove type ids in the sequence branch",
    4: "remove vehicle speed from the input modalities",
    5: "remove trajectory prediction from the sequence branch",
    6: "remove trajectory prediction from the visual branch",
}


@dataclass
class AblationToggles:
    attn_fusion: bool = False
    single_van: bool = False
    no_type_ids: bool = False
    no_speed: bool = False
    no_pred_sam: bool = False
    no_pred_vam: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationToggles":
        return cls(**{k: bool(v) for k, v in d.items()})

    @classmethod
    def for_scenario(cls, scenario: int) -> "AblationToggles":
        if scenario not in SCENARIO_TOGGLES:
            raise ValueError(
                f"unknown ablation scenario {scenario}; valid: "
                f"{sorted(SCENARIO_TOGGLES)}")
        return cls(**{SCENARIO_TOGGLES[scenario]: True})


@dataclass
class ModelConfig:
    variant: str = "full"
    toggles: AblationToggles = field(default_factory=AblationToggles)
    van_input_size: int = 224
    init_seed: int = 0

    def __post_init__(self):
        if self.variant not in ("full", "small"):
            raise ValueError(f"variant must be 'full' or 'small', "
                             f"got {self.variant!r}")

    @property
    def n_features(self) -> int:
        return 4 if self.toggles.no_speed else 5

    @property
    def dual_van(self) -> bool:
        if self.variant == "small":
            return False
        return not (self.toggles.single_van or self.toggles.no_pred_vam)

    def forecaster_config(self) -> ForecasterConfig:
        make = ForecasterConfig.full if self.variant == "full" \
            else ForecasterConfig.small
        return make(n_features=self.n_features)

    def seq_config(self) -> SeqBranchConfig:
        make = SeqBranchConfig.full if self.variant == "full" \
            else SeqBranchConfig.small
        return make(n_features=self.n_features,
                    use_type_ids=not self.toggles.no_type_ids,
                    use_pred=not self.toggles.no_pred_sam)

    def van_config(self) -> VanConfig:
        make = VanConfig.b2 if self.variant == "full" else VanConfig.b0
        return make(input_size=self.van_input_size)

    def visual_config(self) -> VisualBranchConfig:
        return VisualBranchConfig(van=self.van_config(), dual=self.dual_van,
                                  use_pred=not self.toggles.no_pred_vam)

    def stage_names(self) -> list:
        stages = ["trajpred", "sam"]
        stages += ["van1", "van2"] if self.dual_van else ["van1"]
        return stages + ["fusion"]

    def to_dict(self) -> dict:
        return {"variant": self.variant, "toggles": self.toggles.to_dict(),
                "van_input_size": self.van_input_size,
                "init_seed": self.init_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(variant=d.get("variant", "full"),
                   toggles=AblationToggles.from_dict(d.get("toggles", {})),
                   van_input_size=int(d.get("van_input_size", 224)),
                   init_seed=int(d.get("init_seed", 0)))


# Stage name -> model parameter prefixes owned by that stage.
def stage_prefixes(config: ModelConfig) -> dict:
    van1 = "vam.van_first." if config.dual_van else "vam.van."
    mapping = {
        "trajpred": ("trajpred.",),
        "sam": ("sam.embed.", "sam.blocks.", "sam.norm."),
        "van1": (van1,),
        "fusion": ("sam.projection.", "vam.projection.", "fusion."),
    }
    if config.dual_van:
        mapping["van2"] = ("vam.van_second.",)
    return mapping


@dataclass
class CrossingPrediction:
    logits: np.ndarray          # [2]
    probability: float          # P(crossing)
    label: int                  # 1 iff probability >= 0.5

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "CrossingPrediction":
        e = np.exp(logits - logits.max())
        prob = float(e[1] / e.sum())
        return cls(logits=np.asarray(logits, dtype=np.float64),
                   probability=prob, label=int(prob >= 0.5))


class CrossingNet(Module):
    def __init__(self, config: ModelConfig,
                 palette: np.ndarray | None = None):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        self.trajpred = TrajectoryForecaster(config.forecaster_config(), rng)
        self.sam = SequenceAttentionBranch(config.seq_config(), rng)
        self.vam = VisualAttentionBranch(config.visual_config(), rng,
                                         palette=palette)
        fusion_cls = ModalityAttentionFusion if config.toggles.attn_fusion \
            else DenseFusion
        self.fusion = fusion_cls(rng)

    # -- sample-space plumbing -------------------------------------------
    def normalized_observation(self, observed: np.ndarray, stats: NormStats):
        """Offset + z-score a raw [15,5] observation; returns the model's
        feature slice and the reference box for inverting predictions."""
        norm, ref = offset_and_zscore(observed, stats)
        return norm[:, :self.config.n_features], ref

    def predicted_boxes_px(self, pred_norm: np.ndarray, stats: NormStats,
                           ref_box: np.ndarray) -> np.ndarray:
        """Undo normalization on the bbox channels of a [60,m] forecast."""
        padded = np.zeros((pred_norm.shape[0], 5))
        padded[:, :pred_norm.shape[1]] = pred_norm
        return invert_offset_zscore(padded, stats, ref_box)[:, :4]

    def branch_inputs(self, sample, stats: NormStats):
        """Everything both branches need: normalized past, normalized
        forecast (one forecaster pass), and the pixel-space boxes."""
        norm_obs, ref = self.normalized_observation(sample.observed, stats)
        needs_pred = self.sam.config.use_pred or self.vam.config.use_pred
        pred_norm = self.trajpred.predict(norm_obs) if needs_pred else None
        pred_px = None
        if self.vam.config.use_pred:
            pred_px = self.predicted_boxes_px(pred_norm, stats, ref)
        return norm_obs, pred_norm, pred_px

    def predict(self, sample, stats: NormStats) -> CrossingPrediction:
        """Run one classification instance (exactly one forecaster pass)."""
        if sample.first_image is None or sample.last_image is None:
            raise ValueError("sample images not loaded; call attach_images")
        norm_obs, pred_norm, pred_px = self.branch_inputs(sample, stats)
        with no_grad():
            seq_emb = self.sam(norm_obs.astype(np.float32),
                               None if pred_norm is None
                               else pred_norm.astype(np.float32))
            vis_emb = self.vam(sample.first_image, sample.obs_boxes,
                               sample.last_image, pred_px)
            logits = self.fusion(seq_emb.reshape(1, -1),
                                 vis_emb.reshape(1, -1))
        return CrossingPrediction.from_logits(logits.data[0])

    def predict_batch(self, samples, stats: NormStats,
                      chunk: int = 16) -> np.ndarray:
        """Vectorized inference; returns P(crossing) per sample."""
        probs = np.empty(len(samples))
        with no_grad():
            for lo in range(0, len(samples), chunk):
                part = samples[lo:lo + chunk]
                seq_es, vis_planes = [], None
                for s in part:
                    norm_obs, pred_norm, pred_px = self.branch_inputs(s, stats)
                    seq_es.append(self.sam.build_tokens(
                        norm_obs, pred_norm).astype(np.float32))
                    planes = self.vam.prepare(s.first_image, s.obs_boxes,
                                              s.last_image, pred_px)
                    if vis_planes is None:
                        vis_planes = [[] for _ in planes]
                    for slot, p in zip(vis_planes, planes):
                        slot.append(p)
                tokens = Tensor(np.stack(seq_es))
                seq_emb = self.sam.forward_tokens(tokens)
                stacked = [Tensor(np.stack(slot)) for slot in vis_planes]
                vis_emb = self.vam.projection(
                    self.vam.backbone_features(stacked))
                logits = self.fusion(seq_emb, vis_emb).data
                e = np.exp(logits - logits.max(axis=1, keepdims=True))
                probs[lo:lo + len(part)] = e[:, 1] / e.sum(axis=1)
        return probs


def count_parameters(module: Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.size for p in module.parameters())


# -- manifest ------------------------------------------------------------

def save_manifest(path, config: ModelConfig, checkpoints: dict,
                  stats: NormStats, alpha: float | None = None,
                  extra: dict | None = None) -> None:
    palette = load_palette()
    doc = {
        "model": config.to_dict(),
        "checkpoints": {k: str(v) for k, v in checkpoints.items()},
        "norm_stats": stats.to_dict(),
        "alpha": alpha,
        "palette_sha256": palette_digest(palette),
    }
    if extra:
        doc.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_model(manifest_path):
    """Build the model described by a manifest and load every stage
    checkpoint. Returns (model, NormStats, manifest dict)."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        doc = json.load(fh)
    config = ModelConfig.from_dict(doc["model"])
    palette = load_palette()
    if doc.get("palette_sha256") not in (None, palette_digest(palette)):
        raise ValueError("palette file does not match the manifest digest")
    model = CrossingNet(config, palette=palette)
    base = manifest_path.parent
    arrays = {}
    for stage in config.stage_names():
        rel = doc["checkpoints"].get(stage)
        path = (base / rel) if rel and not Path(rel).is_absolute() else rel
        if rel is None or not Path(path).exists():
            raise MissingStageError(
                f"manifest is missing the checkpoint for stage {stage!r}")
        stage_arrays, _ = load_checkpoint(path)
        arrays.update(stage_arrays)
    model.load_state_arrays(arrays, strict=True)
    model.eval()
    stats = NormStats.from_dict(doc["norm_stats"])
    return model, stats, doc


def save_stage_checkpoint(path, model: CrossingNet, prefixes,
                          meta: dict | None = None) -> None:
    """Persist the model tensors owned by one training stage."""
    arrays = {name: arr for name, arr in model.state_arrays().items()
              if any(name.startswith(p) for p in prefixes)}
    if not arrays:
        raise ValueError(f"no tensors match prefixes {prefixes}")
    save_checkpoint(path, arrays, meta)
