"""Visual attention branch: trajectory overlays on scene frames, VAN
backbone(s), and projection to the 40-d fusion embedding.

Dual mode runs one VAN over the first observation frame overlaid with the
15 observed boxes and a second VAN over the last frame overlaid with the
60 predicted boxes. Single mode (small variant / ablations) uses one VAN
on the last frame; which overlays it carries depends on the toggles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import images
from .autograd import Tensor, concat
from .layers import Linear, Module
from .overlay import load_palette, render_overlay
from .van import VanBackbone, VanConfig

EMBED_DIM = 40
OBS_PALETTE_START = 0    # observed boxes color-code timesteps 0..14
PRED_PALETTE_START = 15  # predicted boxes color-code timesteps 15..74


@dataclass
class VisualBranchConfig:
    van: VanConfig
    dual: bool = True
    use_pred: bool = True

    def __post_init__(self):
        if not self.use_pred and self.dual:
            # without predicted overlays the second VAN has no input
            self.dual = False


class VisualAttentionBranch(Module):
    def __init__(self, config: VisualBranchConfig, rng: np.random.Generator,
                 palette: np.ndarray | None = None, dtype=np.float32):
        super().__init__()
        self.config = config
        self.palette = load_palette() if palette is None else palette
        if config.dual:
            self.van_first = VanBackbone(config.van, rng, dtype=dtype)
            self.van_second = VanBackbone(config.van, rng, dtype=dtype)
            feat = 2 * config.van.feature_dim
        else:
            self.van = VanBackbone(config.van, rng, dtype=dtype)
            feat = config.van.feature_dim
        self.projection = Linear(feat, EMBED_DIM, rng, dtype=dtype)

    # -- overlay construction (pure, also used by pixel oracles) --------
    def render_inputs(self, first_image, obs_boxes, last_image, pred_boxes):
        """Returns the list of overlaid uint8 frames the VANs will see."""
        cfg = self.config
        if cfg.dual:
            return [
                render_overlay(first_image, obs_boxes, self.palette,
                               OBS_PALETTE_START),
                render_overlay(last_image, pred_boxes, self.palette,
                               PRED_PALETTE_START),
            ]
        img = render_overlay(last_image, obs_boxes, self.palette,
                             OBS_PALETTE_START)
        if cfg.use_pred:
            img = render_overlay(img, pred_boxes, self.palette,
                                 PRED_PALETTE_START)
        return [img]

    def prepare(self, first_image, obs_boxes, last_image, pred_boxes):
        """Overlay + resize + normalize: list of float32 [3, s, s] planes."""
        size = (self.config.van.input_size, self.config.van.input_size)
        return [images.to_network_input(img, size)
                for img in self.render_inputs(first_image, obs_boxes,
                                              last_image, pred_boxes)]

    # -- network ---------------------------------------------------------
    def backbone_features(self, planes: list) -> Tensor:
        """Stacked network inputs -> concatenated VAN features [B, feat]."""
        if self.config.dual:
            a = self.van_first(planes[0])
            b = self.van_second(planes[1])
            return concat([a, b], axis=1)
        return self.van(planes[0])

    def forward(self, first_image, obs_boxes, last_image, pred_boxes) -> Tensor:
        """Raw scene frames + pixel-space boxes -> embedding [40]."""
        prepared = self.prepare(first_image, obs_boxes, last_image, pred_boxes)
        planes = [Tensor(p[None]) for p in prepared]
        return self.projection(self.backbone_features(planes))[0]
