"""Synthetic street scenes with known crossing dynamics.

Pedestrians move with piecewise-constant velocity plus Gaussian jitter
over a textured background with a horizontal road band. A track is
positive iff its true trajectory enters the road band; negatives walk
parallel to (or away from) the band and provably stay out of it for the
whole track plus a 60-frame extrapolation. Everything is reproducible
from (config, seed): track i draws from its own seeded substream, so the
dataset is byte-identical across runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import images
from .sampling import extract_classification_samples
from .tracks import Track, TrackSet, save_tracks

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SyntheticConfig:
    n_tracks: int = 100
    image_height: int = 64
    image_width: int = 64
    track_len_min: int = 96
    track_len_max: int = 128
    road_band: tuple = (0.60, 0.85)     # fractions of image height
    ped_width: tuple = (5.0, 8.0)       # pixels
    ped_aspect: tuple = (1.5, 2.0)      # height / width
    walk_speed: tuple = (0.25, 0.90)    # px / frame along-road speed
    jitter: float = 0.05                # dynamics noise, px / frame
    box_noise: float = 0.5              # iid annotation noise on each coord
    ego_speed_init: tuple = (10.0, 40.0)   # km/h
    ego_accel_std: float = 0.25
    ego_speed_range: tuple = (0.0, 60.0)
    label_balance: float = 0.5
    split_fracs: tuple = (0.7, 0.1, 0.2)
    event_min: int = 48                 # earliest admissible crossing frame
    neg_approach_frac: float = 0.4      # negatives heading for the band
    neg_away_frac: float = 0.2          # negatives walking away from it

    def validate(self):
        lo, hi = self.road_band
        if not (0.0 < lo < hi <= 1.0):
            raise ValueError(f"road band fractions {self.road_band} must "
                             f"satisfy 0 < top < bottom <= 1")
        if self.band_top_px() < 12 or self.band_top_px() >= self.image_height:
            raise ValueError(
                f"road band (top row {self.band_top_px()}px) leaves no "
                f"sidewalk inside a {self.image_height}px-high image")
        if abs(sum(self.split_fracs) - 1.0) > 1e-6:
            raise ValueError("split fractions must sum to 1")
        if not 0.0 < self.label_balance < 1.0:
            raise ValueError("label balance must lie in (0, 1)")

    def band_top_px(self) -> int:
        return int(round(self.road_band[0] * self.image_height))

    def band_bottom_px(self) -> int:
        return int(round(self.road_band[1] * self.image_height))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        kwargs = {f.name: d[f.name] for f in dataclasses.fields(cls)
                  if f.name in d}
        for key in ("road_band", "ped_width", "ped_aspect", "walk_speed",
                    "ego_speed_init", "ego_speed_range", "split_fracs"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _track_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def _simulate_ego(rng, cfg, n):
    v = np.empty(n)
    v[0] = rng.uniform(*cfg.ego_speed_init)
    lo, hi = cfg.ego_speed_range
    for t in range(1, n):
        v[t] = np.clip(v[t - 1] + rng.normal(0.0, cfg.ego_accel_std), lo, hi)
    return v


def _walk(rng, cfg, n, x0, y0, vx, vy, w, h):
    """Centers under constant velocity + jitter; x reflects at margins
    (a safety net only: _fit_x keeps expected paths in-bounds)."""
    xs = np.empty(n)
    ys = np.empty(n)
    x, y = x0, y0
    margin = w / 2 + 1
    for t in range(n):
        xs[t], ys[t] = x, y
        x += vx + rng.normal(0.0, cfg.jitter)
        y += vy + rng.normal(0.0, cfg.jitter)
        if x < margin:
            x, vx = margin, abs(vx)
        elif x > cfg.image_width - margin:
            x, vx = cfg.image_width - margin, -abs(vx)
    return xs, ys


def _fit_x(rng, cfg, vx, n, w):
    """Clamp vx and pick x0 so the expected path (track + a 60-frame
    extrapolation) stays inside the image; keeps velocities constant."""
    margin = w / 2 + 2
    usable = cfg.image_width - 2 * margin
    frames = n + 60
    if abs(vx) * frames > 0.95 * usable:
        vx = np.sign(vx) * 0.95 * usable / frames
    span = vx * frames
    lo = margin - min(0.0, span)
    hi = cfg.image_width - margin - max(0.0, span)
    if hi <= lo:
        return vx, (lo + hi) / 2.0
    return vx, rng.uniform(lo, hi)


def _boxes_from_centers(rng, cfg, xs, ys, w, h):
    boxes = np.empty((len(xs), 4))
    boxes[:, 0] = xs - w / 2
    boxes[:, 1] = ys - h / 2
    boxes[:, 2] = xs + w / 2
    boxes[:, 3] = ys + h / 2
    if cfg.box_noise > 0:
        # annotation noise: each stored coordinate wobbles independently
        noise = rng.normal(0.0, cfg.box_noise, boxes.shape)
        noise[:, 2:] = np.maximum(noise[:, 2:], noise[:, :2] - w / 2 + 0.5)
        boxes += noise
    return boxes


def _entry_frame(boxes, band_top) -> int | None:
    hits = np.nonzero(boxes[:, 3] >= band_top)[0]
    return int(hits[0]) if len(hits) else None


def _make_positive(rng, cfg) -> Track | None:
    n = int(rng.integers(cfg.track_len_min, cfg.track_len_max + 1))
    band_top = cfg.band_top_px()
    w = rng.uniform(*cfg.ped_width)
    h = w * rng.uniform(*cfg.ped_aspect)
    event_target = int(rng.integers(cfg.event_min, n - 4))
    y2_0 = rng.uniform(h + 2, band_top - 6)
    vy = (band_top - y2_0 + 0.5) / event_target
    if not 0.06 <= vy <= 1.5:
        return None
    vx = rng.uniform(-1.0, 1.0) * rng.uniform(*cfg.walk_speed) * 0.4
    vx, x0 = _fit_x(rng, cfg, vx, n, w)
    xs, ys = _walk(rng, cfg, n, x0, y2_0 - h / 2, vx, vy, w, h)
    boxes = _boxes_from_centers(rng, cfg, xs, ys, w, h)
    event = _entry_frame(boxes, band_top)
    if event is None or not cfg.event_min - 2 <= event <= n - 2:
        return None
    return Track(pedestrian_id="", split="", frames=np.arange(n),
                 boxes=boxes, speeds=_simulate_ego(rng, cfg, n),
                 event_frame=event, label=1)


def _make_negative(rng, cfg) -> Track | None:
    """Three negative behaviors: slow approachers whose band entry would
    fall far beyond the prediction horizon, parallel walkers at the curb,
    and pedestrians moving away. Approachers share the positives'
    heading, so the label hinges on time-to-entry, not velocity sign."""
    n = int(rng.integers(cfg.track_len_min, cfg.track_len_max + 1))
    band_top = cfg.band_top_px()
    w = rng.uniform(*cfg.ped_width)
    h = w * rng.uniform(*cfg.ped_aspect)
    kind = rng.random()
    if kind < cfg.neg_approach_frac:
        y2_0 = rng.uniform(h + 2, band_top - 10)
        vy_max = (band_top - y2_0 - 2.0) / (n + 90)
        if vy_max <= 0.015:
            vy = rng.uniform(-0.02, 0.01)
        else:
            vy = rng.uniform(min(0.02, 0.3 * vy_max), vy_max)
    elif kind < cfg.neg_approach_frac + cfg.neg_away_frac:
        y2_0 = rng.uniform(h + 2, band_top - 4)
        vy = rng.uniform(-0.35, -0.05)
    else:
        y2_0 = rng.uniform(h + 2, band_top - 3)
        vy = rng.uniform(-0.06, 0.02)
    speed = rng.uniform(*cfg.walk_speed)
    vx = speed * (1 if rng.random() < 0.5 else -1)
    vx, x0 = _fit_x(rng, cfg, vx, n, w)
    xs, ys = _walk(rng, cfg, n, x0, y2_0 - h / 2, vx, vy, w, h)
    boxes = _boxes_from_centers(rng, cfg, xs, ys, w, h)
    if _entry_frame(boxes, band_top) is not None:
        return None
    if boxes[:, 1].min() < 1:  # drifted off the top
        return None
    # The extrapolated trajectory must stay out of the band for 60 frames.
    if boxes[-1, 3] + max(vy, 0.0) * 60 + 1.0 >= band_top:
        return None
    return Track(pedestrian_id="", split="", frames=np.arange(n),
                 boxes=boxes, speeds=_simulate_ego(rng, cfg, n),
                 event_frame=None, label=0)


def generate_tracks(config: SyntheticConfig, seed: int) -> TrackSet:
    """Rejection-sample tracks to the configured class balance, then assign
    splits per class so every split keeps the balance."""
    config.validate()
    n_pos = int(round(config.n_tracks * config.label_balance))
    n_neg = config.n_tracks - n_pos
    tracks = []
    for index in range(config.n_tracks):
        want_positive = index < n_pos
        maker = _make_positive if want_positive else _make_negative
        track = None
        for attempt in range(200):
            rng = _track_rng(seed, index, attempt)
            track = maker(rng, config)
            if track is not None:
                break
        if track is None:
            raise RuntimeError(
                f"could not sample a valid track (index {index}); "
                f"check the geometry configuration")
        track.pedestrian_id = f"ped_{index:05d}"
        tracks.append(track)
    # Per-class deterministic split assignment.
    for label in (1, 0):
        members = [t for t in tracks if t.label == label]
        order = _track_rng(seed, 0, 999 + label).permutation(len(members))
        n = len(members)
        n_train = int(round(config.split_fracs[0] * n))
        n_val = int(round(config.split_fracs[1] * n))
        for rank, idx in enumerate(order):
            if rank < n_train:
                members[idx].split = "train"
            elif rank < n_train + n_val:
                members[idx].split = "val"
            else:
                members[idx].split = "test"
    for t in tracks:
        t.validate()
    return TrackSet(tracks)


# -- frame rendering -----------------------------------------------------

def _texture_params(seed: int, index: int) -> dict:
    rng = _track_rng(seed, index, 3)
    return {
        "phase_x": rng.uniform(0, 2 * np.pi),
        "phase_y": rng.uniform(0, 2 * np.pi),
        "period_x": rng.uniform(11.0, 19.0),
        "period_y": rng.uniform(17.0, 29.0),
        "ped_color": rng.integers(60, 230, size=3).tolist(),
    }


def render_frame(config: SyntheticConfig, params: dict,
                 box: np.ndarray) -> np.ndarray:
    """Scene frame: plaid sidewalk texture, road band with lane dashes,
    pedestrian rectangle. Returns uint8 [H, W, 3] in B,G,R order."""
    h, w = config.image_height, config.image_width
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    plaid = (np.sin(2 * np.pi * xs / params["period_x"] + params["phase_x"]) *
             np.sin(2 * np.pi * ys / params["period_y"] + params["phase_y"]))
    base = 128.0 + 26.0 * plaid + 18.0 * (ys / h - 0.5)
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:, :, 0] = base * 0.95          # blue
    img[:, :, 1] = base                 # green
    img[:, :, 2] = base * 1.05          # red
    top, bottom = config.band_top_px(), config.band_bottom_px()
    img[top:bottom] = 62.0              # asphalt
    mid = (top + bottom) // 2
    dash = (np.arange(w) // 6) % 2 == 0
    img[mid, dash] = 210.0              # lane markings
    x1, y1, x2, y2 = box
    xi1, yi1 = max(0, int(np.floor(x1))), max(0, int(np.floor(y1)))
    xi2, yi2 = min(w, int(np.ceil(x2))), min(h, int(np.ceil(y2)))
    if xi1 < xi2 and yi1 < yi2:
        img[yi1:yi2, xi1:xi2] = params["ped_color"]
    return np.clip(img, 0, 255).astype(np.uint8)


def frame_image(config: SyntheticConfig, seed: int, track: Track,
                frame_no: int) -> np.ndarray:
    index = int(track.pedestrian_id.split("_")[-1])
    row = track.row_of_frame(frame_no)
    return render_frame(config, _texture_params(seed, index),
                        track.boxes[row])


def generate_dataset(config: SyntheticConfig, seed: int, out_dir,
                     stride: int = 5, image_format: str = "ppm") -> TrackSet:
    """Write tracks.tsv, dataset_meta.json, and every frame referenced by a
    classification sample at the given stride."""
    out_dir = Path(out_dir)
    trackset = generate_tracks(config, seed)
    save_tracks(out_dir / "tracks.tsv", trackset)
    extraction = extract_classification_samples(trackset, stride=stride)
    needed = {}
    for s in extraction.samples:
        needed.setdefault(s.pedestrian_id, set()).update(
            (s.first_frame_no, s.last_frame_no))
    n_frames = 0
    for track in trackset:
        frames = needed.get(track.pedestrian_id)
        if not frames:
            continue
        index = int(track.pedestrian_id.split("_")[-1])
        params = _texture_params(seed, index)
        for frame_no in sorted(frames):
            row = track.row_of_frame(frame_no)
            img = render_frame(config, params, track.boxes[row])
            images.write_frame(
                out_dir / "frames" / track.pedestrian_id /
                f"{frame_no:05d}.{image_format}", img)
            n_frames += 1
    labels = [t.label for t in trackset]
    meta = {
        "seed": seed,
        "stride": stride,
        "image_format": image_format,
        "config": config.to_dict(),
        "n_tracks": len(trackset),
        "n_positive": int(sum(labels)),
        "n_frames_rendered": n_frames,
        "n_classification_samples": len(extraction.samples),
    }
    with open(out_dir / "dataset_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return trackset


def load_dataset(data_dir):
    """Returns (TrackSet, meta dict) for a generated dataset directory."""
    from .tracks import load_tracks

    data_dir = Path(data_dir)
    meta_path = data_dir / "dataset_meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found; is {data_dir} a "
                                f"generated dataset?")
    with open(meta_path) as fh:
        meta = json.load(fh)
    return load_tracks(data_dir / "tracks.tsv"), meta
