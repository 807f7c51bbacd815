"""Sequence extraction, feature normalization, and class weighting.

Classification samples follow the benchmark protocol: 16 observation
frames (15 feature rows t-14..t plus the frame at t-15 as the first
scene image) and a crossing event 30-60 frames past t. Trajectory
windows are 75 consecutive rows (15 past + 60 future) cut with a
configurable overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import images
from .tracks import Track, TrackSet

OBS_LEN = 16          # observation frames, including the t-15 image frame
OBS_ROWS = 15         # feature rows t-14..t
HORIZON = 60          # predicted frames
WINDOW = OBS_ROWS + HORIZON


@dataclass
class Sample:
    """One classification instance."""

    pedestrian_id: str
    split: str
    observed: np.ndarray        # [15, 5] raw features, rows t-14..t
    label: int
    tte_frames: int             # event_frame - frame(t), in [tte_min, tte_max]
    first_frame_no: int         # frame index t-15 (first scene image)
    last_frame_no: int          # frame index t (second scene image)
    first_image: np.ndarray | None = None
    last_image: np.ndarray | None = None

    @property
    def obs_boxes(self) -> np.ndarray:
        return self.observed[:, :4]


@dataclass
class ExtractionResult:
    samples: list = field(default_factory=list)
    skipped_short: int = 0

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def _anchor_frame(track: Track) -> int:
    if track.event_frame is not None:
        return int(track.event_frame)
    # Tracks without an event anchor their window at the track tail.
    return int(track.frames[-1])


def extract_classification_samples(tracks, obs_len: int = OBS_LEN,
                                   tte_min: int = 30, tte_max: int = 60,
                                   stride: int = 1) -> ExtractionResult:
    """All samples whose last observed frame t satisfies
    event in [t + tte_min, t + tte_max], stepping t by `stride`."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    result = ExtractionResult()
    for track in tracks:
        n = len(track)
        if n < obs_len:
            result.skipped_short += 1
            continue
        feats = track.features()
        anchor = _anchor_frame(track)
        frames = track.frames
        for row_t in range(obs_len - 1, n, stride):
            t_frame = int(frames[row_t])
            tte = anchor - t_frame
            if tte > tte_max:
                continue
            if tte < tte_min:
                break
            lo = row_t - obs_len + 1
            window_frames = frames[lo:row_t + 1]
            if window_frames[-1] - window_frames[0] != obs_len - 1:
                continue  # gap inside the observation window
            result.samples.append(Sample(
                pedestrian_id=track.pedestrian_id, split=track.split,
                observed=feats[lo + 1:row_t + 1].copy(),
                label=track.label, tte_frames=int(tte),
                first_frame_no=int(window_frames[0]),
                last_frame_no=t_frame))
    return result


def extract_trajectory_samples(tracks, past: int = OBS_ROWS,
                               future: int = HORIZON,
                               overlap: float = 0.6) -> list:
    """Sliding (past, future) windows; step = round((1-overlap)*window)."""
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    window = past + future
    step = max(1, round((1.0 - overlap) * window))
    out = []
    for track in tracks:
        n = len(track)
        if n < window:
            continue
        feats = track.features()
        for start in range(0, n - window + 1, step):
            out.append((feats[start:start + past].copy(),
                        feats[start + past:start + window].copy(),
                        track.pedestrian_id, start))
    return out


@dataclass
class NormStats:
    """Per-feature mean/std of offset trajectories on the training split."""

    mean: np.ndarray  # [5]
    std: np.ndarray   # [5]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ValueError(
                f"degenerate feature: std must be > 0, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.asarray(d["mean"]), std=np.asarray(d["std"]))


def apply_offset(seq: np.ndarray, ref_box: np.ndarray | None = None):
    """Subtract the first row's bbox from every row's bbox coordinates.

    Returns (offset sequence, reference box) so the transform can be
    inverted. Speed (column 4) is left alone.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != 5:
        raise ValueError(f"expected [n, 5] sequence, got {seq.shape}")
    ref = seq[0, :4].copy() if ref_box is None else np.asarray(ref_box, float)
    out = seq.copy()
    out[:, :4] -= ref
    return out, ref


def compute_norm_stats(windows) -> NormStats:
    """Fit mean/std over offset (past+future) training windows."""
    rows = []
    for past, future, _pid, _start in windows:
        seq = np.concatenate([past, future], axis=0)
        off, _ = apply_offset(seq)
        rows.append(off)
    if not rows:
        raise ValueError("no trajectory windows to fit normalization stats")
    stacked = np.concatenate(rows, axis=0)
    std = stacked.std(axis=0)
    if np.any(std <= 1e-9):
        raise ValueError(f"degenerate feature: std was {std}")
    return NormStats(mean=stacked.mean(axis=0), std=std)


def offset_and_zscore(seq: np.ndarray, stats: NormStats,
                      ref_box: np.ndarray | None = None):
    """Offset bbox coords by the first row (or `ref_box`), then z-score all
    five features. Returns (normalized [n,5] float, reference box)."""
    off, ref = apply_offset(seq, ref_box)
    return (off - stats.mean) / stats.std, ref


def invert_offset_zscore(norm_seq: np.ndarray, stats: NormStats,
                         ref_box: np.ndarray) -> np.ndarray:
    seq = np.asarray(norm_seq, dtype=np.float64) * stats.std + stats.mean
    seq[:, :4] += np.asarray(ref_box, dtype=np.float64)
    return seq


def compute_class_weight(labels) -> float:
    """alpha = count(label==0) / N; weights the positive CE term."""
    labels = np.asarray(labels)
    n = labels.size
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"class weight needs both classes; got {n_pos} positive / "
            f"{n_neg} negative of {n}")
    return n_neg / n


def attach_images(samples, frames_dir, image_format: str = "ppm") -> None:
    """Load each sample's two scene frames into memory (decoded uint8 BGR)."""
    frames_dir = Path(frames_dir)
    cache = {}
    for s in samples:
        for attr, frame_no in (("first_image", s.first_frame_no),
                               ("last_image", s.last_frame_no)):
            key = (s.pedestrian_id, frame_no)
            if key not in cache:
                path = frames_dir / s.pedestrian_id / \
                    f"{frame_no:05d}.{image_format}"
                if not path.exists():
                    raise FileNotFoundError(
                        f"missing frame {path}; regenerate the dataset with "
                        f"a stride covering this sample")
                cache[key] = images.read_frame(path)
            setattr(s, attr, cache[key])
