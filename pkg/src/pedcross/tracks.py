"""Pedestrian track records and the line-delimited track file format.

One record per line:
    ped_id<TAB>split<TAB>frame<TAB>x1,y1,x2,y2<TAB>speed<TAB>event_or_dash<TAB>label

Frames of one pedestrian must be strictly increasing; split, label and
event frame must agree across all of a pedestrian's lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")

SPEED_CATEGORIES = {
    "stopped": 0,
    "decelerating": 1,
    "moving slow": 2,
    "moving fast": 3,
    "accelerating": 4,
}


class TrackFormatError(ValueError):
    pass


def encode_speed_ordinal(category: str) -> int:
    """Map a named driving state to its ordinal speed code."""
    try:
        return SPEED_CATEGORIES[category]
    except KeyError:
        valid = ", ".join(sorted(SPEED_CATEGORIES))
        raise ValueError(
            f"unknown speed category {category!r}; valid: {valid}") from None


@dataclass
class Track:
    pedestrian_id: str
    split: str
    frames: np.ndarray          # [n] int64, strictly increasing
    boxes: np.ndarray           # [n, 4] float64, x1 y1 x2 y2 pixels
    speeds: np.ndarray          # [n] float64
    event_frame: int | None     # frame index of the crossing event
    label: int                  # 1 = crosses, 0 = does not

    def __len__(self) -> int:
        return len(self.frames)

    def validate(self):
        if self.split not in SPLITS:
            raise TrackFormatError(
                f"track {self.pedestrian_id}: unknown split {self.split!r}")
        if self.label not in (0, 1):
            raise TrackFormatError(
                f"track {self.pedestrian_id}: label must be 0 or 1")
        if len(self.frames) == 0:
            raise TrackFormatError(f"track {self.pedestrian_id}: empty")
        diffs = np.diff(self.frames)
        if np.any(diffs <= 0):
            raise TrackFormatError(
                f"track {self.pedestrian_id}: frame indices must be "
                f"strictly increasing")
        if np.any(self.boxes[:, 0] >= self.boxes[:, 2]) or \
                np.any(self.boxes[:, 1] >= self.boxes[:, 3]):
            raise TrackFormatError(
                f"track {self.pedestrian_id}: degenerate bounding box "
                f"(need x1<x2 and y1<y2)")

    def features(self) -> np.ndarray:
        """[n, 5] rows of (x1, y1, x2, y2, ego speed)."""
        return np.concatenate([self.boxes, self.speeds[:, None]], axis=1)

    def row_of_frame(self, frame: int) -> int:
        i = int(np.searchsorted(self.frames, frame))
        if i >= len(self.frames) or self.frames[i] != frame:
            raise KeyError(f"track {self.pedestrian_id} has no frame {frame}")
        return i


@dataclass
class TrackSet:
    tracks: list = field(default_factory=list)

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [t for t in self.tracks if t.split == name]

    def by_id(self, ped_id: str) -> Track:
        for t in self.tracks:
            if t.pedestrian_id == ped_id:
                return t
        raise KeyError(ped_id)


def _parse_line(line: str, lineno: int):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise TrackFormatError(
            f"line {lineno}: expected 7 tab-separated fields, got {len(parts)}")
    ped_id, split, frame_s, bbox_s, speed_s, event_s, label_s = parts
    try:
        frame = int(frame_s)
        coords = [float(v) for v in bbox_s.split(",")]
        speed = float(speed_s)
        label = int(label_s)
    except ValueError as exc:
        raise TrackFormatError(f"line {lineno}: {exc}") from None
    if len(coords) != 4:
        raise TrackFormatError(
            f"line {lineno}: bbox needs 4 comma-separated values")
    x1, y1, x2, y2 = coords
    if not (x1 < x2 and y1 < y2):
        raise TrackFormatError(
            f"line {lineno}: degenerate bbox {bbox_s} (need x1<x2, y1<y2)")
    if event_s == "-":
        event = None
    else:
        try:
            event = int(event_s)
        except ValueError:
            raise TrackFormatError(
                f"line {lineno}: event frame must be an integer or '-'") from None
    if split not in SPLITS:
        raise TrackFormatError(f"line {lineno}: unknown split {split!r}")
    if label not in (0, 1):
        raise TrackFormatError(f"line {lineno}: label must be 0 or 1")
    return ped_id, split, frame, coords, speed, event, label


def load_tracks(path) -> TrackSet:
    """Parse a track file; raises TrackFormatError with the line number on
    the first malformed record."""
    rows = {}
    order = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            ped_id, split, frame, coords, speed, event, label = \
                _parse_line(line, lineno)
            if ped_id not in rows:
                rows[ped_id] = {"split": split, "event": event, "label": label,
                                "frames": [], "boxes": [], "speeds": [],
                                "first_line": lineno}
                order.append(ped_id)
            rec = rows[ped_id]
            if (split, event, label) != (rec["split"], rec["event"], rec["label"]):
                raise TrackFormatError(
                    f"line {lineno}: inconsistent split/event/label for "
                    f"pedestrian {ped_id} (first seen line {rec['first_line']})")
            if rec["frames"] and frame <= rec["frames"][-1]:
                raise TrackFormatError(
                    f"line {lineno}: frame {frame} not strictly increasing "
                    f"for pedestrian {ped_id}")
            rec["frames"].append(frame)
            rec["boxes"].append(coords)
            rec["speeds"].append(speed)
    tracks = []
    for ped_id in order:
        rec = rows[ped_id]
        track = Track(
            pedestrian_id=ped_id, split=rec["split"],
            frames=np.asarray(rec["frames"], dtype=np.int64),
            boxes=np.asarray(rec["boxes"], dtype=np.float64),
            speeds=np.asarray(rec["speeds"], dtype=np.float64),
            event_frame=rec["event"], label=rec["label"])
        track.validate()
        tracks.append(track)
    return TrackSet(tracks)


def save_tracks(path, trackset: TrackSet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in trackset:
            event = "-" if t.event_frame is None else str(t.event_frame)
            for frame, box, speed in zip(t.frames, t.boxes, t.speeds):
                bbox = ",".join(f"{v:.3f}" for v in box)
                fh.write(f"{t.pedestrian_id}\t{t.split}\t{frame}\t{bbox}\t"
                         f"{speed:.4f}\t{event}\t{t.label}\n")
