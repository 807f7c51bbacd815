"""Trajectory overlay rendering.

Boxes are drawn as filled rectangles in temporal order (later boxes on
top). Only the blue and green channels take the palette color of the
box's timestep; the red channel is left untouched so pedestrian
appearance survives the overlay. Timestep i of a sample maps to palette
entry i: observed boxes use entries 0-14, predicted boxes 15-74.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import math
from pathlib import Path

import numpy as np

PALETTE_RESOURCE = "ade20k_palette.txt"


def _default_palette_text() -> str:
    return (importlib.resources.files("pedcross") / "data" /
            PALETTE_RESOURCE).read_text()


def load_palette(path=None) -> np.ndarray:
    """Palette file: one `R,G,B` triple per line -> uint8 [n, 3] (RGB)."""
    text = Path(path).read_text() if path else _default_palette_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"palette line {lineno}: expected R,G,B")
        rgb = [int(v) for v in parts]
        if any(not 0 <= v <= 255 for v in rgb):
            raise ValueError(f"palette line {lineno}: values must be 0..255")
        rows.append(rgb)
    if not rows:
        raise ValueError("palette file is empty")
    return np.asarray(rows, dtype=np.uint8)


def palette_digest(palette: np.ndarray) -> str:
    return hashlib.sha256(palette.tobytes()).hexdigest()


def render_overlay(image: np.ndarray, boxes, palette: np.ndarray,
                   start_index: int = 0) -> np.ndarray:
    """Return a copy of `image` (uint8 BGR) with `boxes` drawn.

    Box i uses palette[start_index + i]; its interior pixels' B and G
    channels are set to the entry's B and G components. Boxes are clipped
    to the image; fully clipped boxes draw nothing.
    """
    if palette is None or len(palette) == 0:
        raise ValueError("palette must contain at least one entry")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if start_index + len(boxes) > len(palette):
        raise ValueError(
            f"palette has {len(palette)} entries; need "
            f"{start_index + len(boxes)} for these boxes")
    out = np.array(image, dtype=np.uint8, copy=True)
    h, w = out.shape[:2]
    for i, (x1, y1, x2, y2) in enumerate(boxes):
        xi1 = max(0, int(math.floor(x1)))
        yi1 = max(0, int(math.floor(y1)))
        xi2 = min(w, int(math.ceil(x2)))
        yi2 = min(h, int(math.ceil(y2)))
        if xi1 >= xi2 or yi1 >= yi2:
            continue
        r, g, b = palette[start_index + i]
        out[yi1:yi2, xi1:xi2, 0] = b
        out[yi1:yi2, xi1:xi2, 1] = g
        # channel 2 (red) intentionally untouched
    return out
