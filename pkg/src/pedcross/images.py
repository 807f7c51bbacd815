"""Scene image I/O and preprocessing.

Images are uint8 [H, W, 3] arrays in B,G,R channel order throughout the
package. On disk that same channel order fills the nominal RGB slots of
PPM/PNG files, i.e. byte triple (B, G, R) -- generic viewers therefore
show red and blue swapped, which is documented and intentional so the
files round-trip bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

# Incremented on every frame-file read; the latency benchmark asserts this
# stays flat inside the timed region.
FRAME_READS = {"count": 0}

# Per-channel normalization constants (B, G, R), pinned so training and
# inference agree: x_norm = (x - mean) / std.
CHANNEL_MEAN = (127.5, 127.5, 127.5)
CHANNEL_STD = (63.75, 63.75, 63.75)


def write_ppm(path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, c = image.shape
    if c != 3:
        raise ValueError(f"expected 3 channels, got shape {image.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    FRAME_READS["count"] += 1
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    # Header: magic, width, height, maxval, each separated by whitespace.
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(
        path, format="PNG")


def read_png(path) -> np.ndarray:
    from PIL import Image

    FRAME_READS["count"] += 1
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_frame(path, image: np.ndarray) -> None:
    if str(path).endswith(".png"):
        write_png(path, image)
    else:
        write_ppm(path, image)


def read_frame(path) -> np.ndarray:
    if str(path).endswith(".png"):
        return read_png(path)
    return read_ppm(path)


def resize_bilinear(image: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Bilinear resample to (H, W); returns float32 [H, W, 3]."""
    oh, ow = out_hw
    img = image.astype(np.float32, copy=False)
    h, w = img.shape[:2]
    if (h, w) == (oh, ow):
        return img.copy()
    ys = (np.arange(oh, dtype=np.float32) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow, dtype=np.float32) + 0.5) * (w / ow) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def to_network_input(image: np.ndarray, input_hw: tuple,
                     mean=CHANNEL_MEAN, std=CHANNEL_STD) -> np.ndarray:
    """Resize + normalize + CHW: uint8 BGR [H,W,3] -> float32 [3,h,w]."""
    resized = resize_bilinear(image, input_hw)
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return ((resized - mean) / std).transpose(2, 0, 1).copy()
