"""Image containers, patch decomposition and pixel/patch grid broadcasting.

Images are ``float64`` numpy arrays of shape ``(H, W, 3)`` with values in
``[0, 1]``. Distortion grids are plain 2-D arrays with one value per patch.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage

from .errors import InvalidArgument

MAP16_SUFFIX = ".png16"
_U16 = 65535


def as_image(img, name="image"):
    """Validate and return ``img`` as an ``(H, W, 3)`` float64 array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgument(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidArgument(f"{name} values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class PatchGrid:
    """Row-major ``(rows, cols, n, n, C)`` patch stack plus the source extent."""

    patches: np.ndarray
    patch_size: int
    height: int
    width: int

    @property
    def rows(self):
        return self.patches.shape[0]

    @property
    def cols(self):
        return self.patches.shape[1]


def grid_shape(h, w, n):
    return math.ceil(h / n), math.ceil(w / n)


def pad_to_multiple(x, n):
    """Reflect-pad the bottom/right of ``x`` so both spatial dims divide ``n``."""
    h, w = x.shape[:2]
    rows, cols = grid_shape(h, w, n)
    pads = [(0, rows * n - h), (0, cols * n - w)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pads, mode="reflect")


def patchify(img, n):
    if n < 1:
        raise InvalidArgument(f"patch size must be >= 1, got {n}")
    x = np.asarray(img)
    if x.ndim == 2:
        x = x[:, :, None]
    h, w, c = x.shape
    padded = pad_to_multiple(x, n)
    rows, cols = padded.shape[0] // n, padded.shape[1] // n
    patches = padded.reshape(rows, n, cols, n, c).transpose(0, 2, 1, 3, 4)
    return PatchGrid(np.ascontiguousarray(patches), n, h, w)


def depatchify(grid):
    p = np.asarray(grid.patches)
    if p.ndim != 5 or p.shape[2] != grid.patch_size or p.shape[3] != grid.patch_size:
        raise InvalidArgument(f"inconsistent patch stack shape {p.shape} for n={grid.patch_size}")
    rows, cols, n, _, c = p.shape
    if rows * n < grid.height or cols * n < grid.width:
        raise InvalidArgument("patch grid smaller than recorded extent")
    full = p.transpose(0, 2, 1, 3, 4).reshape(rows * n, cols * n, c)
    return full[: grid.height, : grid.width]


def broadcast_grid(grid, n, h, w):
    """Block-constant upsampling of a per-patch grid to an ``(h, w, 1)`` field."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or g.shape != grid_shape(h, w, n):
        raise InvalidArgument(
            f"grid shape {g.shape} inconsistent with {h}x{w} image at patch size {n}"
        )
    field = np.repeat(np.repeat(g, n, axis=0), n, axis=1)
    return field[:h, :w, None]


def broadcast_grid_torch(grid, n, h, w):
    """Torch version for batched ``(B, rows, cols)`` grids -> ``(B, 1, h, w)``."""
    field = grid.repeat_interleave(n, dim=-2).repeat_interleave(n, dim=-1)
    return field[..., None, :h, :w].contiguous()


def resize(img, h, w):
    """Bilinear resampling to ``h x w``, clamped to [0, 1]."""
    if h < 1 or w < 1:
        raise InvalidArgument(f"target size must be positive, got {h}x{w}")
    x = np.asarray(img, dtype=np.float64)
    if x.shape[:2] == (h, w):
        return x.copy()
    t = torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    return out[0].numpy().transpose(1, 2, 0).clip(0.0, 1.0)


def center_square(img, size):
    """Resize the shorter side to ``size`` then center-crop to ``size x size``."""
    x = np.asarray(img)
    h, w = x.shape[:2]
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    x = resize(x, nh, nw)
    top, left = (nh - size) // 2, (nw - size) // 2
    return x[top : top + size, left : left + size]


def read_image(path):
    """Read an 8-bit PNG/JPEG into a float64 ``(H, W, 3)`` array in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    u8 = np.round(arr.clip(0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(u8).save(path, format="PNG")


def quantize16(values, scale=1.0 / _U16, offset=0.0):
    return np.round((np.asarray(values, dtype=np.float64) - offset) / scale).clip(0, _U16)


def dequantize16(stored, scale=1.0 / _U16, offset=0.0):
    return np.asarray(stored, dtype=np.float64) * scale + offset


def write_map16(path, values, extra=None):
    """Persist a float map as a 16-bit grayscale PNG plus ``<path>.json`` sidecar.

    Multi-channel maps are stacked vertically (channel-planar), so an
    ``(H, W, 3)`` map becomes a ``3H x W`` grayscale image. Values are stored
    as ``round((v - offset) / scale)``.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    lo, hi = float(arr.min()), float(arr.max())
    if lo >= 0.0 and hi <= 1.0:
        offset, scale = 0.0, 1.0 / _U16
    else:
        offset, scale = lo, (hi - lo) / _U16 if hi > lo else 1.0
    stored = quantize16(arr, scale, offset).astype(np.uint16)
    planar = stored.transpose(2, 0, 1).reshape(c * h, w)
    path = Path(path)
    PILImage.fromarray(planar).save(path, format="PNG")
    meta = {"scale": scale, "offset": offset, "height": h, "width": w, "channels": c,
            "layout": "planar-vertical", "dtype": "uint16"}
    if extra:
        meta.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return dequantize16(stored, scale, offset)


def read_map16(path):
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    with PILImage.open(path) as im:
        planar = np.asarray(im, dtype=np.uint16 if im.mode.startswith("I;16") else np.int64)
    h, w, c = meta["height"], meta["width"], meta["channels"]
    if planar.shape != (c * h, w):
        raise InvalidArgument(f"{path}: stored shape {planar.shape} disagrees with sidecar")
    stored = planar.reshape(c, h, w).transpose(1, 2, 0)
    return dequantize16(stored, meta["scale"], meta["offset"])
