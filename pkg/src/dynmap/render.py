"""PNG rendering of descriptor maps. North (larger y) is drawn at the top."""

from __future__ import annotations

import colorsys

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .descriptors import DescriptorMaps
from .grid import TWO_PI

LAYERS = ("flow", "entropy", "direction")


def layer_rgb(maps: DescriptorMaps, layer: str) -> np.ndarray:
    """(height, width, 3) uint8 image, row 0 = southmost grid row."""
    if layer == "direction":
        hue = np.mod(np.arctan2(maps.dir_sin, maps.dir_cos), TWO_PI) / TWO_PI
        sat = maps.dir_valid.astype(float)
        rgb = np.zeros(maps.spec.shape + (3,))
        for idx in np.ndindex(maps.spec.shape):
            rgb[idx] = colorsys.hsv_to_rgb(hue[idx], sat[idx], 1.0)
    elif layer in ("flow", "entropy"):
        vals = np.asarray(getattr(maps, layer), dtype=float)
        if not maps.normalized:
            top = vals.max()
            vals = vals / top if top > 0 else vals
        rgb = colormaps["viridis"](np.clip(vals, 0.0, 1.0))[..., :3]
    else:
        raise ValueError(f"layer must be one of {LAYERS}")
    return np.round(rgb * 255).astype(np.uint8)


def render(maps: DescriptorMaps, layer: str, out_path, scale: int = 1) -> None:
    if scale < 1:
        raise ValueError("scale must be >= 1")
    img = layer_rgb(maps, layer)[::-1]
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    Image.fromarray(img, mode="RGB").save(out_path, format="PNG")
