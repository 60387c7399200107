"""Transparent print extraction, texture tiling and tiling-scale estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .pbr import MaterialSet
from .scene import resample_bilinear

ALPHA_THRESHOLD = 0.1


@dataclass(frozen=True, eq=False)
class RgbaPrint:
    rgb: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if self.alpha.min() < 0.0 or self.alpha.max() > 1.0:
            raise InvalidArgumentError("alpha must lie in [0, 1]")

    def to_rgba(self) -> np.ndarray:
        return np.concatenate([self.rgb, self.alpha[..., None]], axis=-1)


def extract_alpha(img: np.ndarray, reduce: str = "max") -> RgbaPrint:
    """Split a generated print image into remapped RGB and an alpha channel.

    The per-pixel scalar driving alpha is the channel maximum (``reduce="max"``)
    or Rec. 709 luminance (``reduce="luma"``) for color inputs.
    """
    x = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgumentError("image values must lie in [0, 1]")
    if x.ndim == 2:
        x = x[..., None]
    if x.shape[-1] == 1:
        scalar = x[..., 0]
    elif reduce == "max":
        scalar = x.max(axis=-1)
    elif reduce == "luma":
        scalar = x[..., :3] @ np.array([0.2126, 0.7152, 0.0722])
    else:
        raise InvalidArgumentError(f"unknown reduction {reduce!r}")
    rgb = np.maximum(0.0, (x - ALPHA_THRESHOLD) / 0.9)
    alpha = np.where(scalar >= ALPHA_THRESHOLD, 1.0, scalar / ALPHA_THRESHOLD)
    rgb = np.where(alpha[..., None] > 0.0, rgb, 0.0)
    if rgb.shape[-1] == 1:
        rgb = np.repeat(rgb, 3, axis=-1)
    return RgbaPrint(rgb, alpha)


def _check_repeats(repeats) -> tuple[float, float]:
    rx, ry = (float(r) for r in repeats)
    if not (math.isfinite(rx) and math.isfinite(ry) and rx > 0 and ry > 0):
        raise InvalidArgumentError("repeats must be positive")
    return rx, ry


def _tile_image(img: np.ndarray, rx: float, ry: float, out_size=None) -> np.ndarray:
    h, w = img.shape[:2]
    if out_size is None:
        out_w, out_h = math.ceil(rx * w), math.ceil(ry * h)
    else:
        out_w, out_h = out_size
    # source pixel coordinate of each output pixel center, wrapped
    xs = (np.arange(out_w) + 0.5) * (rx * w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (ry * h / out_h) - 0.5
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    ix0 = x0.astype(np.int64) % w
    iy0 = y0.astype(np.int64) % h
    ix1 = (ix0 + 1) % w
    iy1 = (iy0 + 1) % h
    extra = (None,) * (img.ndim - 2)
    fx = fx[(None, slice(None)) + extra]
    fy = fy[(slice(None), None) + extra]
    rows0, rows1 = img[iy0], img[iy1]
    top = rows0[:, ix0] * (1 - fx) + rows0[:, ix1] * fx
    bot = rows1[:, ix0] * (1 - fx) + rows1[:, ix1] * fx
    return top * (1 - fy) + bot * fy


def tile_texture(tex, repeats, out_size: tuple[int, int] | None = None):
    """Repeat ``tex`` rx times horizontally and ry times vertically with wrap addressing.

    By default the output is ceil(rx W) x ceil(ry H) pixels at the source
    pixel scale. ``out_size`` = (width, height) resamples instead. A
    MaterialSet is tiled map by map (normals renormalized).
    """
    rx, ry = _check_repeats(repeats)
    if isinstance(tex, MaterialSet):
        normal = _tile_image(tex.normal, rx, ry, out_size)
        normal = normal / np.linalg.norm(normal, axis=-1, keepdims=True)
        albedo = _tile_image(tex.albedo, rx, ry, out_size)
        if albedo.shape[0] != albedo.shape[1]:
            raise InvalidArgumentError("tiled MaterialSet must stay square")
        return MaterialSet(albedo, normal, _tile_image(tex.roughness, rx, ry, out_size),
                           _tile_image(tex.metallic, rx, ry, out_size), tex.specular, tex.name)
    img = np.asarray(tex, dtype=np.float64)
    return _tile_image(img, rx, ry, out_size)


@dataclass(frozen=True, eq=False)
class GarmentMask:
    """Binary garment mask plus the capture rect (x, y, w, h) in the same pixel frame."""

    mask: np.ndarray
    capture: tuple[int, int, int, int]

    def __post_init__(self):
        m = np.asarray(self.mask).astype(bool)
        if not m.any():
            raise InvalidArgumentError("garment mask is empty")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "capture", tuple(int(v) for v in self.capture))

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        ys, xs = np.nonzero(self.mask)
        return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)

    @classmethod
    def from_png(cls, path, capture) -> "GarmentMask":
        from PIL import Image

        with Image.open(path) as im:
            m = np.asarray(im.convert("L")) >= 128
        return cls(m, capture)


def estimate_tiling_scale(mask: GarmentMask, uv_chart_extent=(1.0, 1.0)) -> tuple[float, float]:
    """Repeats so the capture-to-garment ratio carries over to the UV chart."""
    cx, cy, cw, ch = mask.capture
    if cw <= 0 or ch <= 0:
        raise InvalidArgumentError("capture rect has zero area")
    bx, by, bw, bh = mask.bbox
    if cx < bx or cy < by or cx + cw > bx + bw or cy + ch > by + bh:
        raise InvalidArgumentError("capture rect must lie inside the garment bounding box")
    ex, ey = (float(e) for e in np.broadcast_to(np.asarray(uv_chart_extent, dtype=np.float64), (2,)))
    return bw / cw * ex, bh / ch * ey


def composite_print(base: np.ndarray, prt: RgbaPrint, placement) -> np.ndarray:
    """Alpha-over ``prt`` onto ``base`` inside ``placement`` = (x, y, w, h) pixels."""
    base = np.asarray(base, dtype=np.float64)
    x, y, w, h = (int(v) for v in placement)
    bh, bw = base.shape[:2]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > bw or y + h > bh:
        raise InvalidArgumentError(f"placement {tuple(placement)} outside base {bw}x{bh}")
    rgb, alpha = prt.rgb, prt.alpha
    if rgb.shape[:2] != (h, w):
        rgb = resample_bilinear(rgb, w, h)
        alpha = np.clip(resample_bilinear(alpha, w, h), 0.0, 1.0)
    out = base.copy()
    a = alpha[..., None]
    out[y : y + h, x : x + w] = a * rgb + (1.0 - a) * base[y : y + h, x : x + w]
    return out
