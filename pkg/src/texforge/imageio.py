"""PNG/PFM reading and writing plus the sRGB transfer functions.

All images inside texforge are float64 arrays shaped (H, W) or (H, W, C) in
linear light. PNG files are treated as display-referred unless a caller asks
for linear decoding (normal, roughness and metallic maps).
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def read_png(path: str | os.PathLike, srgb: bool = True) -> np.ndarray:
    """Read an 8- or 16-bit PNG into floats in [0, 1].

    With ``srgb=True`` color channels are decoded to linear light; an alpha
    channel is always left linear.
    """
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            if im.mode not in ("L", "LA", "RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
            raw = np.asarray(im)
            scale = 65535.0 if raw.dtype == np.uint16 else 255.0
            arr = raw.astype(np.float64) / scale
    if srgb:
        if arr.ndim == 3 and arr.shape[2] in (2, 4):
            arr = np.concatenate([srgb_to_linear(arr[..., :-1]), arr[..., -1:]], axis=2)
        else:
            arr = srgb_to_linear(arr)
    return arr


def to_uint8(img: np.ndarray, srgb: bool = True) -> np.ndarray:
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if srgb:
        if img.ndim == 3 and img.shape[2] in (2, 4):
            img = np.concatenate([linear_to_srgb(img[..., :-1]), img[..., -1:]], axis=2)
        else:
            img = linear_to_srgb(img)
    return np.round(img * 255.0).astype(np.uint8)


def write_png(path: str | os.PathLike, img: np.ndarray, srgb: bool = True) -> None:
    """Clamp to [0, 1], optionally sRGB-encode, and write an 8-bit PNG."""
    data = to_uint8(img, srgb=srgb)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    # Pillow embeds no timestamps for PNG, so output bytes are reproducible.
    Image.fromarray(data).save(path, format="PNG")


def write_pfm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a little-endian PFM (bottom-to-top scanlines, float32)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        header = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF"
    else:
        raise InvalidArgumentError(f"PFM supports 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    lines = []
    pos = 0
    # header: kind, "w h", scale; each on its own line
    while len(lines) < 3:
        end = data.index(b"\n", pos)
        line = data[pos:end].strip()
        pos = end + 1
        if line:
            lines.append(line)
    kind = lines[0]
    if kind not in (b"PF", b"Pf"):
        raise InvalidArgumentError(f"{path}: not a PFM file")
    w, h = (int(v) for v in lines[1].split())
    scale = float(lines[2])
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    body = data[pos : pos + 4 * count]
    if len(body) != 4 * count:
        raise InvalidArgumentError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(body, dtype=dtype).astype(np.float64)
    arr = arr.reshape((h, w, channels) if channels == 3 else (h, w))
    return arr[::-1].copy()


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a linear float image from PFM, or decode an sRGB PNG."""
    if Path(path).suffix.lower() == ".pfm":
        return read_pfm(path)
    return read_png(path, srgb=True)


def image_size(path: str | os.PathLike) -> tuple[int, int]:
    """Return (width, height) without decoding pixel data."""
    if Path(path).suffix.lower() == ".pfm":
        with open(path, "rb") as fh:
            tokens: list[bytes] = []
            while len(tokens) < 3:
                tokens.extend(fh.readline().split())
        return int(tokens[1]), int(tokens[2])
    with Image.open(path) as im:
        return im.size


