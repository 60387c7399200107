"""Environment maps and point lights."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .imageio import read_pfm

# Equirectangular convention: +Y is up. theta is the polar angle from +Y,
# phi the azimuth measured from +Z toward +X. Row 0 is the zenith.


def direction_to_angles(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.arctan2(d[..., 0], d[..., 2]) % (2.0 * np.pi)
    return theta, phi


def angles_to_direction(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.sin(phi), np.cos(theta), st * np.cos(phi)], axis=-1)


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    radiance: np.ndarray
    name: str = "env"

    def __post_init__(self):
        rad = np.asarray(self.radiance, dtype=np.float64)
        if rad.ndim == 2:
            rad = np.repeat(rad[..., None], 3, axis=2)
        if rad.ndim != 3 or rad.shape[2] != 3:
            raise InvalidArgumentError("environment map must be HxWx3")
        h, w = rad.shape[:2]
        if w != 2 * h:
            raise InvalidArgumentError(f"environment map must be 2:1, got {w}x{h}")
        if not np.all(np.isfinite(rad)) or rad.min() < 0.0:
            raise InvalidArgumentError("environment radiance must be finite and nonnegative")
        rad.setflags(write=False)
        object.__setattr__(self, "radiance", rad)

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    def lookup(self, dirs: np.ndarray) -> np.ndarray:
        """Bilinear radiance lookup; wraps in azimuth, clamps at the poles."""
        theta, phi = direction_to_angles(dirs)
        h, w = self.height, self.width
        x = phi / (2.0 * np.pi) * w - 0.5
        y = theta / np.pi * h - 0.5
        x0 = np.floor(x)
        y0 = np.floor(y)
        fx = (x - x0)[..., None]
        fy = (y - y0)[..., None]
        ix0 = x0.astype(np.int64) % w
        ix1 = (ix0 + 1) % w
        iy0 = np.clip(y0.astype(np.int64), 0, h - 1)
        iy1 = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
        r = self.radiance
        top = r[iy0, ix0] * (1.0 - fx) + r[iy0, ix1] * fx
        bot = r[iy1, ix0] * (1.0 - fx) + r[iy1, ix1] * fx
        return top * (1.0 - fy) + bot * fy

    @classmethod
    def from_pfm(cls, path: str | os.PathLike, name: str | None = None) -> "EnvironmentMap":
        return cls(read_pfm(path), name=name or os.path.splitext(os.path.basename(path))[0])


@dataclass(frozen=True)
class PointLight:
    """Isotropic point light; ``intensity`` is radiant intensity (W/sr) per channel."""

    position: tuple[float, float, float]
    intensity: tuple[float, float, float]

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        inten = np.asarray(self.intensity, dtype=np.float64)
        if inten.ndim == 0:
            inten = np.repeat(inten, 3)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise InvalidArgumentError("light position must be a finite 3-vector")
        if inten.shape != (3,) or not np.all(np.isfinite(inten)) or inten.min() < 0:
            raise InvalidArgumentError("light intensity must be finite and nonnegative")
        object.__setattr__(self, "position", tuple(pos.tolist()))
        object.__setattr__(self, "intensity", tuple(inten.tolist()))

    @classmethod
    def calibrated(cls, height: float = 10.0) -> "PointLight":
        """Light at (0, 0, height) with I = pi * height**2, so a Lambertian
        surface directly below reflects its albedo."""
        i = np.pi * height * height
        return cls(position=(0.0, 0.0, height), intensity=(i, i, i))


ENV_PRESETS = ("constant", "gradient", "two_lobe", "window")


def procedural_environment(kind: str, height: int = 32, scale: float = 1.0) -> EnvironmentMap:
    """Grayscale procedural environments (R = G = B everywhere)."""
    h = int(height)
    w = 2 * h
    theta = (np.arange(h) + 0.5) / h * np.pi
    phi = (np.arange(w) + 0.5) / w * 2.0 * np.pi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    dirs = angles_to_direction(th, ph)
    if kind == "constant":
        lum = np.ones((h, w))
    elif kind == "gradient":
        # bright sky fading to a dim ground
        lum = 0.2 + 0.8 * (0.5 + 0.5 * np.cos(th))
    elif kind == "two_lobe":
        a = np.array([0.6, 0.6, 0.52])
        b = np.array([-0.7, 0.3, 0.65])
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        lum = 0.15 + 1.6 * np.maximum(dirs @ a, 0) ** 8 + 0.9 * np.maximum(dirs @ b, 0) ** 4
    elif kind == "window":
        lum = np.full((h, w), 0.25)
        win = (th > 0.25 * np.pi) & (th < 0.5 * np.pi) & (np.abs(ph - 0.35 * np.pi) < 0.2 * np.pi)
        lum = np.where(win, 3.0, lum)
    else:
        raise InvalidArgumentError(f"unknown environment preset {kind!r}; choose from {ENV_PRESETS}")
    lum = lum * scale
    return EnvironmentMap(np.repeat(lum[..., None], 3, axis=2), name=kind)
