"""Cook-Torrance material model and Monte Carlo evaluation of the reflectance integral.

The BRDF is Lambert diffuse plus a GGX / Schlick / Smith-Schlick-GGX specular
lobe, with alpha = roughness**2 and F0 = lerp(0.04, albedo, metallic).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hashrng
from .errors import InvalidArgumentError
from .imageio import read_png
from .lighting import EnvironmentMap, PointLight

EPS_DIV = 1e-7
UNIT_TOL = 1e-3
FRAME_TOL = 1e-5
FLAT_NORMAL_RGB = (0.5, 0.5, 1.0)


def decode_normals(rgb: np.ndarray) -> np.ndarray:
    """Map normal-map colors in [0,1]^3 to unit vectors via 2c - 1."""
    v = 2.0 * np.asarray(rgb, dtype=np.float64) - 1.0
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-8):
        raise InvalidArgumentError("normal map contains zero-length vectors")
    return v / n


def encode_normals(n: np.ndarray) -> np.ndarray:
    return (np.asarray(n, dtype=np.float64) + 1.0) * 0.5


@dataclass(frozen=True, eq=False)
class MaterialSet:
    """Four PBR maps for one texture tile.

    ``normal`` holds decoded unit vectors in tangent space. ``specular`` scales
    the microfacet lobe; 0 gives a pure Lambertian material (used by the
    furnace checks), 1 is the regular model.
    """

    albedo: np.ndarray
    normal: np.ndarray
    roughness: np.ndarray
    metallic: np.ndarray
    specular: float = 1.0
    name: str = ""

    def __post_init__(self):
        albedo = np.asarray(self.albedo, dtype=np.float64)
        normal = np.asarray(self.normal, dtype=np.float64)
        rough = np.asarray(self.roughness, dtype=np.float64)
        metal = np.asarray(self.metallic, dtype=np.float64)
        if rough.ndim == 3:
            rough = rough[..., 0]
        if metal.ndim == 3:
            metal = metal[..., 0]
        if albedo.ndim != 3 or albedo.shape[2] != 3:
            raise InvalidArgumentError(f"albedo must be HxWx3, got {albedo.shape}")
        h, w = albedo.shape[:2]
        if h != w:
            raise InvalidArgumentError("material tiles must be square")
        if normal.shape != (h, w, 3) or rough.shape != (h, w) or metal.shape != (h, w):
            raise InvalidArgumentError("all material maps must share one resolution")
        for nm, arr in (("albedo", albedo), ("roughness", rough), ("metallic", metal)):
            if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
                raise InvalidArgumentError(f"{nm} values must be finite and in [0, 1]")
        if not np.all(np.isfinite(normal)):
            raise InvalidArgumentError("normal map must be finite")
        if np.max(np.abs(np.linalg.norm(normal, axis=-1) - 1.0)) > UNIT_TOL:
            raise InvalidArgumentError("decoded normals must have unit length")
        if not 0.0 <= self.specular <= 1.0:
            raise InvalidArgumentError("specular weight must lie in [0, 1]")
        for nm, arr in (("albedo", albedo), ("normal", normal), ("roughness", rough), ("metallic", metal)):
            arr.setflags(write=False)
            object.__setattr__(self, nm, arr)

    @property
    def resolution(self) -> int:
        return self.albedo.shape[0]

    @classmethod
    def constant(cls, resolution: int, albedo=(0.5, 0.5, 0.5), roughness=0.5,
                 metallic=0.0, specular: float = 1.0, name: str = "") -> "MaterialSet":
        r = int(resolution)
        return cls(
            albedo=np.broadcast_to(np.asarray(albedo, dtype=np.float64), (r, r, 3)).copy(),
            normal=np.broadcast_to(np.array([0.0, 0.0, 1.0]), (r, r, 3)).copy(),
            roughness=np.full((r, r), float(roughness)),
            metallic=np.full((r, r), float(metallic)),
            specular=specular,
            name=name,
        )


def load_material(directory: str | os.PathLike, name: str | None = None) -> MaterialSet:
    """Load ``albedo.png``, ``normal.png``, ``roughness.png``, ``metallic.png``.

    Missing normal/roughness/metallic maps default to flat, 0.5 and 0.
    """
    d = Path(directory)
    albedo = read_png(d / "albedo.png", srgb=True)
    if albedo.ndim == 2:
        albedo = np.repeat(albedo[..., None], 3, axis=2)
    albedo = albedo[..., :3]
    h, w = albedo.shape[:2]
    normal = (read_png(d / "normal.png", srgb=False)[..., :3] if (d / "normal.png").exists()
              else np.broadcast_to(np.array(FLAT_NORMAL_RGB), (h, w, 3)))

    def scalar_map(fname, default):
        if not (d / fname).exists():
            return np.full((h, w), default)
        m = read_png(d / fname, srgb=False)
        return m if m.ndim == 2 else m[..., 0]

    return MaterialSet(
        albedo=albedo,
        normal=decode_normals(normal),
        roughness=scalar_map("roughness.png", 0.5),
        metallic=scalar_map("metallic.png", 0.0),
        name=name or d.name,
    )


@dataclass(frozen=True)
class MaterialSample:
    albedo: np.ndarray
    normal: np.ndarray
    roughness: float
    metallic: float
    specular: float = 1.0


@dataclass(frozen=True)
class ShadingPoint:
    """Surface point with a tangent frame whose columns are (tangent, bitangent, normal)."""

    position: np.ndarray
    normal: np.ndarray
    frame: np.ndarray
    uv: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        if frame.shape != (3, 3) or not np.all(np.isfinite(frame)):
            raise InvalidArgumentError("tangent frame must be a finite 3x3 matrix")
        if np.max(np.abs(frame.T @ frame - np.eye(3))) > FRAME_TOL:
            raise InvalidArgumentError("degenerate tangent frame: not orthonormal")
        if abs(np.linalg.norm(n) - 1.0) > FRAME_TOL:
            raise InvalidArgumentError("geometric normal must be unit length")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "uv", np.asarray(self.uv, dtype=np.float64))

    @classmethod
    def from_normal(cls, position, normal, uv=(0.0, 0.0)) -> "ShadingPoint":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(position=position, normal=n, frame=frame_from_normal(n), uv=uv)


def frame_from_normal(n: np.ndarray) -> np.ndarray:
    """Orthonormal frame with ``n`` as third column (Duff et al. branchless basis)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return np.stack([t, bt, n], axis=-1)


# -- texture lookup -----------------------------------------------------------

def _bilinear_wrap(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup with wrap addressing; ``v`` grows upward (row 0 is v = 1)."""
    h, w = img.shape[:2]
    x = (u - np.floor(u)) * w - 0.5
    y = (1.0 - (v - np.floor(v))) * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = x0.astype(np.int64) % w
    iy0 = y0.astype(np.int64) % h
    ix1 = (ix0 + 1) % w
    iy1 = (iy0 + 1) % h
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[iy0, ix0] * (1.0 - fx) + img[iy0, ix1] * fx
    bot = img[iy1, ix0] * (1.0 - fx) + img[iy1, ix1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_material_batch(mat: MaterialSet, uv: np.ndarray, tiling_scale: float):
    """Vectorised lookup; returns (albedo, normal, roughness, metallic) arrays."""
    uv = np.asarray(uv, dtype=np.float64)
    s = uv * tiling_scale
    u, v = s[..., 0], s[..., 1]
    albedo = _bilinear_wrap(mat.albedo, u, v)
    normal = _bilinear_wrap(mat.normal, u, v)
    normal = normal / np.maximum(np.linalg.norm(normal, axis=-1, keepdims=True), 1e-12)
    rough = _bilinear_wrap(mat.roughness, u, v)
    metal = _bilinear_wrap(mat.metallic, u, v)
    return albedo, normal, rough, metal


def sample_material(mat: MaterialSet, uv, tiling_scale: float = 1.0) -> MaterialSample:
    uv = np.asarray(uv, dtype=np.float64)
    if uv.shape != (2,) or not np.all(np.isfinite(uv)):
        raise InvalidArgumentError("uv must be a finite 2-vector")
    if not (math.isfinite(tiling_scale) and tiling_scale > 0):
        raise InvalidArgumentError("tiling_scale must be positive")
    a, n, r, m = sample_material_batch(mat, uv, tiling_scale)
    return MaterialSample(albedo=a, normal=n, roughness=float(r), metallic=float(m),
                          specular=mat.specular)


# -- BRDF ----------------------------------------------------------------------

def ggx_ndf(n_dot_h, alpha):
    """GGX / Trowbridge-Reitz normal distribution.

    ``alpha`` is the perceptual parameter (the role roughness plays in the
    BRDF); the lobe width is ``alpha**2``, so ``ggx_ndf(1, a) == 1 / (pi a**4)``.
    """
    n_dot_h = np.asarray(n_dot_h, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~np.isfinite(n_dot_h)) or np.any(n_dot_h < 0.0) or np.any(n_dot_h > 1.0):
        raise InvalidArgumentError("n_dot_h must lie in [0, 1]")
    if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0.0) or np.any(alpha > 1.0):
        raise InvalidArgumentError("alpha must lie in (0, 1]")
    out = _ggx_d(n_dot_h, alpha * alpha)
    return float(out) if out.ndim == 0 else out


def _ggx_d(n_dot_h, alpha):
    a2 = alpha * alpha
    k = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * k * k)


def _smith_g1(n_dot_x, alpha):
    k = alpha * 0.5
    return n_dot_x / (n_dot_x * (1.0 - k) + k)


def brdf_terms(albedo, roughness, metallic, specular, n_dot_l, n_dot_v, n_dot_h, v_dot_h):
    """Evaluate f_r from precomputed cosines. Array arguments broadcast; albedo has a trailing RGB axis."""
    albedo = np.asarray(albedo, dtype=np.float64)
    roughness = np.asarray(roughness, dtype=np.float64)[..., None]
    metallic = np.asarray(metallic, dtype=np.float64)[..., None]
    specular = np.asarray(specular, dtype=np.float64)[..., None]
    nl = np.asarray(n_dot_l, dtype=np.float64)[..., None]
    nv = np.asarray(n_dot_v, dtype=np.float64)[..., None]
    nh = np.clip(np.asarray(n_dot_h, dtype=np.float64), 0.0, 1.0)[..., None]
    vh = np.clip(np.asarray(v_dot_h, dtype=np.float64), 0.0, 1.0)[..., None]

    alpha = np.maximum(roughness * roughness, 1e-4)
    diffuse = (1.0 - metallic) * albedo / np.pi
    f0 = 0.04 * (1.0 - metallic) + albedo * metallic
    fresnel = f0 + (1.0 - f0) * (1.0 - vh) ** 5
    d = _ggx_d(nh, alpha)
    g = _smith_g1(nl, alpha) * _smith_g1(nv, alpha)
    spec = d * fresnel * g / (4.0 * nl * nv + EPS_DIV)
    out = diffuse + specular * spec
    above = (nl >= 0.0) & (nv >= 0.0)
    return np.where(above, out, 0.0)


def _check_unit(name, vec):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (3,) or not np.all(np.isfinite(vec)) or abs(np.linalg.norm(vec) - 1.0) > UNIT_TOL:
        raise InvalidArgumentError(f"{name} must be a unit 3-vector")
    return vec


def eval_brdf(s: MaterialSample, l, v, n) -> np.ndarray:
    """f_r(l, v) in sr^-1 for one material sample about normal ``n``."""
    l = _check_unit("l", l)
    v = _check_unit("v", v)
    n = _check_unit("n", n)
    nl = float(n @ l)
    nv = float(n @ v)
    if nl < 0.0 or nv < 0.0:
        return np.zeros(3)
    h = l + v
    hn = np.linalg.norm(h)
    h = h / hn if hn > 0 else n
    # averaging v.h and l.h keeps the result bitwise symmetric under l <-> v
    vh = 0.5 * (float(v @ h) + float(l @ h))
    return brdf_terms(s.albedo, s.roughness, s.metallic, s.specular, nl, nv, float(n @ h), vh)


# -- lighting --------------------------------------------------------------

def cosine_hemisphere(u1, u2):
    """Cosine-weighted directions in the local frame (z up); pdf = cos(theta) / pi."""
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u1))], axis=-1)


def _shading_normals(frames: np.ndarray, mat_normals: np.ndarray) -> np.ndarray:
    n = np.einsum("...ij,...j->...i", frames, mat_normals)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def shade_batch(positions, frames, albedo, mat_normals, roughness, metallic, specular,
                lighting, view_dirs, spp: int, seed: int, stream_ids) -> np.ndarray:
    """Radiance toward ``view_dirs`` for N shading points (arrays with leading N axis).

    Environment lighting is integrated with ``spp`` cosine-weighted samples per
    point; random numbers are keyed by ``stream_ids`` so results do not depend
    on batching. Point lights are evaluated analytically.
    """
    positions = np.asarray(positions, dtype=np.float64)
    ns = _shading_normals(frames, mat_normals)
    v = np.asarray(view_dirs, dtype=np.float64)
    nv = np.einsum("...i,...i->...", ns, v)
    npts = positions.shape[0]
    spec_w = np.broadcast_to(np.asarray(specular, dtype=np.float64), (npts,))

    if isinstance(lighting, PointLight):
        to_l = np.asarray(lighting.position, dtype=np.float64) - positions
        dist2 = np.einsum("...i,...i->...", to_l, to_l)
        l = to_l / np.sqrt(dist2)[..., None]
        nl = np.einsum("...i,...i->...", ns, l)
        h = l + v
        h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
        f = brdf_terms(albedo, roughness, metallic, spec_w,
                       nl, nv, np.einsum("...i,...i->...", ns, h), np.einsum("...i,...i->...", v, h))
        irr = np.asarray(lighting.intensity, dtype=np.float64) / dist2[..., None]
        return f * irr * np.maximum(nl, 0.0)[..., None]

    if not isinstance(lighting, EnvironmentMap):
        raise InvalidArgumentError("lighting must be an EnvironmentMap or PointLight")
    if spp < 1:
        raise InvalidArgumentError("spp must be >= 1")
    acc = np.zeros((npts, 3))
    shading_frames = frame_from_normal(ns)
    streams = np.asarray(stream_ids, dtype=np.uint64)
    for k in range(spp):
        u1 = hashrng.uniform(seed, streams, 2 * k)
        u2 = hashrng.uniform(seed, streams, 2 * k + 1)
        local = cosine_hemisphere(u1, u2)
        l = np.einsum("...ij,...j->...i", shading_frames, local)
        nl = local[..., 2]
        h = l + v
        h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
        f = brdf_terms(albedo, roughness, metallic, spec_w,
                       nl, nv, np.einsum("...i,...i->...", ns, h), np.einsum("...i,...i->...", v, h))
        li = lighting.lookup(l)
        # estimator f * L * cos / (cos / pi)
        acc += np.pi * f * li
    return acc / spp


def shade(pt: ShadingPoint, s: MaterialSample, lighting, v, spp: int = 64, rng_seed: int = 0) -> np.ndarray:
    """Radiance leaving ``pt`` toward ``v``.

    ``lighting`` is an environment map (Monte Carlo over the cosine-weighted
    hemisphere around the shading normal) or a point light (single direction,
    inverse-square falloff).
    """
    v = _check_unit("v", v)
    if int(spp) < 1:
        raise InvalidArgumentError("spp must be >= 1")
    ns = _shading_normals(pt.frame, np.asarray(s.normal))
    if float(ns @ v) < 0.0:
        raise InvalidArgumentError("view direction is below the shading normal")
    out = shade_batch(pt.position[None], pt.frame[None], np.asarray(s.albedo)[None],
                      np.asarray(s.normal)[None], np.array([s.roughness]), np.array([s.metallic]),
                      s.specular, lighting, v[None], int(spp), int(rng_seed), np.array([0]))
    return out[0]
