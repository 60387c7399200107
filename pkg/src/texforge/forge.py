"""Paired (distorted capture, flat target) example construction and manifests."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CaptureError, ForgeError, InvalidArgumentError, ManifestError, TexforgeError
from .imageio import image_size, read_image, write_pfm, write_png
from .lighting import EnvironmentMap, PointLight
from .pbr import MaterialSet
from .scene import (GarmentMesh, capture_patch, frontal_camera, render_flat, render_garment,
                    resample_bilinear, uv_pixel_density)

log = logging.getLogger(__name__)

ROUGHNESS_MEAN = 0.708
ROUGHNESS_STD = 0.193
METALLIC_BETA_RANGE = (-0.05, 0.05)
PRINT_ROUGHNESS_RANGE = (0.4, 0.7)
PRINT_METALLIC_RANGE = (0.0, 0.3)
DARK_PRINT_MAX = 0.05
DARK_BACKGROUND_LUMA = 0.25
LUMA = np.array([0.2126, 0.7152, 0.0722])

SCHEMA_VERSION = 1


# -- materials -------------------------------------------------------------

def draw_pseudo_brdf_params(rng: np.random.Generator) -> tuple[float, float]:
    """Raw (unclamped) roughness and metallic-beta draws."""
    alpha = rng.normal(ROUGHNESS_MEAN, ROUGHNESS_STD)
    beta = rng.uniform(*METALLIC_BETA_RANGE)
    return float(alpha), float(beta)


def make_pseudo_brdf(albedo: np.ndarray, rng: np.random.Generator, name: str = "") -> MaterialSet:
    """Turn a color image into a material with sampled constant roughness/metallic and a flat normal."""
    albedo = np.asarray(albedo, dtype=np.float64)
    if not np.all(np.isfinite(albedo)) or albedo.min() < 0.0 or albedo.max() > 1.0:
        raise InvalidArgumentError("albedo values must lie in [0, 1]")
    alpha, beta = draw_pseudo_brdf_params(rng)
    r = albedo.shape[0]
    return MaterialSet(
        albedo=albedo,
        normal=np.broadcast_to(np.array([0.0, 0.0, 1.0]), (r, albedo.shape[1], 3)).copy(),
        roughness=np.full(albedo.shape[:2], min(max(alpha, 0.0), 1.0)),
        metallic=np.full(albedo.shape[:2], max(beta, 0.0)),
        name=name,
    )


def _uv_rect_to_texels(placement, res: int) -> tuple[int, int, int, int]:
    u0, v0, u1, v1 = placement
    c0, c1 = int(round(u0 * res)), int(round(u1 * res))
    r0, r1 = int(round((1.0 - v1) * res)), int(round((1.0 - v0) * res))
    return r0, r1, c0, c1


def prepare_print(print_rgba: np.ndarray, background: MaterialSet) -> np.ndarray:
    """Apply the dark-print rule: an all-black print on a dark background becomes white."""
    p = np.array(print_rgba, dtype=np.float64, copy=True)
    if p.ndim != 3 or p.shape[2] != 4:
        raise InvalidArgumentError("print must be an RGBA image")
    opaque = p[..., 3] > 0.5
    if opaque.any():
        print_max = p[..., :3][opaque].max()
        bg_luma = float((background.albedo @ LUMA).mean())
        if print_max < DARK_PRINT_MAX and bg_luma < DARK_BACKGROUND_LUMA:
            p[..., :3] = np.where(p[..., 3:4] > 0, 1.0, p[..., :3])
    return p


def make_print_material(print_rgba: np.ndarray, background: MaterialSet, placement,
                        rng: np.random.Generator, name: str = "") -> MaterialSet:
    """Composite an RGBA print onto ``background`` inside the uv rect ``placement``.

    Printed texels (alpha > 0) get a constant roughness from U(0.4, 0.7), a
    constant metallic from U(0, 0.3) and a flat normal.
    """
    u0, v0, u1, v1 = placement
    if not (0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0):
        raise InvalidArgumentError(f"placement {placement} must lie inside [0, 1]^2")
    res = background.resolution
    r0, r1, c0, c1 = _uv_rect_to_texels(placement, res)
    if r1 <= r0 or c1 <= c0:
        raise InvalidArgumentError("placement is smaller than one texel")
    p = prepare_print(print_rgba, background)
    if p.shape[:2] != (r1 - r0, c1 - c0):
        p = np.clip(resample_bilinear(p, c1 - c0, r1 - r0), 0.0, 1.0)
    rough_v = rng.uniform(*PRINT_ROUGHNESS_RANGE)
    metal_v = rng.uniform(*PRINT_METALLIC_RANGE)

    albedo = background.albedo.copy()
    normal = background.normal.copy()
    rough = background.roughness.copy()
    metal = background.metallic.copy()
    a = p[..., 3:4]
    region = albedo[r0:r1, c0:c1]
    albedo[r0:r1, c0:c1] = a * p[..., :3] + (1.0 - a) * region
    printed = np.zeros(rough.shape, dtype=bool)
    printed[r0:r1, c0:c1] = p[..., 3] > 0
    rough[printed] = rough_v
    metal[printed] = metal_v
    normal[printed] = (0.0, 0.0, 1.0)
    return MaterialSet(albedo, normal, rough, metal, specular=background.specular, name=name)


def encode_print_target(print_rgba: np.ndarray) -> np.ndarray:
    """RGB training target whose alpha extraction recovers the print.

    Opaque pixels map to 0.1 + 0.9 * rgb, transparent ones to 0, so the
    threshold rule in ``postprocess.extract_alpha`` inverts it.
    """
    a = print_rgba[..., 3:4]
    return a * (0.1 + 0.9 * print_rgba[..., :3])


# -- procedural assets ---------------------------------------------------------

ALBEDO_KINDS = ("solid", "stripes", "checkers", "dots", "noise")


def _color(rng) -> np.ndarray:
    return rng.uniform(0.05, 0.95, size=3)


_STRIPE_DIRECTIONS = ((1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1))


def procedural_albedo(kind: str, resolution: int, rng: np.random.Generator) -> np.ndarray:
    """Tileable albedo patterns; every pattern has an integer number of periods per tile."""
    r = int(resolution)
    yy, xx = np.meshgrid((np.arange(r) + 0.5) / r, (np.arange(r) + 0.5) / r, indexing="ij")
    c1, c2 = _color(rng), _color(rng)
    if kind == "solid":
        return np.broadcast_to(c1, (r, r, 3)).copy()
    if kind in ("stripes", "checkers", "dots"):
        # A random circular shift keeps the tile periodic but stops pattern
        # edges from always landing on the tile border.
        off = rng.uniform(0.0, 1.0, size=2)
        xx, yy = (xx + off[0]) % 1.0, (yy + off[1]) % 1.0
    if kind == "stripes":
        # Oblique integer wave vectors keep the tile periodic and make the
        # stripe phase vary along the border, so no seam is special.
        a, b = _STRIPE_DIRECTIONS[int(rng.integers(0, len(_STRIPE_DIRECTIONS)))]
        periods = int(rng.integers(2, 4))
        duty = rng.uniform(0.35, 0.65)
        m = ((periods * (a * xx + b * yy)) % 1.0) < duty
    elif kind == "checkers":
        periods = int(rng.integers(2, 5))
        m = ((np.floor(xx * periods) + np.floor(yy * periods)) % 2) == 0
    elif kind == "dots":
        periods = int(rng.integers(2, 5))
        fx = (xx * periods) % 1.0 - 0.5
        fy = (yy * periods) % 1.0 - 0.5
        m = fx * fx + fy * fy < rng.uniform(0.05, 0.12)
    elif kind == "noise":
        acc = np.zeros((r, r))
        for octave in range(1, 4):
            f = 2 ** octave
            ph = rng.uniform(0, 2 * np.pi, size=4)
            acc += (np.sin(2 * np.pi * f * xx + ph[0]) * np.cos(2 * np.pi * f * yy + ph[1])
                    + np.sin(2 * np.pi * f * (xx + yy) + ph[2])) / octave
        t = (acc - acc.min()) / max(np.ptp(acc), 1e-9)
        return t[..., None] * c1 + (1 - t[..., None]) * c2
    else:
        raise InvalidArgumentError(f"unknown albedo kind {kind!r}; choose from {ALBEDO_KINDS}")
    return np.where(m[..., None], c1, c2)


def procedural_print(resolution: int, rng: np.random.Generator) -> np.ndarray:
    """Simple logo-like RGBA print with a binary alpha."""
    r = int(resolution)
    yy, xx = np.meshgrid((np.arange(r) + 0.5) / r - 0.5, (np.arange(r) + 0.5) / r - 0.5, indexing="ij")
    shape = int(rng.integers(0, 3))
    rad = np.hypot(xx, yy)
    if shape == 0:
        m = rad < 0.4
    elif shape == 1:
        m = (rad < 0.42) & (rad > 0.25)
    else:
        m = (np.abs(xx) < 0.12) | (np.abs(yy) < 0.12)
        m &= rad < 0.45
    out = np.zeros((r, r, 4))
    out[..., :3] = np.where(m[..., None], _color(rng), 0.0)
    out[..., 3] = m.astype(np.float64)
    return out


@dataclass
class MaterialAsset:
    id: str
    material: MaterialSet
    kind: str = "texture"
    print_rgba: np.ndarray | None = None
    placement: tuple[float, float, float, float] | None = None


def procedural_library(kinds: Sequence[str], count: int, resolution: int, seed: int,
                       prefix: str = "mat", print_count: int = 0, patch_size: int = 32,
                       print_fraction: float = 0.25,
                       print_region: tuple[float, float] = (0.3, 0.7)) -> list[MaterialAsset]:
    """Pseudo-BRDF materials cycling through ``kinds``, plus optional print materials.

    Print placements are uniform over ``print_region`` (in both u and v).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A7]))
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        mid = f"{prefix}-{kind}-{i:04d}"
        albedo = procedural_albedo(kind, resolution, rng)
        out.append(MaterialAsset(mid, make_pseudo_brdf(albedo, rng, name=mid)))
    for i in range(print_count):
        mid = f"{prefix}-print-{i:04d}"
        # the print occupies print_fraction of the background tile edge, at native resolution
        bg_res = int(round(patch_size / print_fraction))
        bg = make_pseudo_brdf(procedural_albedo("solid", bg_res, rng), rng, name=mid)
        size = patch_size / bg_res
        lo, hi = print_region
        u0 = rng.uniform(lo, hi - size)
        v0 = rng.uniform(lo, hi - size)
        placement = (u0, v0, u0 + size, v0 + size)
        p = prepare_print(procedural_print(patch_size, rng), bg)
        mat = make_print_material(p, bg, placement, rng, name=mid)
        out.append(MaterialAsset(mid, mat, kind="print", print_rgba=p, placement=placement))
    return out


# -- pair forging ------------------------------------------------------------------

@dataclass
class ForgeConfig:
    patch_size: int = 32
    pairs_per_material: int = 20
    tiling_range: tuple[float, float] = (2.5, 4.0)
    crop_range: tuple[int, int] | None = None
    split: str = "train"
    seed: int = 0
    render_size: int = 96
    garment_spp: int = 16
    flat_spp: int = 1
    light_height: float = 10.0
    max_skip_fraction: float = 0.10

    def __post_init__(self):
        if self.patch_size < 8:
            raise InvalidArgumentError("patch_size must be >= 8")
        if self.pairs_per_material < 1:
            raise InvalidArgumentError("pairs_per_material must be >= 1")
        lo, hi = self.tiling_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError("tiling_range must be a nonempty positive interval")
        if self.crop_range is not None and not 1 <= self.crop_range[0] <= self.crop_range[1]:
            raise InvalidArgumentError("crop_range must be a nonempty interval")
        if self.split not in ("train", "test"):
            raise InvalidArgumentError("split must be train or test")
        self.tiling_range = (float(lo), float(hi))
        if self.crop_range is not None:
            self.crop_range = (int(self.crop_range[0]), int(self.crop_range[1]))


@dataclass
class PairedExample:
    id: str
    kind: str
    condition: np.ndarray
    target: np.ndarray
    material_id: str
    mesh_id: str
    env_id: str
    tiling_scale: float
    crop: tuple[int, int, int, int]
    seed: int
    target_rgba: np.ndarray | None = None


@dataclass
class ForgeStats:
    emitted: int = 0
    skipped: int = 0
    failures: list[dict] = field(default_factory=list)
    per_kind: dict[str, int] = field(default_factory=dict)


def _valid_crops(coverage: np.ndarray, size: int, min_cov: float) -> np.ndarray:
    h, w = coverage.shape
    if size > h or size > w:
        return np.zeros((0, 2), dtype=int)
    ii = np.pad(np.cumsum(np.cumsum(coverage.astype(np.int64), 0), 1), ((1, 0), (1, 0)))
    s = ii[size:, size:] - ii[:-size, size:] - ii[size:, :-size] + ii[:-size, :-size]
    ys, xs = np.nonzero(s >= min_cov * size * size)
    return np.stack([xs, ys], 1)


def _flat_target(mat: MaterialSet, cfg: ForgeConfig, light: PointLight, seed: int) -> np.ndarray:
    return render_flat(mat, cfg.patch_size, light, spp=cfg.flat_spp, seed=seed)


def _forge_one(asset: MaterialAsset, meshes, envs, cfg: ForgeConfig, seed: int, ex_id: str) -> PairedExample:
    rng = np.random.default_rng(seed)
    mesh = meshes[int(rng.integers(len(meshes)))]
    env = envs[int(rng.integers(len(envs)))]
    light = PointLight.calibrated(cfg.light_height)
    if asset.kind == "print":
        tiling = 1.0
    else:
        tiling = float(rng.uniform(*cfg.tiling_range))
    cam = frontal_camera(mesh, cfg.render_size)
    render = render_garment(mesh, asset.material, tiling, env, cam, spp=cfg.garment_spp, seed=seed)

    if asset.kind == "print":
        u0, v0, u1, v1 = asset.placement
        uv = render.uv
        inside = render.coverage & (uv[..., 0] >= u0) & (uv[..., 0] <= u1) & (uv[..., 1] >= v0) & (uv[..., 1] <= v1)
        if not inside.any():
            raise CaptureError("print placement is not visible")
        ys, xs = np.nonzero(inside)
        size = max(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
        cx = (xs.max() + xs.min() + 1) // 2
        cy = (ys.max() + ys.min() + 1) // 2
        x0 = int(np.clip(cx - size // 2, 0, cfg.render_size - size))
        y0 = int(np.clip(cy - size // 2, 0, cfg.render_size - size))
        crop = (x0, y0, int(size), int(size))
        condition = capture_patch(render, crop, cfg.patch_size)
        target_rgba = asset.print_rgba
        if target_rgba.shape[:2] != (cfg.patch_size, cfg.patch_size):
            target_rgba = np.clip(resample_bilinear(target_rgba, cfg.patch_size, cfg.patch_size), 0, 1)
        target = encode_print_target(target_rgba)
        return PairedExample(ex_id, "print", condition, target, asset.id, mesh.name, env.name,
                             tiling, crop, seed, target_rgba=target_rgba)

    if cfg.crop_range is not None:
        size = int(rng.integers(cfg.crop_range[0], cfg.crop_range[1] + 1))
    else:
        # one material tile as seen on the garment
        size = int(round(uv_pixel_density(render) / tiling))
    size = int(np.clip(size, 4, cfg.render_size))
    cands = _valid_crops(render.coverage, size, 0.95)
    if len(cands) == 0:
        raise CaptureError(f"no {size}px crop with >= 95% garment coverage")
    x0, y0 = cands[int(rng.integers(len(cands)))]
    crop = (int(x0), int(y0), size, size)
    condition = capture_patch(render, crop, cfg.patch_size)
    target = _flat_target(asset.material, cfg, light, seed)
    again = _flat_target(asset.material, cfg, light, seed)
    if hashlib.sha256(target.tobytes()).digest() != hashlib.sha256(again.tobytes()).digest():
        raise ForgeError(f"flat render of {asset.id} is not reproducible")
    return PairedExample(ex_id, "texture", condition, target, asset.id, mesh.name, env.name,
                         tiling, crop, seed)


def example_seed(seed: int, material_index: int, pair_index: int) -> int:
    return int(np.random.SeedSequence([seed, material_index, pair_index]).generate_state(1)[0])


def forge_pairs(materials: Sequence[MaterialAsset | MaterialSet], meshes: Sequence[GarmentMesh],
                envs: Sequence[EnvironmentMap], cfg: ForgeConfig,
                stats: ForgeStats | None = None) -> Iterator[PairedExample]:
    """Yield ``pairs_per_material`` examples per material, deterministically from ``cfg.seed``.

    Pairs whose render or capture fails are skipped and counted; exceeding
    ``cfg.max_skip_fraction`` raises ForgeError naming the failing material.
    """
    if not materials or not meshes or not envs:
        raise ForgeError("materials, meshes and environments must all be nonempty")
    stats = stats if stats is not None else ForgeStats()
    assets = [m if isinstance(m, MaterialAsset) else MaterialAsset(m.name or f"mat{i}", m)
              for i, m in enumerate(materials)]
    total = len(assets) * cfg.pairs_per_material
    for mi, asset in enumerate(assets):
        for pj in range(cfg.pairs_per_material):
            seed = example_seed(cfg.seed, mi, pj)
            ex_id = f"{cfg.split}-{mi:04d}-{pj:03d}"
            try:
                ex = _forge_one(asset, meshes, envs, cfg, seed, ex_id)
            except ForgeError:
                raise
            except TexforgeError as exc:
                stats.skipped += 1
                stats.failures.append({"id": ex_id, "material_id": asset.id, "error": str(exc)})
                log.warning("skipping %s (%s): %s", ex_id, asset.id, exc)
                if stats.skipped > cfg.max_skip_fraction * total:
                    raise ForgeError(f"too many skipped pairs; last failure in material {asset.id}: {exc}") from exc
                continue
            stats.emitted += 1
            stats.per_kind[ex.kind] = stats.per_kind.get(ex.kind, 0) + 1
            yield ex


# -- manifests -----------------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    kind: str
    condition_path: str
    target_path: str
    material_id: str
    mesh_id: str
    env_id: str
    tiling_scale: float
    crop: tuple[int, int, int, int]
    seed: int
    target_rgba_path: str | None = None

    def to_json(self) -> dict:
        d = {
            "id": self.id, "kind": self.kind, "condition_path": self.condition_path,
            "target_path": self.target_path, "material_id": self.material_id, "mesh_id": self.mesh_id,
            "env_id": self.env_id, "tiling_scale": self.tiling_scale, "crop": list(self.crop),
            "seed": self.seed,
        }
        if self.target_rgba_path is not None:
            d["target_rgba_path"] = self.target_rgba_path
        return d


@dataclass
class Dataset:
    root: Path
    split: str
    entries: list[ManifestEntry]

    def __len__(self):
        return len(self.entries)

    def load(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(condition, target) as linear float images in [0, 1]."""
        e = self.entries[i]
        cond = read_image(self.root / e.condition_path)[..., :3]
        tgt = read_image(self.root / e.target_path)
        return np.clip(cond, 0.0, 1.0), np.clip(tgt, 0.0, 1.0)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.load(i) for i in range(len(self))]
        if not pairs:
            return np.zeros((0, 0, 0, 3)), np.zeros((0, 0, 0, 3))
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.split == other.split
                and [e.to_json() for e in self.entries] == [e.to_json() for e in other.entries])


def write_manifest(examples: Iterable[PairedExample], path: str | os.PathLike, split: str = "train") -> Dataset:
    """Write images next to ``path`` (under ``images/``) and the JSON manifest itself."""
    path = Path(path)
    root = path.parent
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ex in examples:
        cond_rel = f"images/{ex.id}_cond.png"
        tgt_rel = f"images/{ex.id}_target.pfm"
        write_png(root / cond_rel, ex.condition)
        write_pfm(root / tgt_rel, ex.target)
        rgba_rel = None
        if ex.target_rgba is not None:
            rgba_rel = f"images/{ex.id}_target_rgba.png"
            write_png(root / rgba_rel, ex.target_rgba, srgb=False)
        entries.append(ManifestEntry(ex.id, ex.kind, cond_rel, tgt_rel, ex.material_id, ex.mesh_id,
                                     ex.env_id, float(ex.tiling_scale), tuple(int(c) for c in ex.crop),
                                     int(ex.seed), rgba_rel))
    doc = {"schema_version": SCHEMA_VERSION, "split": split, "examples": [e.to_json() for e in entries]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return Dataset(root, split, entries)


def read_manifest(path: str | os.PathLike) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(f"unsupported schema_version {doc.get('schema_version')!r}")
    root = path.parent
    entries = []
    for raw in doc.get("examples", []):
        try:
            e = ManifestEntry(raw["id"], raw["kind"], raw["condition_path"], raw["target_path"],
                              raw["material_id"], raw["mesh_id"], raw["env_id"], float(raw["tiling_scale"]),
                              tuple(int(c) for c in raw["crop"]), int(raw["seed"]), raw.get("target_rgba_path"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"entry {raw.get('id', '?')}: malformed ({exc})") from exc
        sizes = []
        for rel in filter(None, (e.condition_path, e.target_path, e.target_rgba_path)):
            f = root / rel
            if not f.is_file():
                raise ManifestError(f"entry {e.id}: missing file {f}")
            sizes.append(image_size(f))
        if len(set(sizes)) != 1:
            raise ManifestError(f"entry {e.id}: resolution mismatch {sizes}")
        entries.append(e)
    return Dataset(root, doc.get("split", "train"), entries)
