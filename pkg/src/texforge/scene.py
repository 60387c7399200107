"""Garment meshes, cameras, and the two renders used to build training pairs.

``render_garment`` rasterizes a draped mesh and shades it against an
environment map; ``render_flat`` renders exactly one material tile on a plane
under a point light, seen from an orthographic top-down camera.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hashrng
from .errors import CaptureError, InvalidArgumentError, MeshParseError
from .lighting import EnvironmentMap, PointLight
from .pbr import MaterialSet, frame_from_normal, sample_material_batch, shade_batch


@dataclass(frozen=True, eq=False)
class GarmentMesh:
    positions: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray
    triangles: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(tris) == 0:
            raise InvalidArgumentError("mesh has no triangles")
        n = len(pos)
        if len(nrm) != n or len(uvs) != n:
            raise InvalidArgumentError("positions, normals and uvs must have equal length")
        if tris.min() < 0 or tris.max() >= n:
            raise InvalidArgumentError("triangle index out of range")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(uvs)):
            raise InvalidArgumentError("positions and uvs must be finite")
        if np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-3:
            raise InvalidArgumentError("vertex normals must be unit length")
        for nm, arr in (("positions", pos), ("normals", nrm), ("uvs", uvs), ("triangles", tris)):
            arr.setflags(write=False)
            object.__setattr__(self, nm, arr)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)


def vertex_normals(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (the unnormalized face cross product is 2x area)."""
    p = positions[triangles]
    face = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    out = np.zeros_like(positions)
    for k in range(3):
        np.add.at(out, triangles[:, k], face)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    fallback = np.array([0.0, 0.0, 1.0])
    return np.where(norm > 1e-12, out / np.maximum(norm, 1e-300), fallback)


def _obj_index(token: str, count: int, line: int) -> int:
    try:
        i = int(token)
    except ValueError:
        raise MeshParseError(line, f"bad index {token!r}") from None
    if i == 0:
        raise MeshParseError(line, "index 0 is invalid (OBJ indices are 1-based)")
    j = i - 1 if i > 0 else count + i
    if not 0 <= j < count:
        raise MeshParseError(line, f"index {i} out of range (have {count})")
    return j


def load_mesh(obj_text: bytes | str, name: str = "mesh") -> GarmentMesh:
    """Parse the v/vt/vn/f subset of Wavefront OBJ.

    Corners are de-duplicated on their (v, vt, vn) triple, polygons are fan
    triangulated, and vertices without normals get area-weighted normals.
    """
    if isinstance(obj_text, bytes):
        obj_text = obj_text.decode("utf-8", errors="replace")
    vs: list[tuple[float, ...]] = []
    vts: list[tuple[float, ...]] = []
    vns: list[tuple[float, ...]] = []
    corner_ids: dict[tuple[int, int, int], int] = {}
    corners: list[tuple[int, int, int]] = []
    tris: list[tuple[int, int, int]] = []

    def floats(parts, k, lineno, what):
        if len(parts) < k + 1:
            raise MeshParseError(lineno, f"{what} record needs {k} values")
        try:
            vals = tuple(float(x) for x in parts[1 : k + 1])
        except ValueError:
            raise MeshParseError(lineno, f"non-numeric {what} record") from None
        if not all(math.isfinite(x) for x in vals):
            raise MeshParseError(lineno, f"non-finite {what} record")
        return vals

    for lineno, raw in enumerate(obj_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            vs.append(floats(parts, 3, lineno, "v"))
        elif tag == "vt":
            vts.append(floats(parts, 2, lineno, "vt"))
        elif tag == "vn":
            vns.append(floats(parts, 3, lineno, "vn"))
        elif tag == "f":
            if len(parts) < 4:
                raise MeshParseError(lineno, "face needs at least 3 vertices")
            face = []
            for tok in parts[1:]:
                fields_ = tok.split("/")
                if len(fields_) > 3:
                    raise MeshParseError(lineno, f"bad face vertex {tok!r}")
                vi = _obj_index(fields_[0], len(vs), lineno)
                if len(fields_) < 2 or fields_[1] == "":
                    raise MeshParseError(lineno, "face vertex has no UV (vt) index")
                ti = _obj_index(fields_[1], len(vts), lineno)
                ni = _obj_index(fields_[2], len(vns), lineno) if len(fields_) == 3 and fields_[2] else -1
                key = (vi, ti, ni)
                if key not in corner_ids:
                    corner_ids[key] = len(corners)
                    corners.append(key)
                face.append(corner_ids[key])
            for k in range(1, len(face) - 1):
                tris.append((face[0], face[k], face[k + 1]))
        elif tag in ("o", "g", "s", "usemtl", "mtllib", "l", "p"):
            continue
        else:
            raise MeshParseError(lineno, f"unsupported record {tag!r}")
    if not tris:
        raise MeshParseError(0, "no faces")
    vs_a = np.asarray(vs, dtype=np.float64)
    tri_a = np.asarray(tris, dtype=np.int64)
    pos = vs_a[[c[0] for c in corners]]
    uvs = np.asarray(vts, dtype=np.float64)[[c[1] for c in corners]]
    # normals: explicit where given, else accumulated over shared positions
    pos_tris = np.asarray([[corners[c][0] for c in t] for t in tris], dtype=np.int64)
    computed = vertex_normals(vs_a, pos_tris)
    nrm = np.empty_like(pos)
    vns_a = np.asarray(vns, dtype=np.float64).reshape(-1, 3)
    for i, (vi, _, ni) in enumerate(corners):
        if ni >= 0:
            n = vns_a[ni]
            ln = np.linalg.norm(n)
            nrm[i] = n / ln if ln > 1e-12 else computed[vi]
        else:
            nrm[i] = computed[vi]
    return GarmentMesh(pos, nrm, uvs, tri_a, name=name)


def mesh_to_obj(mesh: GarmentMesh) -> str:
    out = [f"# {mesh.name}"]
    out += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.positions]
    out += [f"vt {u:.9g} {v:.9g}" for u, v in mesh.uvs]
    out += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.normals]
    out += ["f " + " ".join(f"{i + 1}/{i + 1}/{i + 1}" for i in t) for t in mesh.triangles]
    return "\n".join(out) + "\n"


# -- procedural draped garments ---------------------------------------------

GARMENT_PRESETS = ("drape", "tube", "pleats", "bulge")


def _grid(n: int):
    s = np.linspace(0.0, 1.0, n + 1)
    u, v = np.meshgrid(s, s, indexing="xy")
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return u.ravel(), v.ravel(), tris


def procedural_garment(kind: str, resolution: int = 32) -> GarmentMesh:
    """Small pre-draped surfaces standing in for garment meshes, facing +Z."""
    u, v, tris = _grid(resolution)
    x = 2.0 * u - 1.0
    y = 2.0 * v - 1.0
    uv = np.stack([u, v], 1)
    if kind == "drape":
        z = 0.12 * np.sin(3.0 * x + 1.3 * y) + 0.08 * np.cos(5.0 * y - 0.7 * x)
        pos = np.stack([x, y, z], 1)
        uv = np.stack([u + 0.06 * np.sin(2.0 * np.pi * v), v + 0.04 * np.sin(2.0 * np.pi * u)], 1)
    elif kind == "tube":
        a = x * 1.2
        pos = np.stack([np.sin(a), y, np.cos(a) - 1.0], 1)
    elif kind == "pleats":
        z = 0.1 * np.sin(8.0 * x) * (0.6 + 0.4 * v)
        pos = np.stack([x * (0.85 + 0.15 * v), y, z], 1)
    elif kind == "bulge":
        z = 0.45 * np.exp(-1.5 * (x * x + y * y)) + 0.05 * np.sin(6.0 * y)
        pos = np.stack([x, y, z], 1)
    else:
        raise InvalidArgumentError(f"unknown garment preset {kind!r}; choose from {GARMENT_PRESETS}")
    # face winding is counter-clockwise seen from +Z
    nrm = vertex_normals(pos, tris)
    return GarmentMesh(pos, nrm, uv, tris, name=kind)


# -- camera and rasterization --------------------------------------------------

@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole or orthographic camera looking down its local -Z axis.

    ``rotation`` columns are the camera right, up and backward axes in world
    space. ``fov_y`` is the perspective vertical field of view in degrees;
    ``ortho_half_height`` is the half extent of the orthographic view.
    """

    kind: str
    rotation: np.ndarray
    position: np.ndarray
    width: int
    height: int
    fov_y: float = 35.0
    ortho_half_height: float = 1.0

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if self.kind not in ("perspective", "orthographic"):
            raise InvalidArgumentError("camera kind must be perspective or orthographic")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError("image dimensions must be >= 1")
        if rot.shape != (3, 3) or np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-5:
            raise InvalidArgumentError("camera rotation must be orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))

    def project(self, pts: np.ndarray):
        """World points -> (pixel x, pixel y, view depth)."""
        pc = (np.asarray(pts) - self.position) @ self.rotation
        depth = -pc[:, 2]
        aspect = self.width / self.height
        if self.kind == "perspective":
            t = math.tan(math.radians(self.fov_y) / 2.0)
            safe = np.where(depth > 1e-9, depth, 1e-9)
            xn = pc[:, 0] / (safe * t * aspect)
            yn = pc[:, 1] / (safe * t)
        else:
            xn = pc[:, 0] / (self.ortho_half_height * aspect)
            yn = pc[:, 1] / self.ortho_half_height
        return (xn + 1.0) * 0.5 * self.width, (1.0 - yn) * 0.5 * self.height, depth

    def view_dirs(self, pts: np.ndarray) -> np.ndarray:
        """Unit directions from surface points toward the camera."""
        if self.kind == "orthographic":
            return np.broadcast_to(self.rotation[:, 2], np.shape(pts)).copy()
        d = self.position - pts
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


CAMERA_PRESETS = ("front", "front_ortho", "three_quarter")


def frontal_camera(mesh: GarmentMesh, size: int = 96, preset: str = "front",
                   fov_y: float = 35.0, margin: float = 1.0) -> Camera:
    """Camera on the +Z side of the mesh bounding box, looking at its center.

    ``margin`` < 1 zooms in so the garment fills the frame.
    """
    lo, hi = mesh.bounds
    center = 0.5 * (lo + hi)
    half = 0.5 * max(hi[0] - lo[0], hi[1] - lo[1]) * margin
    if preset == "front_ortho":
        return Camera("orthographic", np.eye(3), center + np.array([0.0, 0.0, 10.0]),
                      size, size, ortho_half_height=half)
    if preset not in ("front", "three_quarter"):
        raise InvalidArgumentError(f"unknown camera preset {preset!r}; choose from {CAMERA_PRESETS}")
    dist = half / math.tan(math.radians(fov_y) / 2.0) + (hi[2] - center[2])
    if preset == "front":
        rot = np.eye(3)
    else:
        a = math.radians(30.0)
        rot = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])
    pos = center + rot[:, 2] * dist
    return Camera("perspective", rot, pos, size, size, fov_y=fov_y)


@dataclass
class GBuffer:
    tri: np.ndarray       # (H, W) triangle id, -1 for background
    bary: np.ndarray      # (H, W, 3) perspective-correct barycentrics
    depth: np.ndarray     # (H, W) view depth


def rasterize(mesh: GarmentMesh, cam: Camera) -> GBuffer:
    """Z-buffered rasterization sampling pixel centers; both windings are drawn."""
    w, h = cam.width, cam.height
    sx, sy, depth = cam.project(mesh.positions)
    zbuf = np.full((h, w), np.inf)
    tri_id = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    near = 1e-6
    for t, (i0, i1, i2) in enumerate(mesh.triangles):
        d = depth[[i0, i1, i2]]
        if np.any(d <= near):
            continue
        x = sx[[i0, i1, i2]]
        y = sy[[i0, i1, i2]]
        xmin = max(int(math.floor(x.min() - 0.5)), 0)
        xmax = min(int(math.ceil(x.max() - 0.5)), w - 1)
        ymin = max(int(math.floor(y.min() - 0.5)), 0)
        ymax = min(int(math.ceil(y.max() - 0.5)), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        area = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
        if abs(area) < 1e-12:
            continue
        px, py = np.meshgrid(np.arange(xmin, xmax + 1) + 0.5, np.arange(ymin, ymax + 1) + 0.5)
        b0 = ((x[1] - px) * (y[2] - py) - (x[2] - px) * (y[1] - py)) / area
        b1 = ((x[2] - px) * (y[0] - py) - (x[0] - px) * (y[2] - py)) / area
        b2 = 1.0 - b0 - b1
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not inside.any():
            continue
        # perspective-correct weights
        q0, q1, q2 = b0 / d[0], b1 / d[1], b2 / d[2]
        qs = q0 + q1 + q2
        z = 1.0 / qs
        sub = zbuf[ymin : ymax + 1, xmin : xmax + 1]
        win = inside & (z < sub)
        if not win.any():
            continue
        sub[win] = z[win]
        tri_id[ymin : ymax + 1, xmin : xmax + 1][win] = t
        bsub = bary[ymin : ymax + 1, xmin : xmax + 1]
        bsub[win] = np.stack([q0[win], q1[win], q2[win]], -1) / qs[win][:, None]
    return GBuffer(tri_id, bary, zbuf)


def interpolate(attr: np.ndarray, tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of per-vertex ``attr`` over triangles ``tri`` (N, 3)."""
    a = attr[tri]
    return bary[:, 0:1] * a[:, 0] + bary[:, 1:2] * a[:, 1] + bary[:, 2:3] * a[:, 2]


def _triangle_tangents(mesh: GarmentMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-triangle dP/du, dP/dv and a validity flag."""
    p = mesh.positions[mesh.triangles]
    t = mesh.uvs[mesh.triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    d1, d2 = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)[:, None]
    dpdu = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) * inv
    dpdv = (e2 * d1[:, 0:1] - e1 * d2[:, 0:1]) * inv
    return dpdu, dpdv, ok


def shading_frames(normals: np.ndarray, dpdu: np.ndarray, dpdv: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Orthonormal (tangent, bitangent, normal) frames aligned with increasing u and v."""
    t = dpdu - np.sum(dpdu * normals, -1, keepdims=True) * normals
    tn = np.linalg.norm(t, axis=-1, keepdims=True)
    good = ok & (tn[:, 0] > 1e-12)
    t = t / np.maximum(tn, 1e-300)
    b = np.cross(normals, t)
    flip = np.sum(b * dpdv, -1) < 0
    b[flip] *= -1.0
    frames = np.stack([t, b, normals], -1)
    if not good.all():
        frames[~good] = frame_from_normal(normals[~good])
    return frames


@dataclass
class Render:
    """Linear RGB image with a per-pixel coverage mask and UV buffer."""

    rgb: np.ndarray
    coverage: np.ndarray
    uv: np.ndarray

    @property
    def shape(self):
        return self.rgb.shape


def render_garment(mesh: GarmentMesh, mat: MaterialSet, tiling_scale: float, env: EnvironmentMap,
                   cam: Camera, spp: int = 16, seed: int = 0) -> Render:
    """Direct-lighting render of ``mesh`` wearing ``mat`` (no shadows, no bounces)."""
    if len(mesh.triangles) == 0:
        raise InvalidArgumentError("empty mesh")
    if spp < 1:
        raise InvalidArgumentError("spp must be >= 1")
    if not tiling_scale > 0:
        raise InvalidArgumentError("tiling_scale must be positive")
    g = rasterize(mesh, cam)
    h, w = g.tri.shape
    rgb = np.zeros((h, w, 3))
    uvbuf = np.full((h, w, 2), np.nan)
    cov = g.tri >= 0
    if not cov.any():
        return Render(rgb, cov, uvbuf)
    pix = np.flatnonzero(cov.ravel())
    tid = g.tri.ravel()[pix]
    bary = g.bary.reshape(-1, 3)[pix]
    tri = mesh.triangles[tid]
    pos = interpolate(mesh.positions, tri, bary)
    nrm = interpolate(mesh.normals, tri, bary)
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
    uv = interpolate(mesh.uvs, tri, bary)
    view = cam.view_dirs(pos)
    # two-sided: shade the side facing the camera
    back = np.sum(nrm * view, -1) < 0
    nrm[back] *= -1.0
    dpdu, dpdv, ok = _triangle_tangents(mesh)
    frames = shading_frames(nrm, dpdu[tid], dpdv[tid], ok[tid])
    albedo, mnorm, rough, metal = sample_material_batch(mat, uv, tiling_scale)
    # keep perturbed normals in the visible hemisphere
    mnorm[:, 2] = np.maximum(mnorm[:, 2], 1e-3)
    mnorm /= np.linalg.norm(mnorm, axis=-1, keepdims=True)
    out = np.empty((len(pix), 3))
    chunk = 8192
    for s in range(0, len(pix), chunk):
        e = slice(s, s + chunk)
        out[e] = shade_batch(pos[e], frames[e], albedo[e], mnorm[e], rough[e], metal[e], mat.specular,
                             env, view[e], spp, seed, pix[e])
    rgb.reshape(-1, 3)[pix] = out
    uvbuf.reshape(-1, 2)[pix] = uv
    return Render(rgb, cov, uvbuf)


def render_flat(mat: MaterialSet, resolution: int, light: PointLight | None = None,
                spp: int = 1, seed: int = 0) -> np.ndarray:
    """Top-down orthographic render of one material tile on the plane z = 0.

    The plane spans [-0.5, 0.5]^2 with uv = (x + 0.5, y + 0.5). ``spp`` > 1
    averages jittered sub-pixel positions; ``spp`` = 1 samples pixel centers.
    """
    light = light or PointLight.calibrated()
    if light.position[2] <= 0.0:
        raise InvalidArgumentError("light must be strictly above the plane")
    r = int(resolution)
    if r < 1 or spp < 1:
        raise InvalidArgumentError("resolution and spp must be >= 1")
    rows, cols = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    pix = (rows * r + cols).ravel()
    frames = np.broadcast_to(np.eye(3), (r * r, 3, 3))
    view = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (r * r, 3))
    acc = np.zeros((r * r, 3))
    for k in range(spp):
        if spp == 1:
            jx = jy = 0.5
        else:
            jx = hashrng.uniform(seed, pix, 2 * k)
            jy = hashrng.uniform(seed, pix, 2 * k + 1)
        u = (cols.ravel() + jx) / r
        v = 1.0 - (rows.ravel() + jy) / r
        uv = np.stack([u, v], -1)
        pos = np.stack([u - 0.5, v - 0.5, np.zeros_like(u)], -1)
        albedo, mnorm, rough, metal = sample_material_batch(mat, uv, 1.0)
        acc += shade_batch(pos, frames, albedo, mnorm, rough, metal, mat.specular, light, view, 1, seed, pix)
    return (acc / spp).reshape(r, r, 3)


def flat_shading_field(resolution: int, light: PointLight | None = None) -> np.ndarray:
    """Per-pixel radiance a Lambertian albedo-1 plane reflects: I * cos / (pi * r^2)."""
    light = light or PointLight.calibrated()
    r = int(resolution)
    c = (np.arange(r) + 0.5) / r - 0.5
    x, y = np.meshgrid(c, -c, indexing="xy")
    lp = np.asarray(light.position)
    d = np.stack([lp[0] - x, lp[1] - y, np.full_like(x, lp[2])], -1)
    r2 = np.sum(d * d, -1)
    cos = d[..., 2] / np.sqrt(r2)
    return np.asarray(light.intensity)[None, None, :] * (cos / r2)[..., None] / np.pi


def capture_patch(img: Render | np.ndarray, rect, out_size: int, min_coverage: float = 0.95) -> np.ndarray:
    """Crop ``rect`` = (x, y, w, h) in pixels and bilinearly resample to out_size^2."""
    if isinstance(img, Render):
        rgb, cov = img.rgb, img.coverage
    else:
        rgb = np.asarray(img, dtype=np.float64)
        cov = None
    h_img, w_img = rgb.shape[:2]
    x0, y0, rw, rh = (int(v) for v in rect)
    if rw < 1 or rh < 1 or x0 < 0 or y0 < 0 or x0 + rw > w_img or y0 + rh > h_img:
        raise CaptureError(f"rect {tuple(rect)} outside image {w_img}x{h_img}")
    if out_size < 1:
        raise CaptureError("out_size must be >= 1")
    if cov is not None:
        frac = cov[y0 : y0 + rh, x0 : x0 + rw].mean()
        if frac < min_coverage:
            raise CaptureError(f"rect {tuple(rect)} covers only {frac:.1%} garment pixels")
    crop = rgb[y0 : y0 + rh, x0 : x0 + rw]
    return resample_bilinear(crop, out_size, out_size)


def resample_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Pixel-center aligned bilinear resize with clamp-to-edge."""
    h, w = img.shape[:2]
    if (w, h) == (out_w, out_h):
        return np.array(img, dtype=np.float64, copy=True)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if img.ndim == 3:
        fx = fx[None, :, None]
        fy = fy[:, None, None]
    else:
        fx = fx[None, :]
        fy = fy[:, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def uv_pixel_density(render: Render) -> float:
    """Median pixels per UV unit over covered pixels (from UV-buffer differences)."""
    uv = render.uv
    du_x = uv[:, 1:] - uv[:, :-1]
    du_y = uv[1:, :] - uv[:-1, :]
    jx = du_x[:-1]
    jy = du_y[:, :-1]
    det = np.abs(jx[..., 0] * jy[..., 1] - jx[..., 1] * jy[..., 0])
    det = det[np.isfinite(det) & (det > 0)]
    if det.size == 0:
        raise CaptureError("no covered pixels to measure UV density")
    return float(1.0 / np.sqrt(np.median(det)))
