"""Pixel-space quality metrics and a wrap-around seam score."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range: float = 1.0) -> float:
    m = mse(a, b)
    return math.inf if m == 0 else 10.0 * math.log10(data_range ** 2 / m)


def _channels(x):
    return x[..., None] if x.ndim == 2 else x


def _ssim_maps(a, b, window, k1, k2, data_range):
    """Per-window luminance and contrast-structure terms, averaged over channels."""
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    a, b = _channels(a), _channels(b)
    if a.shape[0] < window or a.shape[1] < window:
        raise InvalidArgumentError(f"image smaller than the {window}x{window} window")
    wa = sliding_window_view(a, (window, window), axis=(0, 1))
    wb = sliding_window_view(b, (window, window), axis=(0, 1))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    n = window * window
    # unbiased (n - 1) covariance, as in the reference implementation
    var_a = (da * da).sum(axis=(-2, -1)) / (n - 1)
    var_b = (db * db).sum(axis=(-2, -1)) / (n - 1)
    cov = (da * db).sum(axis=(-2, -1)) / (n - 1)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim(a, b, window: int = 8, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid ``window`` x ``window`` uniform windows and channels."""
    a, b = _pair(a, b)
    lum, cs = _ssim_maps(a, b, window, k1, k2, data_range)
    return float(np.mean(lum * cs))


def _down2(x):
    x = _channels(x)
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, levels: int = 3, window: int = 8, k1: float = 0.01, k2: float = 0.03,
            data_range: float = 1.0) -> float:
    """Multi-scale SSIM with the standard level weights renormalized to ``levels``.

    Contrast-structure terms are clipped at 0 before exponentiation.
    """
    a, b = _pair(a, b)
    if levels < 1 or levels > len(MS_SSIM_WEIGHTS):
        raise InvalidArgumentError(f"levels must lie in [1, {len(MS_SSIM_WEIGHTS)}]")
    f = 2 ** (levels - 1)
    if a.shape[0] % f or a.shape[1] % f:
        raise InvalidArgumentError(f"image dimensions must be divisible by {f}")
    w = np.asarray(MS_SSIM_WEIGHTS[:levels])
    w = w / w.sum()
    out = 1.0
    for lvl in range(levels):
        lum, cs = _ssim_maps(a, b, window, k1, k2, data_range)
        if lvl == levels - 1:
            out *= max(float(np.mean(lum * cs)), 0.0) ** w[lvl]
        else:
            out *= max(float(np.mean(cs)), 0.0) ** w[lvl]
            a, b = _down2(a), _down2(b)
    return float(out)


def ms_ssim_levels(shape, window: int = 8, max_levels: int = 3) -> int:
    """Largest level count <= ``max_levels`` whose coarsest scale still fits the window."""
    h, w = int(shape[0]), int(shape[1])
    if min(h, w) < window:
        raise InvalidArgumentError(f"images smaller than the {window}px SSIM window")
    levels = 1
    while (levels < max_levels and h % 2 ** levels == 0 and w % 2 ** levels == 0
           and min(h, w) // 2 ** levels >= window):
        levels += 1
    return levels


def _seam_sums(tex) -> tuple[float, int, float, int]:
    t = _channels(np.asarray(tex, dtype=np.float64))
    if t.shape[0] < 4 or t.shape[1] < 4:
        raise InvalidArgumentError("seam_score needs at least a 4x4 image")
    gx = np.abs(np.diff(t, axis=1))
    gy = np.abs(np.diff(t, axis=0))
    wrap_x = np.abs(t[:, 0] - t[:, -1])
    wrap_y = np.abs(t[0, :] - t[-1, :])
    return (math.fsum((wrap_x.sum(), wrap_y.sum())), wrap_x.size + wrap_y.size,
            math.fsum((gx.sum(), gy.sum())), gx.size + gy.size)


def _ratio(wrap: float, interior: float) -> float:
    if interior == 0.0:
        return 0.0 if wrap == 0.0 else math.inf
    return float(wrap / interior)


def seam_score(tex) -> float:
    """Mean absolute gradient across the wrap seams over the mean interior gradient.

    Both horizontal and vertical neighbours are pooled. About 1 means the seam
    looks like the interior; a constant image scores 0.
    """
    ws, wn, gs, gn = _seam_sums(tex)
    return _ratio(ws / wn, gs / gn)


def pooled_seam_score(textures) -> float:
    """Seam score with wrap and interior gradients averaged over a whole set.

    A single image's score swings with where its edges happen to fall (a
    stripe edge on the border scores high, one just inside scores 0); pooling
    over a set of textures measures whether seams look like interiors on
    average. For one image it equals ``seam_score``.
    """
    sums = [_seam_sums(t) for t in textures]
    if not sums:
        raise InvalidArgumentError("pooled_seam_score needs at least one texture")
    ws = math.fsum(s[0] for s in sums) / sum(s[1] for s in sums)
    gs = math.fsum(s[2] for s in sums) / sum(s[3] for s in sums)
    return _ratio(ws, gs)


@dataclass
class MetricReport:
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    KEYS = ("mse", "psnr", "ssim", "ms_ssim", "seam_score")

    def add(self, pair_id: str, **values) -> None:
        self.records.append({"id": pair_id, **values})

    def aggregate(self) -> dict:
        out = {}
        for k in self.KEYS:
            vals = np.array([r[k] for r in self.records if k in r and r[k] is not None], dtype=np.float64)
            finite = vals[np.isfinite(vals)]
            # exactly rounded sums keep the aggregate independent of record order
            mean = math.fsum(finite) / len(finite) if len(finite) else None
            out[k] = {
                "mean": mean,
                "std": math.sqrt(math.fsum((finite - mean) ** 2) / len(finite)) if len(finite) else None,
                "n": int(len(vals)),
                "n_infinite": int(np.sum(np.isinf(vals))),
            }
        return out

    def to_json(self) -> dict:
        recs = []
        for r in self.records:
            rr = dict(r)
            if rr.get("psnr") is not None and math.isinf(rr["psnr"]):
                rr["psnr"] = None
                rr["psnr_infinite"] = True
            recs.append(rr)
        return {"schema_version": 1, "records": recs, "aggregate": self.aggregate(),
                "failures": self.failures, "notes": self.notes}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        agg = self.aggregate()
        lines = [f"{'metric':<12}{'mean':>14}{'std':>14}{'n':>6}"]
        for k in self.KEYS:
            a = agg[k]
            mean = "-" if a["mean"] is None else f"{a['mean']:.6f}"
            std = "-" if a["std"] is None else f"{a['std']:.6f}"
            lines.append(f"{k:<12}{mean:>14}{std:>14}{a['n']:>6}")
        if self.failures:
            lines.append(f"failures: {len(self.failures)}")
        return "\n".join(lines) + "\n"


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "records", "aggregate", "failures", "notes"],
    "properties": {
        "schema_version": {"const": 1},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "mse", "psnr", "ssim", "ms_ssim"],
                "properties": {
                    "id": {"type": "string"},
                    "mse": {"type": "number", "minimum": 0},
                    "psnr": {"type": ["number", "null"]},
                    "psnr_infinite": {"type": "boolean"},
                    "ssim": {"type": "number", "minimum": -1, "maximum": 1},
                    "ms_ssim": {"type": "number", "minimum": -1, "maximum": 1},
                    "seam_score": {"type": ["number", "null"], "minimum": 0},
                },
            },
        },
        "aggregate": {"type": "object"},
        "failures": {"type": "array", "items": {"type": "object", "required": ["id", "error"]}},
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}
