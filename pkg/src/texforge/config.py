"""Pipeline configuration: one JSON file plus command-line overrides."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MaterialsSpec(_Section):
    kinds: list[str] = ["solid", "stripes"]
    count: int = Field(10, ge=0)
    resolution: int = Field(32, ge=4)
    print_count: int = Field(0, ge=0)
    dirs: list[str] = []


class ForgeSection(_Section):
    manifest: str = "data/train/manifest.json"
    split: Literal["train", "test"] = "train"
    patch_size: int = Field(32, ge=8)
    pairs_per_material: int = Field(20, ge=1)
    tiling_range: tuple[float, float] = (2.5, 4.0)
    crop_range: Optional[tuple[int, int]] = None
    render_size: int = Field(96, ge=8)
    garment_spp: int = Field(16, ge=1)
    flat_spp: int = Field(1, ge=1)
    materials: MaterialsSpec = MaterialsSpec()
    meshes: list[str] = ["procedural:drape", "procedural:tube", "procedural:pleats", "procedural:bulge"]
    envs: list[str] = ["constant", "gradient", "two_lobe", "window"]


class TrainSection(_Section):
    manifest: str = "data/train/manifest.json"
    checkpoint: str = "runs/model.ckpt"
    log: str = "runs/train_log.jsonl"
    steps: int = Field(2000, ge=1)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(2e-4, gt=0)
    p_uncond: float = Field(0.1, ge=0, le=1)
    timesteps: int = Field(100, ge=2)
    base_width: int = Field(32, ge=1)
    groups: int = Field(8, ge=1)
    padding: Literal["circular", "zeros"] = "circular"
    resume: bool = False


class InferSection(_Section):
    checkpoint: str = "runs/model.ckpt"
    input: Optional[str] = None
    output: str = "runs/infer.png"
    print_mode: bool = False
    guidance: float = Field(1.5, ge=1)
    steps: int = Field(100, ge=1)


class TileSection(_Section):
    texture: Optional[str] = None
    output: str = "runs/tiled.png"
    mask: Optional[str] = None
    capture: Optional[tuple[int, int, int, int]] = None
    uv_extent: tuple[float, float] = (1.0, 1.0)
    repeats: Optional[tuple[float, float]] = None


class EvalSection(_Section):
    manifest: str = "data/test/manifest.json"
    checkpoint: str = "runs/model.ckpt"
    report: str = "runs/eval_report.json"
    guidance: float = Field(1.5, ge=1)
    steps: int = Field(100, ge=1)
    predictions: Literal["model", "targets"] = "model"
    batch_size: int = Field(32, ge=1)


class RenderSection(_Section):
    mesh: str = "procedural:drape"
    material: str = "procedural:stripes"
    env: str = "gradient"
    camera: str = "front"
    size: int = Field(128, ge=8)
    spp: int = Field(32, ge=1)
    tiling_scale: float = Field(3.0, gt=0)
    flat_resolution: int = Field(64, ge=8)
    output_dir: str = "runs/render"


class PipelineConfig(_Section):
    seed: int = 0
    deterministic: bool = False
    forge: ForgeSection = ForgeSection()
    train: TrainSection = TrainSection()
    infer: InferSection = InferSection()
    tile: TileSection = TileSection()
    eval: EvalSection = EvalSection()
    render: RenderSection = RenderSection()

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, v: int) -> int:
        if v < 0:
            raise ValueError("seed must be nonnegative")
        return v


def _set_path(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ValueError(f"{dotted}: {k} is not a section")
    cur[keys[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise ValueError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: str | None, overrides: list[tuple[str, Any]] = ()) -> PipelineConfig:
    doc: dict = {}
    if path:
        doc = json.loads(Path(path).read_text())
    for key, value in overrides:
        _set_path(doc, key, value)
    return PipelineConfig.model_validate(doc)

