"""texforge command-line interface.

Every command prints its resolved configuration as one JSON line on stdout,
then a JSON result line. Progress goes to stderr. Exit codes: 0 success,
2 usage error, 3 data/validation error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import diffusion as dm
from . import forge as fg
from . import metrics as mt
from . import postprocess as pp
from . import scene as sc
from .config import PipelineConfig, load_config, parse_override
from .errors import TexforgeError
from .imageio import read_image, write_pfm, write_png
from .lighting import ENV_PRESETS, EnvironmentMap, procedural_environment
from .pbr import MaterialSet, load_material

log = logging.getLogger("texforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(TexforgeError):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


@contextlib.contextmanager
def _output_lock(root: Path):
    from filelock import FileLock, Timeout

    root.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(root / ".texforge.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise DataError(f"output directory {root} is locked by another texforge process") from None
    try:
        yield
    finally:
        lock.release()
        with contextlib.suppress(OSError):
            os.remove(root / ".texforge.lock")


def _configure_threads(cfg: PipelineConfig) -> None:
    dm.set_deterministic(cfg.deterministic)
    cap = os.environ.get("TEXFORGE_THREADS")
    if cap and not cfg.deterministic:
        import torch

        torch.set_num_threads(max(1, int(cap)))


# -- asset resolution ----------------------------------------------------------

def _mesh(spec: str) -> sc.GarmentMesh:
    if spec.startswith("procedural:"):
        kind = spec.split(":", 1)[1]
        if kind not in sc.GARMENT_PRESETS:
            raise DataError(f"unknown procedural mesh {kind!r}; choose from {list(sc.GARMENT_PRESETS)}")
        return sc.procedural_garment(kind)
    p = _require(spec, "mesh")
    return sc.load_mesh(p.read_bytes(), name=p.stem)


def _env(spec: str) -> EnvironmentMap:
    if spec in ENV_PRESETS:
        return procedural_environment(spec)
    p = _require(spec, "environment map")
    return EnvironmentMap.from_pfm(p)


def _material(spec: str, seed: int, resolution: int = 32) -> MaterialSet:
    if spec.startswith("procedural:"):
        kind = spec.split(":", 1)[1]
        rng = np.random.default_rng(seed)
        return fg.make_pseudo_brdf(fg.procedural_albedo(kind, resolution, rng), rng, name=kind)
    if spec.startswith("constant:"):
        rgb = [float(v) for v in spec.split(":", 1)[1].split(",")]
        return MaterialSet.constant(resolution, albedo=rgb, roughness=1.0, specular=0.0, name="constant")
    return load_material(_require(spec, "material directory"))


# -- commands -------------------------------------------------------------------

def cmd_forge(cfg: PipelineConfig) -> dict:
    f = cfg.forge
    meshes = [_mesh(m) for m in f.meshes]
    envs = [_env(e) for e in f.envs]
    ms = f.materials
    library_seed = cfg.seed + (0 if f.split == "train" else 1_000_003)
    assets = fg.procedural_library(ms.kinds, ms.count, ms.resolution, seed=library_seed,
                                   prefix=f.split, print_count=ms.print_count, patch_size=f.patch_size)
    for d in ms.dirs:
        mat = load_material(_require(d, "material directory"))
        assets.append(fg.MaterialAsset(f"{f.split}-{Path(d).name}", mat))
    if not assets:
        raise DataError("no materials configured")
    fcfg = fg.ForgeConfig(patch_size=f.patch_size, pairs_per_material=f.pairs_per_material,
                          tiling_range=f.tiling_range, crop_range=f.crop_range, split=f.split, seed=cfg.seed,
                          render_size=f.render_size, garment_spp=f.garment_spp, flat_spp=f.flat_spp)
    manifest = Path(f.manifest)
    stats = fg.ForgeStats()
    with _output_lock(manifest.parent):
        examples = []
        for ex in fg.forge_pairs(assets, meshes, envs, fcfg, stats):
            examples.append(ex)
            if len(examples) % 20 == 0:
                log.info("forged %d pairs", len(examples))
        fg.write_manifest(examples, manifest, split=f.split)
    total = stats.emitted + stats.skipped
    return {"manifest": str(manifest), "examples": stats.emitted, "per_kind": stats.per_kind,
            "skipped": stats.skipped, "skip_rate": stats.skipped / total if total else 0.0,
            "materials": len(assets), "manifest_sha256": _sha256(manifest)}


def _load_tensors(manifest: Path):
    ds = fg.read_manifest(manifest)
    if len(ds) == 0:
        raise DataError(f"manifest {manifest} has no examples")
    cond, tgt = ds.arrays()
    return ds, dm.to_model_range(cond), dm.to_model_range(tgt)


def cmd_train(cfg: PipelineConfig) -> dict:
    t = cfg.train
    manifest = _require(t.manifest, "training manifest")
    ds, cond, x0 = _load_tensors(manifest)
    size = cond.shape[-1]
    arch = dm.DenoiserConfig(channels=3, image_size=size, base_width=t.base_width, groups=t.groups, padding=t.padding,
                             timesteps=t.timesteps)
    tcfg = dm.TrainConfig(batch_size=t.batch_size, lr=t.lr, steps=t.steps, p_uncond=t.p_uncond, seed=cfg.seed,
                          timesteps=t.timesteps, image_size=size, deterministic=cfg.deterministic)
    ckpt_path = Path(t.checkpoint)
    log_path = Path(t.log)
    with _output_lock(ckpt_path.parent):
        if t.resume and ckpt_path.exists():
            ck = dm.load_checkpoint(ckpt_path, expect=arch)
            state = dm.TrainState(ck.model, dm.restore_optimizer(ck, tcfg), ck.step)
            mode = "a"
            log.info("resuming from step %d", ck.step)
        else:
            model = dm.build_denoiser(arch, seed=cfg.seed)
            state = dm.TrainState(model, dm.make_optimizer(model, tcfg), 0)
            mode = "w"
        start = state.step
        losses = []
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, mode) as fh:
            def record(row):
                losses.append(row["loss"])
                fh.write(json.dumps(row, sort_keys=True) + "\n")
                if row["step"] % 100 == 0:
                    log.info("step %d loss %.5f", row["step"], row["loss"])

            ids = [e.id for e in ds.entries]
            dm.train(state, cond, x0, dm.NoiseSchedule(t.timesteps), tcfg, log=record, ids=ids)
        dm.save_checkpoint(state.model, ckpt_path, step=state.step, optimizer=state.optimizer,
                           extra={"timesteps": t.timesteps, "seed": cfg.seed})
    head = losses[: min(10, len(losses))]
    tail = losses[-min(100, len(losses)):]
    return {"checkpoint": str(ckpt_path), "log": str(log_path), "start_step": start, "step": state.step,
            "initial_loss": float(np.mean(head)) if head else None,
            "final_loss": float(np.mean(tail)) if tail else None,
            "parameters": dm.n_params(state.model)}


def _load_model(path: str):
    ck = dm.load_checkpoint(_require(path, "checkpoint"))
    timesteps = int(ck.meta.get("extra", {}).get("timesteps", 100))
    return ck, dm.NoiseSchedule(timesteps)


def cmd_infer(cfg: PipelineConfig) -> dict:
    i = cfg.infer
    ck, sched = _load_model(i.checkpoint)
    img = read_image(_require(i.input, "input patch"))
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = np.clip(img[..., :3], 0.0, 1.0)
    size = ck.model.cfg.image_size
    if img.shape[:2] != (size, size):
        raise DataError(f"input patch is {img.shape[1]}x{img.shape[0]}, checkpoint expects {size}x{size}")
    cond = dm.to_model_range(img)
    x = dm.sample(ck.model, cond, sched, steps=min(i.steps, sched.timesteps), s=i.guidance, seed=cfg.seed)
    out = dm.from_model_range(x)[0]
    out_path = Path(i.output)
    result = {"output": str(out_path)}
    with _output_lock(out_path.parent):
        write_png(out_path, out)
        write_pfm(out_path.with_suffix(".pfm"), out)
        result["output_sha256"] = _sha256(out_path)
        if i.print_mode:
            prt = pp.extract_alpha(out)
            rgba_path = out_path.with_name(out_path.stem + "_rgba.png")
            write_png(rgba_path, prt.to_rgba(), srgb=False)
            result["rgba"] = str(rgba_path)
            result["alpha_mean"] = float(prt.alpha.mean())
    return result


def cmd_tile(cfg: PipelineConfig) -> dict:
    t = cfg.tile
    if (t.mask is None) == (t.repeats is None):
        raise UsageError("give exactly one of a mask or --repeats")
    tex = read_image(_require(t.texture, "texture"))
    if t.mask is not None:
        if t.capture is None:
            raise UsageError("mask-based tiling needs a capture rect (--capture x,y,w,h)")
        mask = pp.GarmentMask.from_png(_require(t.mask, "mask"), t.capture)
        repeats = pp.estimate_tiling_scale(mask, t.uv_extent)
        source = "mask"
    else:
        repeats = tuple(float(r) for r in t.repeats)
        source = "user"
    tiled = pp.tile_texture(tex, repeats)
    out = Path(t.output)
    with _output_lock(out.parent):
        if out.suffix.lower() == ".pfm":
            write_pfm(out, tiled)
        else:
            write_png(out, tiled)
    return {"repeats": list(repeats), "source": source, "output": str(out),
            "size": [int(tiled.shape[1]), int(tiled.shape[0])]}


def evaluate(model, sched, ds: fg.Dataset, guidance: float, steps: int, seed: int,
             predictions: str = "model", batch_size: int = 32) -> mt.MetricReport:
    """Sample a prediction per pair and score it against the flat target."""
    report = mt.MetricReport()
    report.notes.append("learned metrics (FID, LPIPS, DISTS, CLIP, FLIP, TexTile) replaced by "
                        "MSE/PSNR/SSIM/MS-SSIM and a wrap seam score")
    pairs = []
    for idx in range(len(ds)):
        try:
            pairs.append((idx, *ds.load(idx)))
        except Exception as exc:  # noqa: BLE001 - record and continue
            report.failures.append({"id": ds.entries[idx].id, "error": str(exc)})
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        if predictions == "targets":
            preds = [tgt for _, _, tgt in chunk]
        else:
            cond = dm.to_model_range(np.stack([c for _, c, _ in chunk]))
            try:
                x = dm.sample(model, cond, sched, steps=min(steps, sched.timesteps), s=guidance,
                              seed=seed + start)
            except TexforgeError as exc:
                for idx, _, _ in chunk:
                    report.failures.append({"id": ds.entries[idx].id, "error": str(exc)})
                continue
            preds = list(dm.from_model_range(x))
        for (idx, _, tgt), pred in zip(chunk, preds):
            try:
                levels = mt.ms_ssim_levels(tgt.shape)
                if levels < 3 and not any("MS-SSIM" in n for n in report.notes):
                    report.notes.append(f"MS-SSIM uses {levels} level(s) at {tgt.shape[1]}x{tgt.shape[0]}")
                report.add(ds.entries[idx].id, mse=mt.mse(pred, tgt), psnr=mt.psnr(pred, tgt),
                           ssim=mt.ssim(pred, tgt), ms_ssim=mt.ms_ssim(pred, tgt, levels=levels),
                           seam_score=mt.seam_score(pp.tile_texture(pred, (2, 2))))
            except TexforgeError as exc:
                report.failures.append({"id": ds.entries[idx].id, "error": str(exc)})
    return report


def cmd_eval(cfg: PipelineConfig) -> dict:
    e = cfg.eval
    ds = fg.read_manifest(_require(e.manifest, "evaluation manifest"))
    if e.predictions == "model":
        ck, sched = _load_model(e.checkpoint)
        model = ck.model
    else:
        model, sched = None, None
    report = evaluate(model, sched, ds, e.guidance, e.steps, cfg.seed, e.predictions, e.batch_size)
    out = Path(e.report)
    with _output_lock(out.parent):
        out.write_text(report.dumps())
        out.with_suffix(".txt").write_text(report.table())
    n = len(ds)
    fail_rate = len(report.failures) / n if n else 0.0
    result = {"report": str(out), "table": str(out.with_suffix(".txt")), "pairs": n,
              "failures": len(report.failures), "aggregate": report.aggregate(),
              "report_sha256": _sha256(out)}
    if fail_rate > 0.10:
        raise DataError(f"{len(report.failures)} of {n} pairs failed")
    return result


def cmd_render(cfg: PipelineConfig) -> dict:
    r = cfg.render
    if r.camera not in sc.CAMERA_PRESETS:
        raise UsageError(f"unknown camera preset {r.camera!r}; available presets: {', '.join(sc.CAMERA_PRESETS)}")
    mesh = _mesh(r.mesh)
    env = _env(r.env)
    mat = _material(r.material, cfg.seed)
    cam = sc.frontal_camera(mesh, r.size, preset=r.camera)
    garment = sc.render_garment(mesh, mat, r.tiling_scale, env, cam, spp=r.spp, seed=cfg.seed)
    flat = sc.render_flat(mat, r.flat_resolution, seed=cfg.seed)
    out = Path(r.output_dir)
    with _output_lock(out):
        write_png(out / "garment.png", garment.rgb)
        write_pfm(out / "garment.pfm", garment.rgb)
        write_png(out / "flat.png", flat)
        write_pfm(out / "flat.pfm", flat)
        flat_up = sc.resample_bilinear(flat, r.size, r.size)
        write_png(out / "side_by_side.png", np.concatenate([garment.rgb, flat_up], axis=1))
    c = r.flat_resolution // 2
    return {"output_dir": str(out), "coverage": float(garment.coverage.mean()),
            "flat_center": [float(v) for v in flat[c, c]],
            "garment_sha256": _sha256(out / "garment.png"), "flat_sha256": _sha256(out / "flat.png")}


COMMANDS = {"forge": cmd_forge, "train": cmd_train, "infer": cmd_infer, "tile": cmd_tile,
            "eval": cmd_eval, "render": cmd_render}


def _csv(kind, n):
    def parse(text):
        parts = text.split(",")
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated values")
        try:
            return [kind(p) for p in parts]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.steps=500")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="texforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("forge", parents=[common], help="render paired training data")
    tr = sub.add_parser("train", parents=[common], help="train the denoiser")
    tr.add_argument("--resume", action="store_true", default=None)
    inf = sub.add_parser("infer", parents=[common], help="normalize one captured patch")
    inf.add_argument("--input")
    inf.add_argument("--output")
    inf.add_argument("--checkpoint")
    inf.add_argument("--print-mode", action="store_true", default=None)
    inf.add_argument("--guidance", type=float)
    ti = sub.add_parser("tile", parents=[common], help="tile a texture by mask ratio or explicit repeats")
    ti.add_argument("--texture")
    ti.add_argument("--output")
    ti.add_argument("--mask")
    ti.add_argument("--capture", type=_csv(int, 4))
    ti.add_argument("--repeats", type=_csv(float, 2))
    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint on a test manifest")
    ev.add_argument("--manifest")
    ev.add_argument("--checkpoint")
    ev.add_argument("--report")
    re_ = sub.add_parser("render", parents=[common], help="render a garment and a flat tile")
    re_.add_argument("--mesh")
    re_.add_argument("--material")
    re_.add_argument("--env")
    re_.add_argument("--camera")
    re_.add_argument("--output-dir")
    return p


_FLAG_KEYS = {
    "train": {"resume": "train.resume"},
    "infer": {"input": "infer.input", "output": "infer.output", "checkpoint": "infer.checkpoint",
              "print_mode": "infer.print_mode", "guidance": "infer.guidance"},
    "tile": {"texture": "tile.texture", "output": "tile.output", "mask": "tile.mask",
             "capture": "tile.capture", "repeats": "tile.repeats"},
    "eval": {"manifest": "eval.manifest", "checkpoint": "eval.checkpoint", "report": "eval.report"},
    "render": {"mesh": "render.mesh", "material": "render.material", "env": "render.env",
               "camera": "render.camera", "output_dir": "render.output_dir"},
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = [parse_override(s) for s in args.set]
        if args.seed is not None:
            overrides.append(("seed", args.seed))
        if args.deterministic:
            overrides.append(("deterministic", True))
        for attr, key in _FLAG_KEYS.get(args.command, {}).items():
            val = getattr(args, attr, None)
            if val is not None:
                overrides.append((key, val))
        cfg = load_config(args.config, overrides)
    except (ValueError, ValidationError, OSError) as exc:
        print(f"texforge: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit({"command": args.command, "config": cfg.model_dump(mode="json")})
    _configure_threads(cfg)
    try:
        result = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"texforge {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TexforgeError as exc:
        print(f"texforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    _emit({"command": args.command, "result": result})
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
