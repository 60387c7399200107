"""texforge: synthetic paired texture data, a conditional diffusion normalizer, and print/tiling post-processing."""

from .diffusion import (DenoiserConfig, NoiseSchedule, TrainConfig, add_noise, build_denoiser, cfg_predict,
                        denoiser_forward, load_checkpoint, sample, save_checkpoint, training_step)
from .errors import (CaptureError, CheckpointError, ForgeError, InvalidArgumentError, ManifestError,
                     MeshParseError, SamplingError, TexforgeError, TrainingError)
from .forge import (ForgeConfig, PairedExample, forge_pairs, make_print_material, make_pseudo_brdf,
                    read_manifest, write_manifest)
from .lighting import EnvironmentMap, PointLight, procedural_environment
from .metrics import MetricReport, ms_ssim, mse, psnr, seam_score, ssim
from .pbr import MaterialSample, MaterialSet, ShadingPoint, eval_brdf, ggx_ndf, sample_material, shade
from .postprocess import GarmentMask, RgbaPrint, composite_print, estimate_tiling_scale, extract_alpha, tile_texture
from .scene import Camera, GarmentMesh, capture_patch, load_mesh, render_flat, render_garment

__version__ = "0.1.0"

__all__ = [
    "Camera", "CaptureError", "CheckpointError", "DenoiserConfig", "EnvironmentMap", "ForgeConfig",
    "ForgeError", "GarmentMask", "GarmentMesh", "InvalidArgumentError", "ManifestError", "MaterialSample",
    "MaterialSet", "MeshParseError", "MetricReport", "NoiseSchedule", "PairedExample", "PointLight",
    "RgbaPrint", "SamplingError", "ShadingPoint", "TexforgeError", "TrainConfig", "TrainingError",
    "add_noise", "build_denoiser", "capture_patch", "cfg_predict", "composite_print", "denoiser_forward",
    "estimate_tiling_scale", "eval_brdf", "extract_alpha", "forge_pairs", "ggx_ndf", "load_checkpoint",
    "load_mesh", "make_print_material", "make_pseudo_brdf", "ms_ssim", "mse", "procedural_environment",
    "psnr", "read_manifest", "render_flat", "render_garment", "sample", "sample_material", "save_checkpoint",
    "seam_score", "shade", "ssim", "tile_texture", "training_step", "write_manifest",
]
