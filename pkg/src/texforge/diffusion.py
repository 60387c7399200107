"""Pixel-space conditional DDPM mapping distorted captures to flat tileable textures.

Images enter the model in [-1, 1]. The denoiser sees ``[x_t, cond]`` stacked
on the channel axis; the condition half of the first convolution starts at
zero so an untrained model ignores the condition entirely. All 3x3
convolutions pad circularly; resampling layers need no padding.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, InvalidArgumentError, SamplingError, TrainingError


# -- noise schedule ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """gamma(t) = cos^2(pi t / 2) sampled at t_k = k / (T - 1), k = 0..T-1.

    Timestep 0 is the clean image; training draws k from 1..T-1.
    """

    timesteps: int = 100

    def __post_init__(self):
        if self.timesteps < 2:
            raise InvalidArgumentError("need at least 2 timesteps")

    @staticmethod
    def gamma(t):
        t = np.asarray(t, dtype=np.float64)
        return np.cos(0.5 * np.pi * t) ** 2

    @property
    def gammas(self) -> np.ndarray:
        g = self.gamma(np.arange(self.timesteps) / (self.timesteps - 1))
        g[0] = 1.0
        g[-1] = 0.0
        return g

    def gamma_at(self, k):
        return self.gammas[np.asarray(k)]


def add_noise(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(gamma) * x0 + sqrt(1 - gamma) * eps, with ``t`` integer timestep(s)."""
    if x0.shape != eps.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(x0.shape)} vs {tuple(eps.shape)}")
    g = torch.as_tensor(sched.gamma_at(torch.as_tensor(t).cpu().numpy()), dtype=torch.float64)
    if g.ndim == 1:
        g = g.view(-1, *([1] * (x0.ndim - 1)))
    a = torch.sqrt(g).to(x0.dtype)
    b = torch.sqrt(1.0 - g).to(x0.dtype)
    return a * x0 + b * eps


# -- denoiser ----------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 3
    image_size: int = 32
    base_width: int = 32
    mults: tuple[int, ...] = (1, 2, 2)
    groups: int = 8
    padding: str = "circular"
    timesteps: int = 100
    prediction: str = "v"

    def __post_init__(self):
        object.__setattr__(self, "mults", tuple(int(m) for m in self.mults))
        if len(self.mults) != 3:
            raise InvalidArgumentError("the encoder-decoder has exactly two downsampling stages")
        if self.padding not in ("circular", "zeros"):
            raise InvalidArgumentError("padding must be circular or zeros")
        if self.prediction not in ("v", "eps"):
            raise InvalidArgumentError("prediction must be v or eps")
        if self.timesteps < 2:
            raise InvalidArgumentError("need at least 2 timesteps")
        if self.image_size % self.downsample_factor:
            raise InvalidArgumentError(f"image_size must be a multiple of {self.downsample_factor}")
        for m in self.mults:
            if (self.base_width * m) % self.groups:
                raise InvalidArgumentError("group count must divide every block width")

    @property
    def downsample_factor(self) -> int:
        return 4

    def to_json(self) -> dict:
        return {**asdict(self), "mults": list(self.mults)}

    def arch_hash(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).digest()


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, tdim: int, groups: int, padding: str):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1, padding_mode=padding)
        self.temb = nn.Linear(tdim, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, padding_mode=padding)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Denoiser(nn.Module):
    """Two-level encoder-decoder predicting the added noise.

    With ``prediction="v"`` the network output F is read as a velocity and
    turned into a noise estimate, eps = sqrt(gamma) F + sqrt(1 - gamma) x_t.
    At high noise x_t is almost pure noise, so the skip term carries it and
    the network only has to supply the small x0-dependent correction; a raw
    noise head would have to copy x_t to within O(sqrt(gamma)), an error that
    the sampler then amplifies by 1 / sqrt(gamma) when it forms x0.
    The training loss is the same noise-prediction MSE either way.
    """

    def __init__(self, cfg: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.cfg = cfg
        c, w, g, pad = cfg.channels, cfg.base_width, cfg.groups, cfg.padding
        w0, w1, w2 = (w * m for m in cfg.mults)
        tdim = 4 * w
        self.time_mlp = nn.Sequential(nn.Linear(w, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.conv_in = nn.Conv2d(2 * c, w0, 3, padding=1, padding_mode=pad)
        self.enc0 = ResBlock(w0, w0, tdim, g, pad)
        self.down0 = nn.Conv2d(w0, w1, 2, stride=2)
        self.enc1 = ResBlock(w1, w1, tdim, g, pad)
        self.down1 = nn.Conv2d(w1, w2, 2, stride=2)
        self.mid0 = ResBlock(w2, w2, tdim, g, pad)
        self.mid1 = ResBlock(w2, w2, tdim, g, pad)
        self.dec1 = ResBlock(w2 + w1, w1, tdim, g, pad)
        self.dec0 = ResBlock(w1 + w0, w0, tdim, g, pad)
        self.norm_out = nn.GroupNorm(g, w0)
        self.conv_out = nn.Conv2d(w0, c, 3, padding=1, padding_mode=pad)
        with torch.no_grad():
            self.conv_in.weight[:, c:].zero_()

    def network(self, x_t: torch.Tensor, t, cond: torch.Tensor | None) -> torch.Tensor:
        """Raw network output before the noise-estimate skip."""
        if cond is None:
            cond = torch.zeros_like(x_t)
        if x_t.shape != cond.shape:
            raise InvalidArgumentError(f"x_t {tuple(x_t.shape)} and cond {tuple(cond.shape)} differ")
        if x_t.shape[-1] % 4 or x_t.shape[-2] % 4:
            raise InvalidArgumentError("spatial size must be a multiple of 4")
        t = torch.as_tensor(t, device=x_t.device)
        if t.ndim == 0:
            t = t.expand(x_t.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.cfg.base_width).to(x_t.dtype))
        h0 = self.enc0(self.conv_in(torch.cat([x_t, cond], dim=1)), temb)
        h1 = self.enc1(self.down0(h0), temb)
        h = self.mid1(self.mid0(self.down1(h1), temb), temb)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.dec1(torch.cat([h, h1], dim=1), temb)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.dec0(torch.cat([h, h0], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(h)))

    def skip_coefficients(self, t, n: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
        """(sqrt(gamma), sqrt(1 - gamma)) per sample, shaped for broadcasting."""
        k = torch.as_tensor(t).detach().cpu().numpy().astype(np.int64)
        if np.any(k < 0) or np.any(k >= self.cfg.timesteps):
            raise InvalidArgumentError(f"timesteps must lie in [0, {self.cfg.timesteps - 1}]")
        g = torch.as_tensor(NoiseSchedule(self.cfg.timesteps).gamma_at(np.broadcast_to(k, (n,))),
                            dtype=torch.float64).view(-1, 1, 1, 1)
        return torch.sqrt(g).to(dtype), torch.sqrt(1.0 - g).to(dtype)

    def forward(self, x_t: torch.Tensor, t, cond: torch.Tensor | None) -> torch.Tensor:
        out = self.network(x_t, t, cond)
        if self.cfg.prediction == "eps":
            return out
        a, b = self.skip_coefficients(t, x_t.shape[0], out.dtype)
        return a * out + b * x_t

    def predict_x0(self, x_t: torch.Tensor, t, cond: torch.Tensor | None, s: float = 1.0) -> torch.Tensor:
        """Guided clean-image estimate. The velocity form stays defined at gamma = 0,
        where the noise estimate alone cannot recover x0."""
        if self.cfg.prediction == "eps":
            raise InvalidArgumentError("predict_x0 needs a velocity-parameterized model")
        v = _guided(self.network, x_t, t, cond, s)
        a, b = self.skip_coefficients(t, x_t.shape[0], v.dtype)
        return a * x_t - b * v




def _check_schedule(model, sched: NoiseSchedule) -> None:
    cfg = getattr(model, "cfg", None)
    if isinstance(cfg, DenoiserConfig) and cfg.prediction == "v" and cfg.timesteps != sched.timesteps:
        raise InvalidArgumentError(f"model was built for {cfg.timesteps} timesteps, schedule has {sched.timesteps}")


def build_denoiser(cfg: DenoiserConfig = DenoiserConfig(), seed: int = 0, dtype=torch.float32) -> Denoiser:
    torch.manual_seed(seed)
    return Denoiser(cfg).to(dtype)


def denoiser_forward(model: Denoiser, x_t, t, cond=None) -> torch.Tensor:
    return model(x_t, t, cond)


def n_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- training ---------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 2e-4
    steps: int = 2000
    p_uncond: float = 0.1
    seed: int = 0
    timesteps: int = 100
    image_size: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    deterministic: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise InvalidArgumentError("p_uncond must lie in [0, 1]")
        for name in ("batch_size", "steps", "timesteps", "image_size"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.lr <= 0:
            raise InvalidArgumentError("lr must be positive")
        self.betas = tuple(self.betas)


def to_model_range(img01) -> torch.Tensor:
    """(N, H, W, C) or (H, W, C) images in [0, 1] -> (N, C, H, W) tensor in [-1, 1]."""
    a = np.asarray(img01, dtype=np.float32)
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2))) * 2.0 - 1.0


def from_model_range(x: torch.Tensor) -> np.ndarray:
    """(N, C, H, W) in [-1, 1] -> (N, H, W, C) float64 in [0, 1]."""
    a = x.detach().to(torch.float64).cpu().numpy().transpose(0, 2, 3, 1)
    return np.clip((a + 1.0) * 0.5, 0.0, 1.0)


def step_generator(seed: int, step: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0] & 0x7FFFFFFFFFFFFFFF))
    return g


def diffusion_loss(model: Denoiser, cond: torch.Tensor, x0: torch.Tensor, sched: NoiseSchedule,
                   p_uncond: float, gen: torch.Generator,
                   predict: Callable | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean squared noise-prediction error; also returns the sampled timesteps."""
    b = x0.shape[0]
    t = torch.randint(1, sched.timesteps, (b,), generator=gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    drop = torch.rand(b, generator=gen) < p_uncond
    cond = torch.where(drop[:, None, None, None], torch.zeros_like(cond), cond)
    x_t = add_noise(x0, t, eps, sched)
    eps_hat = (predict or model)(x_t, t, cond)
    return torch.mean((eps - eps_hat) ** 2), t


def training_step(model: Denoiser, batch, sched: NoiseSchedule, cfg: TrainConfig, gen: torch.Generator,
                  batch_ids: Sequence[str] | None = None) -> tuple[float, dict[str, torch.Tensor]]:
    """One forward/backward pass. ``batch`` is (cond, x0) in model range.

    Returns the loss and a name -> gradient mapping; the caller applies the update.
    """
    cond, x0 = batch
    if x0.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    model.zero_grad(set_to_none=True)
    loss, _ = diffusion_loss(model, cond, x0, sched, cfg.p_uncond, gen)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss on batch {list(batch_ids) if batch_ids else '?'}")
    loss.backward()
    grads = {n: p.grad.detach().clone() for n, p in model.named_parameters() if p.grad is not None}
    return float(loss.detach()), grads


def set_deterministic(flag: bool = True, threads: int | None = None) -> None:
    """Single-threaded deterministic kernels, for bit-reproducible runs."""
    if flag:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif threads:
        torch.set_num_threads(int(threads))


@dataclass
class TrainState:
    model: Denoiser
    optimizer: torch.optim.Adam
    step: int = 0


def make_optimizer(model: Denoiser, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.adam_eps)


def train(state: TrainState, cond: torch.Tensor, x0: torch.Tensor, sched: NoiseSchedule, cfg: TrainConfig,
          log: Callable[[dict], None] | None = None, ids: Sequence[str] | None = None) -> TrainState:
    """Run Adam until ``state.step == cfg.steps``.

    Randomness for step k depends only on (cfg.seed, k), so resuming from a
    checkpoint continues exactly where an uninterrupted run would be.
    """
    n = x0.shape[0]
    if n == 0:
        raise InvalidArgumentError("training set is empty")
    _check_schedule(state.model, sched)
    model, opt = state.model, state.optimizer
    model.train()
    t_start = time.perf_counter()
    while state.step < cfg.steps:
        gen = step_generator(cfg.seed, state.step)
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        batch_ids = [ids[i] for i in idx.tolist()] if ids is not None else None
        try:
            loss, _ = training_step(model, (cond[idx], x0[idx]), sched, cfg, gen, batch_ids)
        except TrainingError as exc:
            raise TrainingError(f"step {state.step + 1}: {exc}") from exc
        opt.step()
        state.step += 1
        if log is not None:
            log({"step": state.step, "loss": loss, "lr": cfg.lr,
                 "seconds": None if cfg.deterministic else round(time.perf_counter() - t_start, 3)})
    return state


# -- guidance and sampling -------------------------------------------------------------

def _guided(fn: Callable, x_t: torch.Tensor, t, cond: torch.Tensor | None, s: float) -> torch.Tensor:
    if not s >= 1.0:
        raise InvalidArgumentError("guidance scale must be >= 1")
    if cond is None:
        return fn(x_t, t, None)
    e_cond = fn(x_t, t, cond)
    if s == 1.0:
        return e_cond
    e_uncond = fn(x_t, t, None)
    return e_uncond + s * (e_cond - e_uncond)


def cfg_predict(model: Denoiser, x_t: torch.Tensor, t, cond: torch.Tensor | None, s: float) -> torch.Tensor:
    """eps(x, null) + s * (eps(x, cond) - eps(x, null))."""
    return _guided(model, x_t, t, cond, s)


def sampling_timesteps(sched: NoiseSchedule, steps: int) -> list[int]:
    """Descending timestep indices from T-1 to 0 with ``steps`` transitions (at most T-1)."""
    if steps < 1 or steps > sched.timesteps:
        raise InvalidArgumentError(f"steps must lie in [1, {sched.timesteps}]")
    steps = min(steps, sched.timesteps - 1)
    ks = np.unique(np.round(np.linspace(0, sched.timesteps - 1, steps + 1)).astype(int))
    return [int(k) for k in ks[::-1]]


@torch.no_grad()
def sample(model: Denoiser, cond: torch.Tensor | None, sched: NoiseSchedule, steps: int = 100,
           s: float = 1.0, seed: int = 0, shape: tuple[int, ...] | None = None) -> torch.Tensor:
    """DDPM ancestral sampling from Gaussian noise with guided noise estimates.

    ``cond`` is (N, C, H, W) or (C, H, W) in [-1, 1]; pass None (with ``shape``)
    for unconditional samples. Returns a tensor clamped to [-1, 1].
    """
    if not s >= 1.0:
        raise InvalidArgumentError("guidance scale must be >= 1")
    squeeze = False
    if cond is not None:
        if cond.ndim == 3:
            cond = cond[None]
            squeeze = True
        shape = tuple(cond.shape)
    elif shape is None:
        raise InvalidArgumentError("unconditional sampling needs an explicit shape")
    _check_schedule(model, sched)
    model.eval()
    dtype = next(model.parameters()).dtype
    if cond is not None:
        cond = cond.to(dtype)
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    x = torch.randn(shape, generator=gen, dtype=dtype)
    g = sched.gammas
    ks = sampling_timesteps(sched, steps)
    for i, (k, kp) in enumerate(zip(ks[:-1], ks[1:])):
        t = torch.full((shape[0],), k, dtype=torch.long)
        ab, ab_prev = g[k], g[kp]
        alpha = ab / ab_prev
        beta = 1.0 - alpha
        if isinstance(model, Denoiser) and model.cfg.prediction == "v":
            x0_hat = model.predict_x0(x, t, cond, s)
        else:
            eps = cfg_predict(model, x, t, cond, s)
            x0_hat = (x - math.sqrt(1.0 - ab) * eps) / math.sqrt(max(ab, 1e-300))
        x0_hat = x0_hat.clamp(-1.0, 1.0)
        c0 = math.sqrt(ab_prev) * beta / (1.0 - ab)
        c1 = math.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
        x = c0 * x0_hat + c1 * x
        if kp > 0:
            var = beta * (1.0 - ab_prev) / (1.0 - ab)
            x = x + math.sqrt(var) * torch.randn(shape, generator=gen, dtype=dtype)
        if not torch.isfinite(x).all():
            raise SamplingError(i)
    x = x.clamp(-1.0, 1.0)
    return x[0] if squeeze else x


# -- checkpoints ------------------------------------------------------------

MAGIC = b"TEXFCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    model: Denoiser
    step: int = 0
    optimizer_state: dict | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(model: Denoiser, path: str | os.PathLike, step: int = 0,
                    optimizer: torch.optim.Optimizer | None = None, extra: dict | None = None) -> None:
    """Write weights (and Adam moments, if given) to the versioned binary container.

    Layout: magic, u32 version, 32-byte architecture hash, u32-length JSON
    metadata, u32 tensor count, then per tensor a u16-length name, u8 rank,
    u32 dims and little-endian float32 data; a trailing SHA-256 of everything
    before it guards against corruption.
    """
    tensors: list[tuple[str, torch.Tensor]] = list(model.state_dict().items())
    meta = {"arch": model.cfg.to_json(), "step": int(step), "extra": extra or {}}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        st = optimizer.state_dict()
        group = st["param_groups"][0]
        params = list(model.parameters())
        adam_steps = {}
        for idx, pstate in st["state"].items():
            name = names[id(params[idx])]
            tensors.append((f"adam.exp_avg.{name}", pstate["exp_avg"]))
            tensors.append((f"adam.exp_avg_sq.{name}", pstate["exp_avg_sq"]))
            adam_steps[name] = float(pstate["step"])
        meta["adam"] = {"lr": group["lr"], "betas": list(group["betas"]), "eps": group["eps"], "steps": adam_steps}
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(model.cfg.arch_hash())
    mbytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(mbytes)))
    buf.write(mbytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, ten in tensors:
        nb = name.encode()
        arr = ten.detach().cpu().numpy()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path: str | os.PathLike, expect: DenoiserConfig | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 32 + 32 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a texforge checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: integrity check failed (corrupt or truncated)")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    arch_hash = body[off : off + 32]
    off += 32
    (mlen,) = struct.unpack_from("<I", body, off)
    off += 4
    meta = json.loads(body[off : off + mlen])
    off += mlen
    arch = meta["arch"]
    cfg = DenoiserConfig(**{**arch, "mults": tuple(arch["mults"])})
    if cfg.arch_hash() != arch_hash:
        raise CheckpointError(f"{path}: architecture hash does not match metadata")
    if expect is not None and expect.arch_hash() != arch_hash:
        raise CheckpointError(f"{path}: architecture mismatch (checkpoint {arch}, expected {expect.to_json()})")
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(body):
            raise CheckpointError(f"{path}: tensor {name} is truncated")
        tensors[name] = torch.from_numpy(np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=off)
                                         .astype(np.float32).reshape(shape))
        off += nbytes
    if off != len(body):
        raise CheckpointError(f"{path}: unexpected trailing data")
    model = Denoiser(cfg)
    weights = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    try:
        model.load_state_dict(weights, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    opt_state = None
    if "adam" in meta:
        opt_state = {"meta": meta["adam"], "tensors": {k: v for k, v in tensors.items() if k.startswith("adam.")}}
    return Checkpoint(model, int(meta.get("step", 0)), opt_state, meta)


def restore_optimizer(ckpt: Checkpoint, cfg: TrainConfig) -> torch.optim.Adam:
    """Rebuild Adam for ``ckpt.model`` with moments restored from the checkpoint."""
    opt = make_optimizer(ckpt.model, cfg)
    if ckpt.optimizer_state is None:
        return opt
    meta, tens = ckpt.optimizer_state["meta"], ckpt.optimizer_state["tensors"]
    for name, p in ckpt.model.named_parameters():
        if name in meta["steps"]:
            opt.state[p] = {
                "step": torch.tensor(meta["steps"][name]),
                "exp_avg": tens[f"adam.exp_avg.{name}"].clone(),
                "exp_avg_sq": tens[f"adam.exp_avg_sq.{name}"].clone(),
            }
    return opt
