import math

import numpy as np
import pytest
import torch

from texforge import diffusion as dm
from texforge.diffusion import (DenoiserConfig, NoiseSchedule, TrainConfig, TrainState, add_noise, build_denoiser,
                                cfg_predict, load_checkpoint, make_optimizer, restore_optimizer, sample,
                                save_checkpoint, train, training_step)
from texforge.errors import CheckpointError, InvalidArgumentError, SamplingError, TrainingError

TINY = DenoiserConfig(base_width=4, mults=(1, 1, 1), groups=2, image_size=8)
SMALL = DenoiserConfig(base_width=8, mults=(1, 2, 2), groups=4, image_size=16)


class ConstModel(torch.nn.Module):
    """Noise predictor returning fixed values for conditional / null inputs."""

    def __init__(self, e_cond, e_uncond):
        super().__init__()
        self.dummy = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
        self.e_cond, self.e_uncond = e_cond, e_uncond

    def forward(self, x, t, cond):
        v = self.e_uncond if cond is None else self.e_cond
        return torch.full_like(x, v)


# -- schedule and forward process ---------------------------------------------------

def test_schedule_endpoints_and_monotone():
    s = NoiseSchedule(100)
    g = s.gammas
    assert len(g) == 100
    assert abs(g[0] - 1) <= 1e-6 and abs(g[-1]) <= 1e-6
    assert np.all(np.diff(g) < 0)
    assert NoiseSchedule.gamma(0.0) == 1.0 and abs(NoiseSchedule.gamma(1.0)) < 1e-6
    # cos^2 at the midpoint
    assert NoiseSchedule.gamma(0.5) == pytest.approx(0.5, abs=1e-15)


def test_schedule_needs_two_steps():
    with pytest.raises(InvalidArgumentError):
        NoiseSchedule(1)


def test_add_noise_endpoints(rng):
    s = NoiseSchedule(10)
    x0 = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 4, 4)))
    eps = torch.from_numpy(rng.normal(size=(2, 3, 4, 4)))
    assert torch.equal(add_noise(x0, 0, eps, s), x0)
    assert torch.equal(add_noise(x0, 9, eps, s), eps)


def test_add_noise_quarter():
    s = NoiseSchedule(100)

    class Quarter(NoiseSchedule):
        def gamma_at(self, k):
            return np.full(np.shape(k), 0.25)

    out = add_noise(torch.ones(1, 3, 4, 4, dtype=torch.float64), 5, torch.zeros(1, 3, 4, 4, dtype=torch.float64),
                    Quarter(s.timesteps))
    assert torch.equal(out, torch.full((1, 3, 4, 4), 0.5, dtype=torch.float64))


def test_add_noise_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        add_noise(torch.zeros(1, 3, 4, 4), 1, torch.zeros(1, 3, 4, 5), NoiseSchedule())


@pytest.mark.parametrize("k", [10, 50, 90])
def test_add_noise_moments(k):
    s = NoiseSchedule(100)
    n = 20_000
    x0 = torch.full((n,), 0.7, dtype=torch.float64)
    gen = torch.Generator().manual_seed(k)
    xt = add_noise(x0, k, torch.randn(n, generator=gen, dtype=torch.float64), s)
    g = s.gammas[k]
    se_mean = math.sqrt((1 - g) / n)
    assert abs(xt.mean().item() - math.sqrt(g) * 0.7) < 3 * se_mean
    se_var = (1 - g) * math.sqrt(2 / (n - 1))
    assert abs(xt.var().item() - (1 - g)) < 3 * se_var


# -- denoiser ---------------------------------------------------------------------------

def test_default_size_and_zero_init():
    m = build_denoiser()
    assert dm.n_params(m) <= 1_000_000
    assert torch.count_nonzero(m.conv_in.weight[:, 3:]) == 0
    assert all(torch.isfinite(p).all() for p in m.parameters())


def test_zero_init_condition_independent(rng):
    m = build_denoiser(SMALL, seed=1)
    x = torch.from_numpy(rng.normal(size=(2, 3, 16, 16)).astype(np.float32))
    c1 = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
    c2 = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
    t = torch.tensor([3, 70])
    with torch.no_grad():
        assert torch.equal(m(x, t, c1), m(x, t, c2))
        assert torch.equal(m(x, t, c1), m(x, t, None))


def test_velocity_skip_formula(rng):
    m = build_denoiser(SMALL, seed=2).double()
    x = torch.from_numpy(rng.normal(size=(3, 3, 16, 16)))
    c = torch.from_numpy(rng.uniform(-1, 1, (3, 3, 16, 16)))
    t = torch.tensor([0, 40, 99])
    g = NoiseSchedule(100).gamma_at([0, 40, 99])
    with torch.no_grad():
        raw = m.network(x, t, c)
        eps = m(x, t, c)
    for i in range(3):
        want = math.sqrt(g[i]) * raw[i] + math.sqrt(1 - g[i]) * x[i]
        torch.testing.assert_close(eps[i], want, rtol=1e-12, atol=1e-12)
    # pure noise: the estimate is x_t itself; clean image: it is the raw output
    assert torch.equal(eps[2], x[2])
    assert torch.equal(eps[0], raw[0])


def test_predict_x0_matches_noise_route(rng):
    m = build_denoiser(SMALL, seed=3).double()
    with torch.no_grad():
        m.conv_in.weight.normal_(0, 0.1)
        x = torch.from_numpy(rng.normal(size=(2, 3, 16, 16)))
        c = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 16, 16)))
        for k, s in [(10, 1.0), (60, 2.5), (98, 1.5)]:
            t = torch.full((2,), k)
            ab = NoiseSchedule().gamma_at(k)
            via_eps = (x - math.sqrt(1 - ab) * cfg_predict(m, x, t, c, s)) / math.sqrt(ab)
            torch.testing.assert_close(m.predict_x0(x, t, c, s), via_eps, rtol=1e-9, atol=1e-9)
        # at gamma = 0 the estimate is minus the guided velocity
        t = torch.full((2,), 99)
        torch.testing.assert_close(m.predict_x0(x, t, c, 2.0),
                                   -(m.network(x, t, None) + 2.0 * (m.network(x, t, c) - m.network(x, t, None))))


def test_eps_head_option(rng):
    cfg = DenoiserConfig(base_width=8, mults=(1, 2, 2), groups=4, image_size=16, prediction="eps")
    m = build_denoiser(cfg, seed=2)
    x = torch.from_numpy(rng.normal(size=(1, 3, 16, 16)).astype(np.float32))
    with torch.no_grad():
        assert torch.equal(m(x, torch.tensor([99]), None), m.network(x, torch.tensor([99]), None))
    with pytest.raises(InvalidArgumentError):
        m.predict_x0(x, torch.tensor([5]), None)
    with pytest.raises(InvalidArgumentError):
        DenoiserConfig(prediction="x0")


def test_velocity_timestep_range_and_schedule_mismatch():
    m = build_denoiser(TINY)
    x = torch.zeros(1, 3, 8, 8)
    with pytest.raises(InvalidArgumentError):
        m(x, torch.tensor([100]), None)
    with pytest.raises(InvalidArgumentError):
        m(x, torch.tensor([-1]), None)
    with pytest.raises(InvalidArgumentError, match="100 timesteps"):
        sample(m, x, NoiseSchedule(50), steps=5)


@pytest.mark.parametrize("size", [32, 64])
def test_output_shape(size):
    m = build_denoiser(DenoiserConfig(base_width=8, groups=4, image_size=size))
    x = torch.zeros(1, 3, size, size)
    with torch.no_grad():
        assert m(x, torch.tensor([5]), x).shape == x.shape


@pytest.mark.parametrize("delta", [4, 8, 12])
def test_circular_shift_equivariance(rng, delta):
    m = build_denoiser(DenoiserConfig(base_width=8, groups=4), seed=2, dtype=torch.float64)
    with torch.no_grad():
        m.conv_in.weight[:, 3:].normal_()  # make the condition path active
    x = torch.from_numpy(rng.normal(size=(1, 3, 32, 32)))
    c = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 32, 32)))
    t = torch.tensor([40])
    roll = lambda a: torch.roll(a, (delta, delta), dims=(2, 3))
    with torch.no_grad():
        out = m(x, t, c)
        shifted = m(roll(x), t, roll(c))
    assert torch.max(torch.abs(shifted - roll(out))).item() < 1e-5


def test_zero_padding_breaks_equivariance(rng):
    m = build_denoiser(DenoiserConfig(base_width=8, groups=4, padding="zeros"), seed=2, dtype=torch.float64)
    x = torch.from_numpy(rng.normal(size=(1, 3, 32, 32)))
    roll = lambda a: torch.roll(a, (4, 4), dims=(2, 3))
    with torch.no_grad():
        diff = m(roll(x), torch.tensor([40]), None) - roll(m(x, torch.tensor([40]), None))
    assert torch.max(torch.abs(diff)).item() > 1e-3


def test_forward_size_mismatch():
    m = build_denoiser(SMALL)
    with pytest.raises(InvalidArgumentError):
        m(torch.zeros(1, 3, 16, 16), torch.tensor([1]), torch.zeros(1, 3, 8, 8))
    with pytest.raises(InvalidArgumentError):
        DenoiserConfig(image_size=30)


# -- training ------------------------------------------------------------------------------

def test_perfect_prediction_loss_zero(monkeypatch):
    seen = {}
    real = dm.add_noise

    def spy(x0, t, eps, sched):
        seen["eps"] = eps
        return real(x0, t, eps, sched)

    monkeypatch.setattr(dm, "add_noise", spy)
    x0 = torch.zeros(4, 3, 8, 8)
    loss, _ = dm.diffusion_loss(None, x0, x0, NoiseSchedule(), 0.1, torch.Generator().manual_seed(0),
                                predict=lambda x, t, c: seen["eps"])
    assert loss.item() == 0.0


def test_zero_denoiser_loss_is_unit():
    zero = lambda x, t, c: torch.zeros_like(x)
    x0 = torch.zeros(4, 3, 32, 32, dtype=torch.float64)
    loss, _ = dm.diffusion_loss(None, x0, x0, NoiseSchedule(), 0.1, torch.Generator().manual_seed(1), predict=zero)
    assert loss.item() == pytest.approx(1.0, rel=0.05)


def _loss_fn(model, cond, x0, sched, seed):
    loss, _ = dm.diffusion_loss(model, cond, x0, sched, 0.5, torch.Generator().manual_seed(seed))
    return loss


def test_gradient_check_finite_differences(rng):
    m = build_denoiser(TINY, seed=3, dtype=torch.float64)
    assert dm.n_params(m) <= 5000
    with torch.no_grad():
        m.conv_in.weight[:, 3:].normal_(std=0.3)
    sched = NoiseSchedule()
    cond = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 8, 8)))
    x0 = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 8, 8)))
    m.zero_grad()
    _loss_fn(m, cond, x0, sched, 7).backward()
    h = 1e-4
    worst = 0.0
    with torch.no_grad():
        for p in m.parameters():
            flat, grad = p.view(-1), p.grad.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = _loss_fn(m, cond, x0, sched, 7).item()
                flat[i] = old - h
                dn = _loss_fn(m, cond, x0, sched, 7).item()
                flat[i] = old
                num = (up - dn) / (2 * h)
                a = grad[i].item()
                worst = max(worst, abs(a - num) / max(abs(a) + abs(num), 1e-6))
    assert worst < 1e-4


def test_training_step_returns_named_grads():
    m = build_denoiser(TINY, dtype=torch.float64)
    x = torch.zeros(2, 3, 8, 8, dtype=torch.float64)
    loss, grads = training_step(m, (x, x), NoiseSchedule(), TrainConfig(), torch.Generator().manual_seed(0))
    assert np.isfinite(loss)
    assert set(grads) == {n for n, _ in m.named_parameters()}


def test_training_step_non_finite_reports_ids():
    m = build_denoiser(TINY, dtype=torch.float64)
    x = torch.full((2, 3, 8, 8), float("nan"), dtype=torch.float64)
    with pytest.raises(TrainingError, match="ex-7"):
        training_step(m, (x, x), NoiseSchedule(), TrainConfig(), torch.Generator().manual_seed(0), ["ex-3", "ex-7"])
    with pytest.raises(InvalidArgumentError):
        training_step(m, (x[:0], x[:0]), NoiseSchedule(), TrainConfig(), torch.Generator())


def test_train_config_invariants():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(p_uncond=1.5)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(batch_size=0)


def test_training_loss_bit_reproducible_float64(rng):
    dm.set_deterministic(True)
    cond = torch.from_numpy(rng.uniform(-1, 1, (4, 3, 8, 8)))
    x0 = torch.from_numpy(rng.uniform(-1, 1, (4, 3, 8, 8)))
    runs = []
    for _ in range(2):
        m = build_denoiser(TINY, seed=5, dtype=torch.float64)
        loss, grads = training_step(m, (cond, x0), NoiseSchedule(), TrainConfig(), dm.step_generator(0, 3))
        runs.append((loss, b"".join(g.numpy().tobytes() for g in grads.values())))
    assert runs[0] == runs[1]


def _toy_data(n=6, size=8):
    r = np.random.default_rng(0)
    x0 = torch.from_numpy(r.uniform(-1, 1, (n, 3, 1, 1)).astype(np.float32)).expand(n, 3, size, size).contiguous()
    return x0 * 0.8, x0


def test_resume_matches_uninterrupted(tmp_path):
    dm.set_deterministic(True)
    cond, x0 = _toy_data()
    cfg = TrainConfig(batch_size=4, steps=6, lr=1e-3, seed=4, deterministic=True, image_size=8)
    sched = NoiseSchedule()
    logs_a = []
    full = train(_state(cfg), cond, x0, sched, cfg, logs_a.append)

    half_cfg = TrainConfig(**{**cfg.__dict__, "steps": 3})
    st = train(_state(cfg), cond, x0, sched, half_cfg)
    save_checkpoint(st.model, tmp_path / "c.ckpt", st.step, st.optimizer)
    ck = load_checkpoint(tmp_path / "c.ckpt", expect=TINY)
    resumed = TrainState(ck.model, restore_optimizer(ck, cfg), ck.step)
    logs_b = []
    resumed = train(resumed, cond, x0, sched, cfg, logs_b.append)
    assert [r["loss"] for r in logs_b] == [r["loss"] for r in logs_a[3:]]
    for (n, a), (_, b) in zip(full.model.state_dict().items(), resumed.model.state_dict().items()):
        assert torch.equal(a, b), n
    assert all(r["seconds"] is None for r in logs_a)


def _state(cfg):
    m = build_denoiser(TINY, seed=1)
    return TrainState(m, make_optimizer(m, cfg), 0)


def test_training_reduces_loss_on_toy_task():
    dm.set_deterministic(False)
    cond, x0 = _toy_data(8, 8)
    cfg = TrainConfig(batch_size=8, steps=600, lr=3e-3, seed=0, image_size=8)
    logs = []
    train(_state(cfg), cond, x0, NoiseSchedule(), cfg, logs.append)
    first = np.mean([r["loss"] for r in logs[:20]])
    last = np.mean([r["loss"] for r in logs[-50:]])
    assert last < 0.5 * first


# -- guidance and sampling -------------------------------------------------------------------

def test_cfg_scalar_probe():
    m = ConstModel(0.4, 0.2)
    x = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    assert torch.allclose(cfg_predict(m, x, 1, x, 2.0), torch.full_like(x, 0.6), rtol=0, atol=1e-15)


def test_cfg_unit_scale_is_conditional_exactly(rng):
    m = build_denoiser(SMALL, seed=3)
    with torch.no_grad():
        m.conv_in.weight[:, 3:].normal_()
    x = torch.from_numpy(rng.normal(size=(1, 3, 16, 16)).astype(np.float32))
    c = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32))
    with torch.no_grad():
        assert torch.equal(cfg_predict(m, x, 10, c, 1.0), m(x, torch.tensor([10]), c))


@pytest.mark.parametrize("s", [1.0, 1.5, 3.0, 10.0])
def test_cfg_null_condition(s):
    m = ConstModel(0.4, 0.2)
    x = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    assert torch.equal(cfg_predict(m, x, 1, None, s), torch.full_like(x, 0.2))


@pytest.mark.parametrize("s", [1.5, 2.0, 4.0, 7.25])
def test_cfg_affine_in_scale(s):
    # dyadic predictions keep every product and difference exact
    m = ConstModel(0.375, -0.125)
    x = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    lhs = cfg_predict(m, x, 1, x, s) - cfg_predict(m, x, 1, x, 1.0)
    assert torch.equal(lhs, torch.full_like(x, (s - 1) * (0.375 + 0.125)))


def test_cfg_rejects_small_scale():
    with pytest.raises(InvalidArgumentError):
        cfg_predict(ConstModel(0, 0), torch.zeros(1, 3, 4, 4), 1, None, 0.9)


def test_sample_shape_and_determinism(rng):
    m = build_denoiser(SMALL, seed=4)
    c = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
    a = sample(m, c, NoiseSchedule(), steps=10, s=1.5, seed=9)
    b = sample(m, c, NoiseSchedule(), steps=10, s=1.5, seed=9)
    assert a.shape == c.shape and torch.equal(a, b)
    assert a.min() >= -1 and a.max() <= 1
    assert sample(m, c[0], NoiseSchedule(), steps=5).shape == c[0].shape


def test_sample_step_bounds():
    m = build_denoiser(TINY)
    with pytest.raises(InvalidArgumentError):
        sample(m, torch.zeros(1, 3, 8, 8), NoiseSchedule(), steps=101)
    with pytest.raises(InvalidArgumentError):
        sample(m, None, NoiseSchedule(), steps=5)


def test_sample_non_finite_reports_step():
    m = ConstModel(float("nan"), float("nan"))
    with pytest.raises(SamplingError) as e:
        sample(m, torch.zeros(1, 3, 4, 4, dtype=torch.float64), NoiseSchedule(), steps=10)
    assert e.value.step == 0


def test_sampling_timesteps_cover_range():
    ks = dm.sampling_timesteps(NoiseSchedule(), 100)
    assert ks[0] == 99 and ks[-1] == 0 and len(ks) == 100
    ks = dm.sampling_timesteps(NoiseSchedule(), 10)
    assert ks[0] == 99 and ks[-1] == 0 and len(ks) == 11


def test_perfect_denoiser_recovers_target():
    # an oracle predictor that knows x0 makes the sampler land on x0
    x0 = torch.full((1, 3, 4, 4), 0.25, dtype=torch.float64)
    g = NoiseSchedule().gammas

    class Oracle(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.p = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))

        def forward(self, x, t, cond):
            gt = g[int(t[0])]
            return (x - math.sqrt(gt) * x0) / math.sqrt(1 - gt)

    out = sample(Oracle(), torch.zeros_like(x0), NoiseSchedule(), steps=20)
    assert torch.allclose(out, x0, atol=1e-9)


# -- checkpoints -------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = build_denoiser(SMALL, seed=8)
    save_checkpoint(m, tmp_path / "m.ckpt", step=12, extra={"note": "x"})
    ck = load_checkpoint(tmp_path / "m.ckpt")
    assert ck.step == 12 and ck.model.cfg == SMALL and ck.meta["extra"] == {"note": "x"}
    for (n, a), (_, b) in zip(m.state_dict().items(), ck.model.state_dict().items()):
        assert a.numpy().tobytes() == b.numpy().tobytes(), n


def test_checkpoint_architecture_mismatch(tmp_path):
    save_checkpoint(build_denoiser(SMALL), tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="architecture"):
        load_checkpoint(tmp_path / "m.ckpt", expect=DenoiserConfig(**{**SMALL.to_json(), "image_size": 32}))


@pytest.mark.parametrize("mutate", ["append", "truncate", "flip", "magic"])
def test_checkpoint_corruption(tmp_path, mutate):
    p = tmp_path / "m.ckpt"
    save_checkpoint(build_denoiser(TINY), p)
    data = bytearray(p.read_bytes())
    if mutate == "append":
        data += b"\x00\x01"
    elif mutate == "truncate":
        data = data[:-7]
    elif mutate == "flip":
        data[len(data) // 2] ^= 0xFF
    else:
        data[:4] = b"XXXX"
    p.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_container_layout(tmp_path):
    import hashlib
    import struct
    save_checkpoint(build_denoiser(TINY), tmp_path / "m.ckpt")
    data = (tmp_path / "m.ckpt").read_bytes()
    assert data[:8] == b"TEXFCKPT"
    assert struct.unpack("<I", data[8:12])[0] == 1
    assert data[12:44] == TINY.arch_hash()
    assert data[-32:] == hashlib.sha256(data[:-32]).digest()
