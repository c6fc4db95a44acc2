import numpy as np
import pytest
import torch

from dancediff.diffusion import cosine_schedule, make_rng
from dancediff.errors import ConfigError, NonFiniteLoss, TooShort
from dancediff.kinematics import forward_kinematics
from dancediff.model import (
    EMA,
    Adan,
    Denoiser,
    LossWeights,
    ModelConfig,
    TorchSkeleton,
    ema_model,
    fk_torch,
    load_checkpoint,
    loss_contact,
    loss_joint,
    loss_simple,
    loss_vel,
    make_optimizer,
    make_sampler_fn,
    make_train_state,
    rot6d_to_matrix_torch,
    save_checkpoint,
    timestep_embedding,
    total_loss,
    train_step,
)
from dancediff.motion_io import POSE_DIM, MotionClip
from dancediff.rotations import rot6d_to_matrix

TINY = ModelConfig(
    layers=2, heads=2, model_dim=32, mlp_dim=64, dropout=0.0, seq_len=16
)


def random_pose_batch(gen, b, n):
    return torch.tensor(gen.standard_normal((b, n, POSE_DIM)), dtype=torch.float32)


# --------------------------------------------------------------------------
# torch kinematics mirrors the numpy reference


def test_rot6d_torch_matches_numpy(rng):
    r6 = rng.standard_normal((10, 6)).astype(np.float32)
    R_np = rot6d_to_matrix(r6)
    R_t = rot6d_to_matrix_torch(torch.tensor(r6)).numpy()
    np.testing.assert_allclose(R_t, R_np, atol=1e-5)


def test_fk_torch_matches_numpy_fk(skel, rng):
    data = rng.standard_normal((5, POSE_DIM)).astype(np.float32)
    clip = MotionClip(data=data, fps=30.0)
    pos_np = forward_kinematics(skel, clip)
    pos_t = fk_torch(TorchSkeleton(skel), torch.tensor(data)).numpy()
    np.testing.assert_allclose(pos_t, pos_np, atol=1e-4)


# --------------------------------------------------------------------------
# losses


def test_losses_zero_at_exact_prediction(skel, rng):
    x = random_pose_batch(rng, 2, 8)
    tskel = TorchSkeleton(skel)
    assert loss_simple(x, x).item() == 0.0
    assert loss_joint(x, x, tskel).item() == 0.0
    assert loss_vel(x, x).item() == 0.0


def test_loss_simple_hand_value():
    x = torch.zeros(2, 3, POSE_DIM)
    x_hat = torch.full((2, 3, POSE_DIM), 2.0)
    assert loss_simple(x, x_hat).item() == pytest.approx(4.0)


def test_loss_vel_hand_value():
    # x constant, x_hat steps by +1 each frame in a single channel:
    # every delta differs by 1 in one of 151 channels -> sum over channels = 1
    x = torch.zeros(1, 4, POSE_DIM)
    x_hat = torch.zeros(1, 4, POSE_DIM)
    x_hat[0, :, 7] = torch.arange(4.0)
    assert loss_vel(x, x_hat).item() == pytest.approx(1.0)
    with pytest.raises(TooShort):
        loss_vel(x[:, :1], x_hat[:, :1])


def test_loss_joint_root_translation_hand_value(skel):
    # identical rotations, root shifted by (1, 0, 0): every joint moves by
    # exactly that vector, so per-frame summed squared distance = 24
    base = torch.zeros(1, 3, POSE_DIM)
    base[..., 4:148:6] = 1.0  # identity rot6d: (1,0,0,0,1,0) per joint
    base[..., 8:148:6] = 1.0
    shifted = base.clone()
    shifted[..., 148] += 1.0
    got = loss_joint(base, shifted, TorchSkeleton(skel)).item()
    assert got == pytest.approx(24.0, rel=1e-5)


def test_loss_contact_zero_cases(skel, rng):
    tskel = TorchSkeleton(skel)
    # static pose -> zero displacement -> zero loss regardless of contacts
    x = torch.zeros(1, 6, POSE_DIM)
    x[..., 4:148:6] = 1.0
    x[..., 8:148:6] = 1.0
    x[..., :4] = 10.0
    assert loss_contact(x, tskel).item() == pytest.approx(0.0, abs=1e-10)
    # strongly negative contact logits shrink the loss toward zero even
    # when the feet move
    moving = x.clone()
    moving[..., 148] = torch.arange(6.0)
    moving[..., :4] = -40.0
    assert loss_contact(moving, tskel).item() == pytest.approx(0.0, abs=1e-10)
    assert loss_contact(moving.clone().fill_(0.0).add(moving * 0 + moving), tskel) >= 0


def test_loss_contact_gradient_reaches_contact_logits(skel):
    x = torch.zeros(1, 6, POSE_DIM, requires_grad=True)
    with torch.no_grad():
        x[..., 4:148:6] = 1.0
        x[..., 8:148:6] = 1.0
        x[..., 148] = torch.arange(6.0)  # feet translate with the root
    loss = loss_contact(x, TorchSkeleton(skel))
    loss.backward()
    assert x.grad[..., :4].abs().sum().item() > 0  # contact logits get signal
    assert x.grad[..., 148].abs().sum().item() > 0  # and so does the motion


def test_total_loss_weights_are_respected(skel, rng):
    x = random_pose_batch(rng, 1, 6)
    x_hat = random_pose_batch(rng, 1, 6)
    tskel = TorchSkeleton(skel)
    w0 = LossWeights(pos=0.0, vel=0.0, contact=0.0)
    assert total_loss(x, x_hat, tskel, w0).item() == pytest.approx(
        loss_simple(x, x_hat).item(), rel=1e-6
    )
    w = LossWeights(pos=2.0, vel=3.0, contact=0.5)
    expected = (
        loss_simple(x, x_hat)
        + 2.0 * loss_joint(x, x_hat, tskel)
        + 3.0 * loss_vel(x, x_hat)
        + 0.5 * loss_contact(x_hat, tskel)
    ).item()
    assert total_loss(x, x_hat, tskel, w).item() == pytest.approx(expected, rel=1e-6)


def test_total_loss_gradient_matches_central_differences(skel):
    gen = np.random.default_rng(17)
    x = random_pose_batch(gen, 1, 4).double()
    x_hat = random_pose_batch(gen, 1, 4).double().requires_grad_(True)
    tskel = TorchSkeleton(skel, dtype=torch.float64)
    w = LossWeights(pos=1.0, vel=1.0, contact=1.0)
    total_loss(x, x_hat, tskel, w).backward()
    eps = 1e-6
    for idx in [(0, 0, 2), (0, 1, 30), (0, 2, 148), (0, 3, 150), (0, 0, 100)]:
        plus = x_hat.detach().clone()
        plus[idx] += eps
        minus = x_hat.detach().clone()
        minus[idx] -= eps
        num = (
            total_loss(x, plus, tskel, w) - total_loss(x, minus, tskel, w)
        ).item() / (2 * eps)
        assert x_hat.grad[idx].item() == pytest.approx(num, rel=1e-4, abs=1e-7)


# --------------------------------------------------------------------------
# network


def test_timestep_embedding_shape_and_distinctness():
    t = torch.tensor([1, 2, 500])
    emb = timestep_embedding(t, 64)
    assert emb.shape == (3, 64)
    assert not torch.allclose(emb[0], emb[1])
    assert torch.isfinite(emb).all()


def test_denoiser_shapes_and_null_conditioning():
    torch.manual_seed(0)
    model = Denoiser(TINY).eval()
    z = torch.randn(2, 16, POSE_DIM)
    t = torch.tensor([3, 7])
    cond = torch.randn(2, 16, TINY.cond_dim)
    with torch.no_grad():
        out = model(z, t, cond)
        out_null = model(z, t, None)
        masked = model(z, t, cond, null_mask=torch.tensor([True, True]))
    assert out.shape == z.shape
    assert not torch.allclose(out, out_null)
    # null_mask on every sample must equal dropping the conditioning entirely
    torch.testing.assert_close(masked, out_null)


def test_denoiser_conditioning_changes_output():
    torch.manual_seed(1)
    model = Denoiser(TINY).eval()
    z = torch.randn(1, 16, POSE_DIM)
    t = torch.tensor([5])
    with torch.no_grad():
        a = model(z, t, torch.zeros(1, 16, TINY.cond_dim))
        b = model(z, t, torch.ones(1, 16, TINY.cond_dim))
    assert not torch.allclose(a, b)


def test_denoiser_timestep_changes_output():
    torch.manual_seed(2)
    model = Denoiser(TINY).eval()
    z = torch.randn(1, 16, POSE_DIM)
    cond = torch.randn(1, 16, TINY.cond_dim)
    with torch.no_grad():
        a = model(z, torch.tensor([1]), cond)
        b = model(z, torch.tensor([40]), cond)
    assert not torch.allclose(a, b)


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(model_dim=30, heads=4)  # not divisible
    with pytest.raises(ConfigError):
        ModelConfig(layers=0)


# --------------------------------------------------------------------------
# optimizer / EMA


def quad_overfit(opt_name, steps=1000, lr=0.05):
    torch.manual_seed(0)
    p = torch.nn.Parameter(torch.tensor([5.0, -3.0]))
    target = torch.tensor([1.0, 2.0])
    opt = make_optimizer(opt_name, [p], lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        loss = ((p - target) ** 2).sum()
        loss.backward()
        opt.step()
    return (p.detach() - target).abs().max().item()


def test_adan_minimizes_quadratic():
    assert quad_overfit("adan") < 1e-3


def test_adam_minimizes_quadratic():
    assert quad_overfit("adam") < 1e-3


def test_make_optimizer_rejects_unknown():
    with pytest.raises(ConfigError):
        make_optimizer("sgd-ish", [torch.nn.Parameter(torch.zeros(1))], lr=0.1)


def test_adan_step_decreases_loss_on_model():
    torch.manual_seed(3)
    model = Denoiser(TINY)
    opt = Adan(model.parameters(), lr=1e-3)
    z = torch.randn(2, 16, POSE_DIM)
    t = torch.tensor([4, 9])
    cond = torch.randn(2, 16, TINY.cond_dim)
    target = torch.randn(2, 16, POSE_DIM)

    def loss_val():
        return ((model(z, t, cond) - target) ** 2).mean()

    before = loss_val().item()
    for _ in range(30):
        opt.zero_grad()
        loss_val().backward()
        opt.step()
    assert loss_val().item() < before


def test_ema_converges_to_constant_weights():
    torch.manual_seed(4)
    model = torch.nn.Linear(3, 3)
    ema = EMA(model, decay=0.5)
    # freeze the live model; the shadow must converge geometrically to it
    for _ in range(40):
        ema.update(model)
    fresh = torch.nn.Linear(3, 3)
    ema.copy_to(fresh)
    for p, q in zip(model.parameters(), fresh.parameters()):
        torch.testing.assert_close(p, q, atol=1e-9, rtol=0)


def test_ema_lags_behind_moving_weights():
    model = torch.nn.Linear(1, 1, bias=False)
    with torch.no_grad():
        model.weight.fill_(0.0)
    ema = EMA(model, decay=0.9)
    with torch.no_grad():
        model.weight.fill_(1.0)
    ema.update(model)
    fresh = torch.nn.Linear(1, 1, bias=False)
    ema.copy_to(fresh)
    # one update from 0 toward 1 at decay 0.9 lands at exactly 0.1
    assert fresh.weight.item() == pytest.approx(0.1)


# --------------------------------------------------------------------------
# training step / checkpointing


def test_train_step_runs_and_updates(skel):
    state = make_train_state(TINY, skel, LossWeights(), "adan", lr=1e-3, seed=0)
    gen = np.random.default_rng(0)
    x = gen.standard_normal((2, 16, POSE_DIM)).astype(np.float32)
    c = gen.standard_normal((2, 16, TINY.cond_dim)).astype(np.float32)
    sched = cosine_schedule(10)
    before = [p.detach().clone() for p in state.model.parameters()]
    loss = train_step(state, x, c, sched, make_rng(0))
    assert np.isfinite(loss)
    assert state.step == 1
    changed = any(
        not torch.equal(p, q) for p, q in zip(before, state.model.parameters())
    )
    assert changed


def test_train_step_rejects_nonfinite_loss(skel):
    state = make_train_state(TINY, skel, LossWeights(), "adan", lr=1e-3, seed=0)
    x = np.full((1, 16, POSE_DIM), np.nan, dtype=np.float32)
    c = np.zeros((1, 16, TINY.cond_dim), dtype=np.float32)
    with pytest.raises(NonFiniteLoss):
        train_step(state, x, c, cosine_schedule(10), make_rng(0))


def test_checkpoint_round_trip(tmp_path, skel):
    state = make_train_state(TINY, skel, LossWeights(vel=2.0), "adan", lr=1e-3, seed=5)
    gen = np.random.default_rng(1)
    x = gen.standard_normal((2, 16, POSE_DIM)).astype(np.float32)
    c = gen.standard_normal((2, 16, TINY.cond_dim)).astype(np.float32)
    sched = cosine_schedule(10)
    for i in range(3):
        train_step(state, x, c, sched, make_rng(i))

    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state, extra={"timesteps": 10, "fps": 30.0})
    restored, extra = load_checkpoint(path, skel)
    assert extra == {"timesteps": 10, "fps": 30.0}
    assert restored.step == state.step
    assert restored.weights == state.weights
    for p, q in zip(state.model.parameters(), restored.model.parameters()):
        torch.testing.assert_close(p, q, atol=0, rtol=0)
    # EMA shadow restored exactly too
    a, b = ema_model(state), ema_model(restored)
    for p, q in zip(a.parameters(), b.parameters()):
        torch.testing.assert_close(p, q, atol=0, rtol=0)


def test_checkpoint_resume_training_continues(tmp_path, skel):
    state = make_train_state(TINY, skel, LossWeights(), "adan", lr=1e-3, seed=2)
    gen = np.random.default_rng(2)
    x = gen.standard_normal((1, 16, POSE_DIM)).astype(np.float32)
    c = gen.standard_normal((1, 16, TINY.cond_dim)).astype(np.float32)
    sched = cosine_schedule(10)
    train_step(state, x, c, sched, make_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    restored, _ = load_checkpoint(path, skel)
    loss = train_step(restored, x, c, sched, make_rng(1))
    assert np.isfinite(loss) and restored.step == 2


def test_sampler_fn_adapts_numpy_and_null(skel):
    torch.manual_seed(6)
    model = Denoiser(TINY).eval()
    fn = make_sampler_fn(model)
    z = np.random.default_rng(3).standard_normal((16, POSE_DIM))
    cond = np.random.default_rng(4).standard_normal((16, TINY.cond_dim))
    out = fn(z, 4, cond)
    assert out.shape == (16, POSE_DIM) and out.dtype == np.float64
    out_null = fn(z, 4, None)
    assert not np.allclose(out, out_null)
