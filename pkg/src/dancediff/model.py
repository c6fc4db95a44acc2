"""Transformer-decoder denoiser, training losses, Adan optimizer, and EMA.

The network predicts the clean pose sequence from a noised one: it projects
each 151-dim frame to the model width, adds a learned positional encoding,
and stacks decoder blocks of self-attention, cross-attention over the music
conditioning (with a timestep token prepended), and a feed-forward block;
the timestep embedding additionally modulates each block with FiLM.

Losses mirror the training objective: frame-space MSE, FK joint positions,
frame deltas, and the contact consistency term that scales foot displacement
by the model's own predicted contact probabilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    BadHeader,
    ConfigError,
    DataError,
    NonFiniteActivation,
    NonFiniteLoss,
    ShapeMismatch,
    TooShort,
)
from .motion_io import NUM_CONTACTS, POSE_DIM
from .skeleton import Skeleton


@dataclass
class ModelConfig:
    layers: int = 8
    heads: int = 8
    model_dim: int = 512
    mlp_dim: int = 1024
    dropout: float = 0.1
    cond_dim: int = 35
    seq_len: int = 150
    pose_dim: int = POSE_DIM
    cond_dropout_prob: float = 0.25
    ema_decay: float = 0.9999

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError("model_dim must be divisible by heads")
        for name in ("layers", "heads", "model_dim", "mlp_dim", "cond_dim", "seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class LossWeights:
    pos: float = 1.0
    vel: float = 1.0
    contact: float = 1.0

    def __post_init__(self):
        for name in ("pos", "vel", "contact"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"loss weight {name} must be finite and >= 0")


# ---------------------------------------------------------------------------
# Differentiable kinematics (mirrors kinematics.py; checked against it in tests)


def rot6d_to_matrix_torch(r: torch.Tensor) -> torch.Tensor:
    a, b = r[..., :3], r[..., 3:]
    c0 = F.normalize(a, dim=-1, eps=1e-8)
    b_orth = b - (b * c0).sum(-1, keepdim=True) * c0
    c1 = F.normalize(b_orth, dim=-1, eps=1e-8)
    c2 = torch.cross(c0, c1, dim=-1)
    return torch.stack([c0, c1, c2], dim=-1)


class TorchSkeleton:
    """Skeleton constants as torch tensors for differentiable FK."""

    def __init__(self, skel: Skeleton, device="cpu", dtype=torch.float32):
        self.parents = [int(p) for p in skel.parent_index]
        self.offsets = torch.as_tensor(skel.rest_offset, device=device, dtype=dtype)
        self.contact_joints = list(skel.contact_joints)
        self.num_joints = skel.num_joints


def fk_torch(tskel: TorchSkeleton, x: torch.Tensor) -> torch.Tensor:
    """Joint positions (..., J, 3) from pose vectors (..., 151)."""
    j = tskel.num_joints
    rot = x[..., NUM_CONTACTS : NUM_CONTACTS + 6 * j].reshape(*x.shape[:-1], j, 6)
    trans = x[..., -3:]
    local = rot6d_to_matrix_torch(rot)
    glob = [local[..., 0, :, :]]
    pos = [trans]
    for k in range(1, j):
        p = tskel.parents[k]
        glob.append(glob[p] @ local[..., k, :, :])
        pos.append(pos[p] + (glob[p] @ tskel.offsets[k]))
    return torch.stack(pos, dim=-2)


# ---------------------------------------------------------------------------
# Losses


def _check_pair(x, x_hat):
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"{tuple(x.shape)} vs {tuple(x_hat.shape)}")


def loss_simple(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every entry."""
    _check_pair(x, x_hat)
    return ((x - x_hat) ** 2).mean()


def loss_joint(x: torch.Tensor, x_hat: torch.Tensor, tskel: TorchSkeleton) -> torch.Tensor:
    """Per-frame squared distance between FK positions, averaged over frames."""
    _check_pair(x, x_hat)
    d = fk_torch(tskel, x) - fk_torch(tskel, x_hat)  # (..., N, J, 3)
    return (d**2).sum(dim=(-1, -2)).mean()


def loss_vel(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Squared difference of per-frame deltas, averaged over the N-1 deltas."""
    _check_pair(x, x_hat)
    if x.shape[-2] < 2:
        raise TooShort("velocity loss needs >= 2 frames")
    dv = torch.diff(x, dim=-2) - torch.diff(x_hat, dim=-2)
    return (dv**2).sum(dim=-1).mean()


def loss_contact(x_hat: torch.Tensor, tskel: TorchSkeleton) -> torch.Tensor:
    """Contact consistency: foot displacement scaled by the model's own
    predicted contact probability; gradient reaches both motion and contacts."""
    if x_hat.shape[-2] < 2:
        raise TooShort("contact loss needs >= 2 frames")
    feet = fk_torch(tskel, x_hat)[..., tskel.contact_joints, :]  # (..., N, 4, 3)
    disp = torch.diff(feet, dim=-3)  # (..., N-1, 4, 3)
    b_hat = torch.sigmoid(x_hat[..., :NUM_CONTACTS])[..., :-1, :]  # (..., N-1, 4)
    return ((disp * b_hat[..., None]) ** 2).sum(dim=(-1, -2)).mean()


def total_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    tskel: TorchSkeleton,
    weights: LossWeights,
) -> torch.Tensor:
    return (
        loss_simple(x, x_hat)
        + weights.pos * loss_joint(x, x_hat, tskel)
        + weights.vel * loss_vel(x, x_hat)
        + weights.contact * loss_contact(x_hat, tskel)
    )


# ---------------------------------------------------------------------------
# Network


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of the (integer) diffusion step."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.model_dim
        self.ln1 = nn.LayerNorm(d)
        self.self_attn = nn.MultiheadAttention(d, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.ln2 = nn.LayerNorm(d)
        self.cross_attn = nn.MultiheadAttention(d, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.ln3 = nn.LayerNorm(d)
        self.ff = nn.Sequential(
            nn.Linear(d, cfg.mlp_dim),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.mlp_dim, d),
        )
        self.film = nn.Linear(d, 2 * d)

    def forward(self, h, context, temb):
        q = self.ln1(h)
        h = h + self.self_attn(q, q, q, need_weights=False)[0]
        q = self.ln2(h)
        h = h + self.cross_attn(q, context, context, need_weights=False)[0]
        h = h + self.ff(self.ln3(h))
        scale, shift = self.film(temb).chunk(2, dim=-1)
        return h * (1.0 + scale[:, None, :]) + shift[:, None, :]


class Denoiser(nn.Module):
    """Predicts the clean pose sequence from (z_t, t, conditioning)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_dim
        self.input_proj = nn.Linear(cfg.pose_dim, d)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.seq_len, d))
        nn.init.normal_(self.pos_emb, std=0.02)
        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.cond_proj = nn.Linear(cfg.cond_dim, d)
        self.null_cond = nn.Parameter(torch.zeros(d))
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, cfg.pose_dim)

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        cond: torch.Tensor | None,
        null_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """z: (B, N, 151); t: (B,) int steps; cond: (B, Nc, D) or None.

        `null_mask` (B,) marks samples whose conditioning is replaced by the
        learned null embedding (classifier-free dropout). cond=None nulls the
        whole batch.
        """
        if z.dim() != 3 or z.shape[-1] != self.cfg.pose_dim:
            raise ShapeMismatch(f"expected (B, N, {self.cfg.pose_dim}), got {tuple(z.shape)}")
        b, n, _ = z.shape
        if n > self.cfg.seq_len:
            raise ShapeMismatch(f"sequence length {n} exceeds configured {self.cfg.seq_len}")
        temb = self.t_mlp(timestep_embedding(t, self.cfg.model_dim))  # (B, d)

        if cond is None:
            ctx = self.null_cond.expand(b, n, -1)
        else:
            ctx = self.cond_proj(cond)
            if null_mask is not None and null_mask.any():
                ctx = torch.where(
                    null_mask[:, None, None], self.null_cond.expand_as(ctx), ctx
                )
        context = torch.cat([temb[:, None, :], ctx], dim=1)

        h = self.input_proj(z) + self.pos_emb[:n]
        for block in self.blocks:
            h = block(h, context, temb)
        out = self.out_proj(self.ln_f(h))
        if not self.training and not torch.isfinite(out).all():
            raise NonFiniteActivation("denoiser produced non-finite output")
        return out


# ---------------------------------------------------------------------------
# Adan optimizer (adaptive Nesterov momentum), plus Adam fallback


class Adan(torch.optim.Optimizer):
    """Adan update: first moment of gradients, first moment of gradient
    differences, and a second moment of the Nesterov-corrected gradient."""

    def __init__(self, params, lr=4e-4, betas=(0.98, 0.92, 0.99), eps=1e-8, weight_decay=0.0):
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group in self.param_groups:
            b1, b2, b3 = group["betas"]
            lr, eps, wd = group["lr"], group["eps"], group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                g = p.grad
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["m"] = torch.zeros_like(p)
                    state["v"] = torch.zeros_like(p)
                    state["n"] = torch.zeros_like(p)
                    state["prev_grad"] = g.clone()
                state["step"] += 1
                k = state["step"]
                diff = g - state["prev_grad"]
                state["m"].mul_(b1).add_(g, alpha=1 - b1)
                state["v"].mul_(b2).add_(diff, alpha=1 - b2)
                update = g + b2 * diff
                state["n"].mul_(b3).addcmul_(update, update, value=1 - b3)
                bc1, bc2, bc3 = 1 - b1**k, 1 - b2**k, 1 - b3**k
                denom = (state["n"] / bc3).sqrt().add_(eps)
                step_dir = state["m"] / bc1 + b2 * state["v"] / bc2
                p.addcdiv_(step_dir, denom, value=-lr)
                if wd != 0:
                    p.div_(1 + lr * wd)
                state["prev_grad"].copy_(g)
        return loss


def make_optimizer(name: str, params, lr: float) -> torch.optim.Optimizer:
    if name == "adan":
        return Adan(params, lr=lr)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ConfigError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# EMA and training


class EMA:
    """Exponential moving average shadow of a module's parameters."""

    def __init__(self, model: nn.Module, decay: float):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: nn.Module):
        for k, v in model.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.decay).add_(v, alpha=1 - self.decay)
            else:
                self.shadow[k] = v.detach().clone()

    def copy_to(self, model: nn.Module):
        model.load_state_dict(self.shadow)


@dataclass
class TrainState:
    model: Denoiser
    ema: EMA
    optimizer: torch.optim.Optimizer
    tskel: TorchSkeleton
    weights: LossWeights
    step: int = 0


def make_train_state(
    cfg: ModelConfig,
    skel: Skeleton,
    weights: LossWeights | None = None,
    optimizer: str = "adan",
    lr: float = 4e-4,
    seed: int = 0,
) -> TrainState:
    torch.manual_seed(seed)
    model = Denoiser(cfg)
    return TrainState(
        model=model,
        ema=EMA(model, cfg.ema_decay),
        optimizer=make_optimizer(optimizer, model.parameters(), lr),
        tskel=TorchSkeleton(skel),
        weights=weights or LossWeights(),
    )


def train_step(state: TrainState, batch_x, batch_cond, sched, rng) -> float:
    """One optimizer step on a batch of (clip, conditioning) pairs.

    Per clip: t ~ Uniform[1, T], z_t from the forward process, conditioning
    nulled with the configured probability, then the weighted loss, one
    optimizer update and an EMA update. Raises NonFiniteLoss (without
    updating parameters) if the loss is NaN/inf.
    """
    model = state.model
    model.train()
    x = torch.as_tensor(np.asarray(batch_x), dtype=torch.float32)
    if x.dim() == 2:
        x = x[None]
    b = x.shape[0]
    cond = None
    if batch_cond is not None:
        cond = torch.as_tensor(np.asarray(batch_cond), dtype=torch.float32)
        if cond.dim() == 2:
            cond = cond[None]

    t = torch.as_tensor(rng.integers(1, sched.T + 1, size=b))
    ab = torch.as_tensor(sched.alpha_bar, dtype=torch.float32)[t]  # (B,)
    eps = torch.as_tensor(rng.standard_normal(x.shape), dtype=torch.float32)
    z = torch.sqrt(ab)[:, None, None] * x + torch.sqrt(1 - ab)[:, None, None] * eps

    null_mask = None
    if cond is not None:
        null_mask = torch.as_tensor(rng.random(b) < model.cfg.cond_dropout_prob)

    x_hat = model(z, t, cond, null_mask=null_mask)
    loss = total_loss(x, x_hat, state.tskel, state.weights)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss became non-finite at step {state.step}")
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.ema.update(model)
    state.step += 1
    return float(loss.detach())


def make_sampler_fn(model: Denoiser, device="cpu"):
    """Adapt the torch denoiser to the numpy sampler's model(z, t, cond) call."""
    model = model.to(device).eval()

    def fn(z: np.ndarray, t: int, cond: np.ndarray | None) -> np.ndarray:
        with torch.no_grad():
            zt = torch.as_tensor(z, dtype=torch.float32, device=device)[None]
            tt = torch.as_tensor([t], device=device)
            ct = None
            if cond is not None:
                ct = torch.as_tensor(cond, dtype=torch.float32, device=device)[None]
            return model(zt, tt, ct)[0].cpu().numpy().astype(np.float64)

    return fn


# ---------------------------------------------------------------------------
# Checkpoint format: JSON header line + concatenated float32 tensor blobs.
# EMA shadow tensors are stored under the reserved "ema/" name prefix.

CKPT_MAGIC = "CKPT1"


def save_checkpoint(path, state: TrainState, extra: dict | None = None) -> None:
    tensors: list[tuple[str, torch.Tensor]] = []
    for k, v in state.model.state_dict().items():
        tensors.append((k, v))
    for k, v in state.ema.shadow.items():
        tensors.append((f"ema/{k}", v))
    header = {
        "format": CKPT_MAGIC,
        "step": state.step,
        "config": asdict(state.model.cfg),
        "loss_weights": asdict(state.weights),
        "extra": extra or {},
        "tensors": [
            {"name": k, "shape": list(v.shape)} for k, v in tensors
        ],
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, v in tensors:
            f.write(v.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(
    path, skel: Skeleton, optimizer: str = "adan", lr: float = 4e-4
) -> tuple[TrainState, dict]:
    with open(path, "rb") as f:
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise BadHeader(f"{path}: {e}") from None
        if header.get("format") != CKPT_MAGIC:
            raise BadHeader(f"{path}: bad checkpoint magic")
        blobs = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise DataError(f"{path}: truncated tensor {spec['name']}")
            blobs[spec["name"]] = torch.from_numpy(
                np.frombuffer(buf, dtype="<f4").copy().reshape(shape)
            )

    cfg = ModelConfig(**header["config"])
    weights = LossWeights(**header["loss_weights"])
    state = make_train_state(cfg, skel, weights, optimizer=optimizer, lr=lr)
    model_sd = state.model.state_dict()
    for k in model_sd:
        if k in blobs:
            model_sd[k] = blobs[k].to(model_sd[k].dtype)
    state.model.load_state_dict(model_sd)
    for k in list(state.ema.shadow):
        name = f"ema/{k}"
        if name in blobs:
            state.ema.shadow[k] = blobs[name].to(state.ema.shadow[k].dtype)
    state.step = int(header["step"])
    return state, header.get("extra", {})


def ema_model(state: TrainState) -> Denoiser:
    """A fresh model carrying the EMA shadow weights, in eval mode."""
    model = Denoiser(state.model.cfg)
    state.ema.copy_to(model)
    return model.eval()
