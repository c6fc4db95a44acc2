"""Model-agnostic DDPM machinery.

The sampler follows the clean-sample parameterization: the model predicts
x-hat directly, each reverse step re-noises that prediction with the forward
marginal at t-1, and masked constraints are enforced by replacing known
regions with forward-diffused constraint values after every step. At the
terminal step the known region is written in clean, so constraints are
satisfied exactly in the output.

The `model` argument everywhere is a callable `model(z, t, cond_or_None)`
returning the predicted clean sample with the same shape as `z`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadHeader,
    BadOverlap,
    ConstraintShapeMismatch,
    DataError,
    InvalidSteps,
    ShapeMismatch,
    StepOutOfRange,
)
from .motion_io import POSE_DIM, MotionClip


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; spawnable for independent per-clip streams."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed cumulative signal fractions alpha_bar[0..T]."""

    T: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.shape != (self.T + 1,):
            raise DataError(f"alpha_bar must have T+1 entries, got {ab.shape}")
        if np.any(np.diff(ab) >= 0):
            raise DataError("alpha_bar must be strictly decreasing")
        if not (ab[0] >= 0.999 and ab[-1] < 0.01 and np.all(ab > 0) and np.all(ab <= 1)):
            raise DataError("alpha_bar out of range: need ab[0] >= 0.999, ab[T] < 0.01")


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine schedule: abar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2),
    with per-step beta clamped at `max_beta` to avoid underflow at large T."""
    if T < 1:
        raise InvalidSteps(f"T must be >= 1, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    ab_raw = f / f[0]
    beta = 1.0 - ab_raw[1:] / ab_raw[:-1]
    beta = np.clip(beta, 0.0, max_beta)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T=T, alpha_bar=alpha_bar)


def forward_diffuse(x: np.ndarray, t: int, sched: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """z_t = sqrt(abar_t) * x + sqrt(1 - abar_t) * noise."""
    if not 0 <= t <= sched.T:
        raise StepOutOfRange(f"t={t} outside [0, {sched.T}]")
    x = np.asarray(x)
    noise = np.asarray(noise)
    if x.shape != noise.shape:
        raise ShapeMismatch(f"x {x.shape} vs noise {noise.shape}")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * noise


def guided_prediction(x_cond: np.ndarray, x_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance mix: w * x_cond + (1 - w) * x_uncond."""
    x_cond = np.asarray(x_cond)
    x_uncond = np.asarray(x_uncond)
    if x_cond.shape != x_uncond.shape:
        raise ShapeMismatch(f"{x_cond.shape} vs {x_uncond.shape}")
    return w * x_cond + (1.0 - w) * x_uncond


def reverse_step(
    z_t: np.ndarray,
    t: int,
    x_hat: np.ndarray,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Re-noise the clean prediction to t-1; at t=1 return x_hat unmodified."""
    if not 1 <= t <= sched.T:
        raise StepOutOfRange(f"t={t} outside [1, {sched.T}]")
    if z_t.shape != x_hat.shape:
        raise ShapeMismatch(f"z {z_t.shape} vs x_hat {x_hat.shape}")
    if t == 1:
        return np.array(x_hat, copy=True)
    noise = rng.standard_normal(x_hat.shape)
    return forward_diffuse(x_hat, t - 1, sched, noise)


@dataclass
class EditConstraint:
    """Known values plus a binary mask (1 = constrained), both (N, 151)."""

    known: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.known = np.asarray(self.known, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=np.float32)
        if self.known.shape != self.mask.shape:
            raise ConstraintShapeMismatch(
                f"known {self.known.shape} vs mask {self.mask.shape}"
            )
        vals = np.unique(self.mask)
        if not np.isin(vals, [0.0, 1.0]).all():
            raise DataError("mask must be binary")


def apply_constraint(
    z_prev: np.ndarray,
    t_prev: int,
    constraint: EditConstraint,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Overwrite masked entries with the forward-diffused known values.

    At t_prev = 0 the known region is written clean (no noise). Returns the
    updated latent and the noise drawn (None at the terminal step), so
    callers can verify the masked region independently.
    """
    if z_prev.shape != constraint.known.shape:
        raise ConstraintShapeMismatch(
            f"z {z_prev.shape} vs constraint {constraint.known.shape}"
        )
    m = constraint.mask
    if t_prev == 0:
        out = np.where(m > 0, constraint.known, z_prev)
        return out, None
    noise = rng.standard_normal(z_prev.shape)
    noised_known = forward_diffuse(constraint.known, t_prev, sched, noise)
    return np.where(m > 0, noised_known, z_prev), noise


@dataclass(frozen=True)
class SamplerConfig:
    """Guidance weight, early-step guidance dropout fraction, and RNG seed."""

    guidance_weight: float = 2.0
    guidance_dropout: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.guidance_weight < 0:
            raise DataError("guidance weight must be >= 0")
        if not 0.0 <= self.guidance_dropout < 1.0:
            raise DataError("guidance dropout fraction must be in [0, 1)")


def _predict(model, z, t, cond, w):
    """Guided prediction, skipping whichever branch has zero weight."""
    if w == 1.0:
        return np.asarray(model(z, t, cond))
    if w == 0.0:
        return np.asarray(model(z, t, None))
    return guided_prediction(model(z, t, cond), model(z, t, None), w)


def _effective_w(cfg: SamplerConfig, t: int, T: int) -> float:
    # the earliest denoising steps are those with t closest to T
    step_index = T - t
    if step_index < cfg.guidance_dropout * T:
        return 0.0
    return cfg.guidance_weight


def sample(
    model,
    cond: np.ndarray | None,
    n_frames: int,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    constraint: EditConstraint | None = None,
    fps: float = 30.0,
    instrument=None,
) -> MotionClip:
    """Draw one clip: z_T ~ N(0, I), then iterate predict / re-noise /
    constrain down to t = 0.

    `instrument(t_prev, z, constraint_noise)` is called after every step when
    provided; used by tests to check masked-region exactness.
    """
    # separate streams for step noise and constraint noise, so an all-zero
    # mask reproduces unconstrained sampling bit for bit
    step_rng, cons_rng = make_rng(cfg.rng_seed).spawn(2)
    z = step_rng.standard_normal((n_frames, POSE_DIM))
    if constraint is not None and constraint.known.shape != z.shape:
        raise ConstraintShapeMismatch(
            f"constraint {constraint.known.shape} vs target {z.shape}"
        )
    for t in range(sched.T, 0, -1):
        x_hat = _predict(model, z, t, cond, _effective_w(cfg, t, sched.T))
        z = reverse_step(z, t, x_hat, sched, step_rng)
        eps = None
        if constraint is not None:
            z, eps = apply_constraint(z, t - 1, constraint, sched, cons_rng)
        if instrument is not None:
            instrument(t - 1, z, eps)
    return MotionClip(z.astype(np.float32), fps=fps)


def long_form_sample(
    model,
    cond_batch,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    fps: float = 30.0,
    instrument=None,
) -> MotionClip:
    """Chained sampling: B clips of N frames stitched into B*N/2 + N/2 frames.

    After every reverse step the first half of each clip k > 0 is overwritten
    with the second half of clip k-1, so consecutive clips agree exactly on
    their overlap; the final halves are then blended with linearly decaying
    weight (a no-op on the exactly-equal overlaps, kept for generality).
    """
    conds = [np.asarray(c) for c in cond_batch]
    b = len(conds)
    if b < 2:
        raise BadOverlap("long-form sampling needs at least 2 clips")
    n = conds[0].shape[0]
    if n % 2 != 0:
        raise BadOverlap("clip length must be even")
    half = n // 2
    for k in range(1, b):
        if conds[k].shape != conds[0].shape:
            raise BadOverlap("conditioning slices must share shape")
        if not np.allclose(conds[k][:half], conds[k - 1][half:], atol=1e-5):
            raise BadOverlap(f"conditioning slices {k - 1} and {k} do not overlap by N/2")

    rng = make_rng(cfg.rng_seed)
    z = rng.standard_normal((b, n, POSE_DIM))
    z[1:, :half] = z[:-1, half:]
    for t in range(sched.T, 0, -1):
        w = _effective_w(cfg, t, sched.T)
        for k in range(b):
            x_hat = _predict(model, z[k], t, conds[k], w)
            z[k] = reverse_step(z[k], t, x_hat, sched, rng)
        z[1:, :half] = z[:-1, half:]
        if instrument is not None:
            instrument(t - 1, z.copy())

    return MotionClip(stitch_clips(z).astype(np.float32), fps=fps)


def stitch_clips(clips: np.ndarray) -> np.ndarray:
    """Blend (B, N, K) half-overlapping clips into ((B+1)*N/2, K).

    Overlap frame j of N/2 mixes the previous clip with weight 1 - j/(N/2 - 1)
    and the next clip with weight j/(N/2 - 1).
    """
    b, n, k = clips.shape
    half = n // 2
    out = np.array(clips[0], copy=True)
    ramp = (np.arange(half) / (half - 1))[:, None] if half > 1 else np.ones((1, 1))
    for i in range(1, b):
        out[-half:] = (1.0 - ramp) * out[-half:] + ramp * clips[i, :half]
        out = np.concatenate([out, clips[i, half:]], axis=0)
    return out


# ---------------------------------------------------------------------------
# Constraint file format and the standard editing patterns


def save_constraint(constraint: EditConstraint, path) -> None:
    n = constraint.known.shape[0]
    header = f"CONSTRAINT1 n={n} mask=packbits\n"
    bits = np.packbits(constraint.mask.astype(np.uint8).ravel())
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(bits.tobytes())
        f.write(np.ascontiguousarray(constraint.known, dtype="<f4").tobytes())


def load_constraint(path) -> EditConstraint:
    with open(path, "rb") as f:
        first = f.readline()
        payload = f.read()
    try:
        text = first.decode("ascii").rstrip("\n")
        parts = dict(p.split("=", 1) for p in text.split()[1:])
        if not text.startswith("CONSTRAINT1") or parts.get("mask") != "packbits":
            raise ValueError("bad magic or mask encoding")
        n = int(parts["n"])
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise BadHeader(f"{path}: {e}") from None
    total = n * POSE_DIM
    nbytes_mask = (total + 7) // 8
    if len(payload) != nbytes_mask + total * 4:
        raise DataError(f"{path}: payload size mismatch")
    mask = np.unpackbits(np.frombuffer(payload[:nbytes_mask], dtype=np.uint8))[:total]
    known = np.frombuffer(payload[nbytes_mask:], dtype="<f4").reshape(n, POSE_DIM)
    return EditConstraint(known=known.copy(), mask=mask.reshape(n, POSE_DIM).astype(np.float32))


def _frame_mask(n: int, frames: np.ndarray) -> np.ndarray:
    mask = np.zeros((n, POSE_DIM), dtype=np.float32)
    mask[frames] = 1.0
    return mask


def continuation_constraint(reference: np.ndarray, seed_frames: int) -> EditConstraint:
    """Constrain the first `seed_frames` frames to the reference motion."""
    n = reference.shape[0]
    return EditConstraint(reference, _frame_mask(n, np.arange(seed_frames)))


def inbetween_constraint(reference: np.ndarray, edge_frames: int) -> EditConstraint:
    """Constrain the first and last `edge_frames` frames (keyframe hitting /
    in-betweening)."""
    n = reference.shape[0]
    frames = np.concatenate([np.arange(edge_frames), np.arange(n - edge_frames, n)])
    return EditConstraint(reference, _frame_mask(n, frames))


# channel spans of the 151-dim layout used for joint-wise masks
_UPPER_JOINTS = (3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23)
_LOWER_JOINTS = (0, 1, 2, 4, 5, 7, 8, 10, 11)


def _joint_channel_mask(joints, contacts: bool, trans: bool) -> np.ndarray:
    cols = np.zeros(POSE_DIM, dtype=np.float32)
    if contacts:
        cols[:4] = 1.0
    for j in joints:
        cols[4 + 6 * j : 4 + 6 * (j + 1)] = 1.0
    if trans:
        cols[-3:] = 1.0
    return cols


def upper_body_constraint(reference: np.ndarray) -> EditConstraint:
    """Upper-body rotations given; lower body, contacts and root generated."""
    cols = _joint_channel_mask(_UPPER_JOINTS, contacts=False, trans=False)
    return EditConstraint(reference, np.broadcast_to(cols, reference.shape).copy())


def lower_body_constraint(reference: np.ndarray) -> EditConstraint:
    """Lower-body rotations, contacts and root trajectory given."""
    cols = _joint_channel_mask(_LOWER_JOINTS, contacts=True, trans=True)
    return EditConstraint(reference, np.broadcast_to(cols, reference.shape).copy())
