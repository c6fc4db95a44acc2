"""Command implementations behind the CLI: training loop, sampling to files,
editing, long-form generation, and directory evaluation."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import metrics as M
from .audio import BeatGrid, beats_from_features
from .config import RunConfig
from .diffusion import (
    EditConstraint,
    SamplerConfig,
    cosine_schedule,
    load_constraint,
    long_form_sample,
    make_rng,
    sample,
)
from .errors import ConfigError, DataError, FeatureTooShort, NonFiniteLoss
from .kinematics import forward_kinematics
from .model import (
    ema_model,
    load_checkpoint,
    make_sampler_fn,
    make_train_state,
    save_checkpoint,
    train_step,
)
from .motion_io import load_features, load_motion, save_motion
from .skeleton import default_skeleton, load_skeleton
from .synth import load_manifest


def default_guidance_dropout(w: float) -> float:
    """40% of the earliest steps run unguided at w = 1, none at other weights."""
    return 0.4 if w == 1.0 else 0.0


def _load_training_set(cfg: RunConfig):
    manifest = load_manifest(cfg.manifest)
    base = Path(cfg.manifest).parent
    n_frames = int(manifest["clip_frames"])
    if n_frames > cfg.seq_len:
        raise ConfigError(
            f"manifest clips have {n_frames} frames but seq_len is {cfg.seq_len}"
        )
    xs, conds = [], []
    for entry in manifest["entries"]:
        if entry["split"] != "train":
            continue
        clip = load_motion(base / entry["motion"])
        feats = load_features(base / entry["features"], fps=cfg.fps)
        if len(feats) < n_frames:
            raise DataError(f"{entry['features']}: fewer feature frames than motion frames")
        if feats.dim != cfg.cond_dim:
            raise ConfigError(
                f"feature dim {feats.dim} does not match configured cond_dim {cfg.cond_dim}"
            )
        xs.append(clip.data[:n_frames])
        conds.append(feats.features[:n_frames])
    if not xs:
        raise DataError("manifest has no train-split entries")
    return np.stack(xs), np.stack(conds)


def train_loop(cfg: RunConfig, resume=None, log_cb=None) -> Path:
    """Run training per the config; returns the final checkpoint path.

    Writes step-stamped checkpoints plus a `loss_log.csv` into the output
    directory. On a non-finite loss the last good checkpoint is retained and
    the error propagates.
    """
    xs, conds = _load_training_set(cfg)
    sched = cosine_schedule(cfg.timesteps)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    skel = default_skeleton()
    if resume is not None:
        state, _ = load_checkpoint(resume, skel, optimizer=cfg.optimizer, lr=cfg.lr)
    else:
        state = make_train_state(
            cfg.model_config(),
            skel,
            cfg.loss_weights(),
            optimizer=cfg.optimizer,
            lr=cfg.lr,
            seed=cfg.seed,
        )
    rng = make_rng(cfg.seed + state.step)
    extra = {"timesteps": cfg.timesteps, "fps": cfg.fps}

    log_rows = []
    last_ckpt = None
    try:
        while state.step < cfg.steps:
            if cfg.lr_decay == "cosine":
                scale = 0.5 * (1.0 + math.cos(math.pi * state.step / cfg.steps))
                for group in state.optimizer.param_groups:
                    group["lr"] = cfg.lr * scale
            idx = rng.choice(len(xs), size=min(cfg.batch_size, len(xs)), replace=True)
            loss = train_step(state, xs[idx], conds[idx], sched, rng)
            log_rows.append(f"{state.step},{loss:.6f}")
            if log_cb is not None:
                log_cb(state.step, loss)
            if state.step % cfg.checkpoint_every == 0 or state.step == cfg.steps:
                last_ckpt = out / f"ckpt_{state.step:06d}.ckpt"
                save_checkpoint(last_ckpt, state, extra=extra)
    finally:
        (out / "loss_log.csv").write_text("step,loss\n" + "\n".join(log_rows) + "\n")

    final = out / "ckpt_final.ckpt"
    save_checkpoint(final, state, extra=extra)
    return final


def _load_sampling_setup(checkpoint, w, seed, guidance_dropout=None):
    state, extra = load_checkpoint(checkpoint, default_skeleton())
    sched = cosine_schedule(int(extra.get("timesteps", 1000)))
    fps = float(extra.get("fps", 30.0))
    if guidance_dropout is None:
        guidance_dropout = default_guidance_dropout(w)
    cfg = SamplerConfig(guidance_weight=w, guidance_dropout=guidance_dropout, rng_seed=seed)
    model = ema_model(state)
    return state, make_sampler_fn(model), sched, cfg, fps


def _conditioning_for(state, features_path, fps, min_frames):
    feats = load_features(features_path, fps=fps)
    if feats.dim != state.model.cfg.cond_dim:
        raise DataError(
            f"feature dim {feats.dim} does not match checkpoint cond_dim "
            f"{state.model.cfg.cond_dim}"
        )
    if len(feats) < min_frames:
        raise FeatureTooShort(f"need >= {min_frames} feature frames, got {len(feats)}")
    return feats.features


def sample_to_file(checkpoint, features_path, out_path, w, seed, guidance_dropout=None,
                   constraint_path=None) -> Path:
    state, fn, sched, cfg, fps = _load_sampling_setup(checkpoint, w, seed, guidance_dropout)
    n = state.model.cfg.seq_len
    cond = _conditioning_for(state, features_path, fps, n)[:n]
    constraint = load_constraint(constraint_path) if constraint_path else None
    clip = sample(fn, cond, n, sched, cfg, constraint=constraint, fps=fps)
    save_motion(clip, out_path, extra={"seed": seed, "w": f"{w:g}"})
    return Path(out_path)


def longform_to_file(checkpoint, features_path, out_path, total_seconds, w, seed,
                     guidance_dropout=None) -> Path:
    state, fn, sched, cfg, fps = _load_sampling_setup(checkpoint, w, seed, guidance_dropout)
    n = state.model.cfg.seq_len
    if n % 2 != 0:
        raise ConfigError("long-form generation needs an even seq_len")
    half = n // 2
    total_frames = int(round(total_seconds * fps))
    if total_frames % half != 0 or total_frames // half < 3:
        raise ConfigError(
            f"total length must be a multiple of {half} frames and at least {3 * half}"
        )
    b = total_frames // half - 1
    cond = _conditioning_for(state, features_path, fps, total_frames)
    slices = [cond[k * half : k * half + n] for k in range(b)]
    clip = long_form_sample(fn, slices, sched, cfg, fps=fps)
    save_motion(clip, out_path, extra={"seed": seed, "w": f"{w:g}", "longform": 1})
    return Path(out_path)


def evaluate_dir(
    motion_dir,
    features_dir=None,
    skeleton_path=None,
    sigma=M.BEAT_SIGMA_DEFAULT,
    reference_dir=None,
) -> M.MetricReport:
    """Per-clip PFC / beat alignment / bone drift plus corpus-level diversity
    and optional Frechet distances against a reference directory."""
    skel = load_skeleton(skeleton_path) if skeleton_path else default_skeleton()
    paths = sorted(Path(motion_dir).glob("*.motion"))
    if not paths:
        raise DataError(f"no .motion files in {motion_dir}")

    report = M.MetricReport(fps=30.0, config={"sigma": sigma})
    kin_feats, geo_feats = [], []
    for p in paths:
        cm = M.ClipMetrics(clip_id=p.stem)
        report.clips.append(cm)
        try:
            clip = load_motion(p)
            report.fps = clip.fps
            cm.pfc, cm.pfc_degenerate = M.pfc_flagged(clip, skel)
            cm.bone_drift = M.bone_length_drift(forward_kinematics(skel, clip), skel)
            kin_feats.append(M.kinetic_features(clip, skel))
            geo_feats.append(M.geometric_features(clip, skel))
            if features_dir is not None:
                fpath = Path(features_dir) / (p.stem + ".feat")
                if fpath.exists():
                    beats = beats_from_features(load_features(fpath, fps=clip.fps))
                    if beats.size:
                        cm.beat_alignment = M.beat_alignment(
                            M.kinematic_beats(clip, skel),
                            BeatGrid(beats, tempo_bpm=0.0),
                            sigma=sigma,
                        )
        except Exception as e:  # record per-clip failures, keep going
            cm.error = f"{type(e).__name__}: {e}"

    if len(kin_feats) >= 2:
        report.diversity_kinetic = M.diversity(np.stack(kin_feats))
        report.diversity_geometric = M.diversity(np.stack(geo_feats))
    if reference_dir is not None:
        report.frechet_kinetic = _frechet_between(motion_dir, reference_dir, skel, M.kinetic_features)
        report.frechet_geometric = _frechet_between(motion_dir, reference_dir, skel, M.geometric_features)
    return report


def _collect_features(motion_dir, skel, feature_fn):
    feats = []
    for p in sorted(Path(motion_dir).glob("*.motion")):
        try:
            feats.append(feature_fn(load_motion(p), skel))
        except Exception:
            continue
    if len(feats) < 2:
        raise DataError(f"need >= 2 valid clips in {motion_dir} for Frechet distance")
    return np.stack(feats)


def _frechet_between(dir_a, dir_b, skel, feature_fn) -> float:
    fa = M.FeatureDistribution.from_features(_collect_features(dir_a, skel, feature_fn))
    fb = M.FeatureDistribution.from_features(_collect_features(dir_b, skel, feature_fn))
    return M.frechet_distance(fa, fb)


def checkpoint_sweep(ckpt_dir, features_path, n_samples=4, w=1.0, seed=0):
    """Mean PFC of samples drawn from every step-stamped checkpoint.

    Returns a list of (step, mean_pfc) sorted by step; used for training-
    trend plots.
    """
    skel = default_skeleton()
    paths = sorted(Path(ckpt_dir).glob("ckpt_[0-9]*.ckpt"))
    if not paths:
        raise DataError(f"no step-stamped checkpoints in {ckpt_dir}")
    rows = []
    for p in paths:
        state, extra = load_checkpoint(p, skel)
        fn = make_sampler_fn(ema_model(state))
        sched = cosine_schedule(int(extra.get("timesteps", 1000)))
        fps = float(extra.get("fps", 30.0))
        n = state.model.cfg.seq_len
        cond = _conditioning_for(state, features_path, fps, n)[:n]
        vals = []
        for k in range(n_samples):
            cfg = SamplerConfig(
                guidance_weight=w,
                guidance_dropout=default_guidance_dropout(w),
                rng_seed=seed + k,
            )
            clip = sample(fn, cond, n, sched, cfg, fps=fps)
            vals.append(M.pfc(clip, skel))
        rows.append((state.step, float(np.mean(vals))))
    return sorted(rows)
