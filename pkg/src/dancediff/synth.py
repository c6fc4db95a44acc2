"""Procedural dance-like clips for dataset-free training and testing.

Each clip follows a stance/swing gait cycle phase-locked to a click track:
during stance the root and both legs are frozen (feet pinned on the ground,
giving genuine contact labels), during swing the hips rotate and the root
sways, lifting and moving the feet. Arms wave continuously at the same
cycle period, so the whole motion is periodic in one gait cycle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import click_track, extract_baseline_features
from .diffusion import make_rng
from .errors import DataError
from .kinematics import extract_contact_labels
from .motion_io import NUM_JOINTS, MotionClip, save_features, save_motion
from .rotations import matrix_to_rot6d
from .skeleton import Skeleton, default_skeleton

_L_HIP, _R_HIP = 1, 2
_L_SHOULDER, _R_SHOULDER = 16, 17
_L_ELBOW, _R_ELBOW = 18, 19
_SPINE2 = 6


def _axis_rotation(axis: int, angle: np.ndarray) -> np.ndarray:
    """(N, 3, 3) rotation matrices about a coordinate axis."""
    n = angle.shape[0]
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros((n, 3, 3))
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    out[:, axis, axis] = 1.0
    out[:, i, i] = c
    out[:, j, j] = c
    out[:, i, j] = -s
    out[:, j, i] = s
    return out


def _smooth_bump(phase: np.ndarray) -> np.ndarray:
    """0 -> 1 -> 0 over [0, 1] with zero endpoint value and derivative."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.clip(phase, 0.0, 1.0)))


@dataclass
class SynthParams:
    bpm: float = 96.0
    beats_per_cycle: int = 2
    hip_amp: float = 0.7       # radians of hip swing
    sway_amp: float = 0.12     # meters of root sway during swing
    arm_amp: float = 0.9       # radians of arm waving
    arm_phase: float = 0.0
    spine_amp: float = 0.15
    root_height: float = 0.95


def synth_clip(
    n_frames: int,
    fps: float,
    params: SynthParams,
    skel: Skeleton | None = None,
) -> MotionClip:
    """One procedural clip with contact labels extracted from its own FK."""
    if n_frames < 3:
        raise DataError("need at least 3 frames")
    skel = skel or default_skeleton()
    t = np.arange(n_frames) / fps
    cycle = params.beats_per_cycle * 60.0 / params.bpm
    phase = (t % cycle) / cycle  # [0, 1) gait phase, stance in first half
    swing = phase >= 0.5
    swing_phase = np.where(swing, (phase - 0.5) * 2.0, 0.0)
    bump = _smooth_bump(swing_phase) * swing

    rot = np.tile(np.eye(3), (n_frames, NUM_JOINTS, 1, 1))
    hip_angle = params.hip_amp * bump
    rot[:, _L_HIP] = _axis_rotation(0, hip_angle)
    rot[:, _R_HIP] = _axis_rotation(0, -hip_angle)

    omega = 2.0 * np.pi / cycle
    arm = params.arm_amp * np.sin(omega * t + params.arm_phase)
    rot[:, _L_SHOULDER] = _axis_rotation(1, arm)
    rot[:, _R_SHOULDER] = _axis_rotation(1, -arm)
    rot[:, _L_ELBOW] = _axis_rotation(2, 0.5 * arm)
    rot[:, _R_ELBOW] = _axis_rotation(2, -0.5 * arm)
    rot[:, _SPINE2] = _axis_rotation(2, params.spine_amp * np.sin(omega * t))

    trans = np.zeros((n_frames, 3))
    trans[:, 2] = params.root_height
    trans[:, 0] = params.sway_amp * bump

    rot6d = matrix_to_rot6d(rot)
    clip = MotionClip.assemble(
        np.zeros((n_frames, 4), dtype=np.float32), rot6d, trans, fps=fps
    )
    contacts = extract_contact_labels(clip, skel)
    clip.data[:, :4] = contacts
    return clip


def synth_dataset(
    out_dir,
    count: int,
    seed: int,
    fps: float = 30.0,
    seconds: float = 5.0,
    train_fraction: float = 0.8,
) -> dict:
    """Write `count` motion + baseline-feature pairs plus a JSON manifest.

    Deterministic per seed: same seed reproduces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    skel = default_skeleton()
    n_frames = int(round(seconds * fps))
    bpm_choices = np.array([90.0, 96.0, 100.0, 108.0, 120.0, 126.0, 132.0])

    entries = []
    for i in range(count):
        params = SynthParams(
            bpm=float(rng.choice(bpm_choices)),
            hip_amp=float(rng.uniform(0.5, 0.9)),
            sway_amp=float(rng.uniform(0.06, 0.16)),
            arm_amp=float(rng.uniform(0.6, 1.1)),
            arm_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            spine_amp=float(rng.uniform(0.05, 0.25)),
        )
        clip = synth_clip(n_frames, fps, params, skel)
        audio = click_track(params.bpm, seconds + 0.5)
        feats, _ = extract_baseline_features(audio, fps)
        feats.features = feats.features[:n_frames]

        motion_path = out / f"clip_{i:04d}.motion"
        feat_path = out / f"clip_{i:04d}.feat"
        save_motion(clip, motion_path, extra={"bpm": f"{params.bpm:g}"})
        save_features(feats, feat_path)
        split = "train" if i < int(round(count * train_fraction)) else "test"
        entries.append(
            {"motion": motion_path.name, "features": feat_path.name, "split": split}
        )

    manifest = {"fps": fps, "clip_frames": n_frames, "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: {e}") from None
    for key in ("fps", "clip_frames", "entries"):
        if key not in manifest:
            raise DataError(f"{path}: missing manifest key {key!r}")
    base = path.parent
    for entry in manifest["entries"]:
        for k in ("motion", "features"):
            if not (base / entry[k]).exists():
                raise DataError(f"{path}: referenced file {entry[k]} missing")
    return manifest
