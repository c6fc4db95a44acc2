"""Evaluation suite: physical foot contact score, beat alignment, motion
feature spaces, diversity, Frechet distances, and bone-length drift."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import BeatGrid
from .errors import (
    DimensionMismatch,
    EmptyMusicBeats,
    TooFewClips,
    TooShort,
    ZeroLengthBone,
)
from .kinematics import finite_difference, forward_kinematics
from .motion_io import MotionClip
from .skeleton import UP_AXIS, Skeleton

BEAT_SIGMA_DEFAULT = 0.1  # seconds; 3 motion frames at 30 fps


# ---------------------------------------------------------------------------
# Physical foot contact score


def pfc_flagged(
    clip: MotionClip, skel: Skeleton, horizontal_foot_speed: bool = False
) -> tuple[float, bool]:
    """PFC value plus a degenerate flag (True when the acceleration
    normalizer vanishes and the score is defined as 0).

    Per frame: the root joint stands in for the center of mass; its second
    finite difference is clamped to non-negative vertical acceleration,
    then multiplied by both per-foot speeds (each foot's speed is the mean
    of its heel and toe joint speeds). The sum is normalized by the clip's
    maximum clamped acceleration magnitude.
    """
    if len(clip) < 3:
        raise TooShort("PFC needs >= 3 frames")
    pos = forward_kinematics(skel, clip)
    fps = clip.fps

    root_vel = finite_difference(pos[:, 0, :], fps)
    acc = finite_difference(root_vel, fps)  # (N-2, 3)
    acc = acc.copy()
    acc[:, UP_AXIS] = np.maximum(acc[:, UP_AXIS], 0.0)
    acc_mag = np.linalg.norm(acc, axis=-1)

    feet = pos[:, list(skel.contact_joints), :]
    foot_vel = finite_difference(feet, fps)  # (N-1, 4, 3)
    if horizontal_foot_speed:
        foot_vel = np.delete(foot_vel, UP_AXIS, axis=-1)
    foot_speed = np.linalg.norm(foot_vel, axis=-1)  # (N-1, 4)
    left = foot_speed[:, :2].mean(axis=1)
    right = foot_speed[:, 2:].mean(axis=1)

    n = acc_mag.size
    s = acc_mag * left[:n] * right[:n]
    normalizer = acc_mag.max()
    if normalizer < 1e-9:
        return 0.0, True
    return float(s.sum() / (n * normalizer)), False


def pfc(clip: MotionClip, skel: Skeleton, horizontal_foot_speed: bool = False) -> float:
    return pfc_flagged(clip, skel, horizontal_foot_speed)[0]


# ---------------------------------------------------------------------------
# Beat alignment


def kinematic_beats(clip: MotionClip, skel: Skeleton) -> np.ndarray:
    """Times of strict local minima of the average joint speed (seconds)."""
    if len(clip) < 3:
        raise TooShort("kinematic beats need >= 3 frames")
    pos = forward_kinematics(skel, clip)
    speed = np.linalg.norm(finite_difference(pos, clip.fps), axis=-1).mean(axis=-1)
    mins = np.flatnonzero((speed[1:-1] < speed[:-2]) & (speed[1:-1] < speed[2:])) + 1
    return mins / clip.fps


def beat_alignment(
    kin_beats: np.ndarray, music_beats: BeatGrid, sigma: float = BEAT_SIGMA_DEFAULT
) -> float:
    """Mean over music beats of exp(-(nearest kinematic beat gap)^2 / 2 sigma^2)."""
    music = np.asarray(music_beats.beat_times, dtype=np.float64)
    if music.size == 0:
        raise EmptyMusicBeats("no music beats")
    kin = np.asarray(kin_beats, dtype=np.float64)
    if kin.size == 0:
        return 0.0
    d2 = (music[:, None] - kin[None, :]) ** 2
    return float(np.mean(np.exp(-d2.min(axis=1) / (2.0 * sigma**2))))


# ---------------------------------------------------------------------------
# Motion feature spaces


def kinetic_features(clip: MotionClip, skel: Skeleton) -> np.ndarray:
    """Per-joint average squared speed (kinetic-energy proxy), a J-vector."""
    if len(clip) < 2:
        raise TooShort("kinetic features need >= 2 frames")
    pos = forward_kinematics(skel, clip)
    speed2 = (finite_difference(pos, clip.fps) ** 2).sum(axis=-1)  # (N-1, J)
    return speed2.mean(axis=0)


# Versioned relational predicate list; each entry is evaluated per frame on
# FK joint positions and reduced to its fraction-of-frames-true. Joint
# indices follow the bundled SMPL-topology order.
GEOMETRIC_PREDICATES_VERSION = "v1"

_PELVIS, _HEAD, _NECK = 0, 15, 12
_LSHO, _RSHO, _LWRI, _RWRI = 16, 17, 20, 21
_LHIP, _RHIP, _LKNE, _RKNE = 1, 2, 4, 5
_LANK, _RANK, _LFOO, _RFOO = 7, 8, 10, 11


def geometric_features(clip: MotionClip, skel: Skeleton) -> np.ndarray:
    """Fraction of frames satisfying each of 16 relational predicates."""
    pos = forward_kinematics(skel, clip)
    up = UP_AXIS
    z = pos[..., up]
    ground = z[:, [_LANK, _RANK, _LFOO, _RFOO]].min()
    hip_width = np.linalg.norm(pos[:, _LHIP] - pos[:, _RHIP], axis=-1)
    shoulder_width = np.linalg.norm(pos[:, _LSHO] - pos[:, _RSHO], axis=-1)
    horiz = [a for a in range(3) if a != up]

    def hdist(a, b):
        return np.linalg.norm(pos[:, a][:, horiz] - pos[:, b][:, horiz], axis=-1)

    preds = [
        z[:, _LWRI] > z[:, _HEAD],                      # left hand above head
        z[:, _RWRI] > z[:, _HEAD],                      # right hand above head
        z[:, _LWRI] > z[:, _LSHO],                      # left hand above shoulder
        z[:, _RWRI] > z[:, _RSHO],                      # right hand above shoulder
        np.linalg.norm(pos[:, _LWRI] - pos[:, _RWRI], axis=-1) > 2.0 * shoulder_width,
        np.linalg.norm(pos[:, _LWRI] - pos[:, _RWRI], axis=-1) < 0.2,
        pos[:, _LFOO, 1] > pos[:, _PELVIS, 1],          # left foot in front of pelvis
        pos[:, _RFOO, 1] > pos[:, _PELVIS, 1],          # right foot in front of pelvis
        hdist(_LANK, _RANK) > 1.5 * hip_width,          # wide stance
        z[:, _LANK] - ground > 0.1,                     # left foot raised
        z[:, _RANK] - ground > 0.1,                     # right foot raised
        z[:, _LKNE] > z[:, _PELVIS] - 0.2,              # left knee lifted
        z[:, _RKNE] > z[:, _PELVIS] - 0.2,              # right knee lifted
        hdist(_HEAD, _PELVIS) > 0.2,                    # torso lean
        pos[:, _LWRI, 0] < pos[:, _RWRI, 0],            # wrists crossed (x order)
        pos[:, _LFOO, 1] > pos[:, _RFOO, 1],            # left foot leads
    ]
    return np.array([float(np.mean(p)) for p in preds])


def diversity(feature_set: np.ndarray) -> float:
    """Mean pairwise Euclidean distance between feature vectors (M, F)."""
    feats = np.asarray(feature_set, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise TooFewClips("diversity needs >= 2 feature vectors")
    m = feats.shape[0]
    diffs = feats[:, None, :] - feats[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))
    iu = np.triu_indices(m, k=1)
    return float(dist[iu].mean())


# ---------------------------------------------------------------------------
# Frechet distance


@dataclass
class FeatureDistribution:
    """First two moments of a feature matrix (M, F)."""

    mean: np.ndarray
    cov: np.ndarray

    @staticmethod
    def from_features(features: np.ndarray) -> "FeatureDistribution":
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise TooFewClips("need >= 2 feature vectors for moments")
        return FeatureDistribution(feats.mean(axis=0), np.cov(feats, rowvar=False))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(
    p: FeatureDistribution, q: FeatureDistribution, jitter: float = 1e-6
) -> float:
    """||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^{1/2}), matrix square
    root via eigendecomposition of the symmetrized product."""
    if p.mean.shape != q.mean.shape:
        raise DimensionMismatch(f"{p.mean.shape} vs {q.mean.shape}")
    eye = np.eye(p.mean.size)
    cov_p = np.atleast_2d(p.cov) + jitter * eye
    cov_q = np.atleast_2d(q.cov) + jitter * eye
    sp = _psd_sqrt(cov_p)
    cross = _psd_sqrt(sp @ cov_q @ sp)
    mean_term = float(((p.mean - q.mean) ** 2).sum())
    # the trace term is a squared Bures distance, >= 0 up to roundoff
    trace_term = float(np.trace(cov_p) + np.trace(cov_q) - 2.0 * np.trace(cross))
    return mean_term + max(trace_term, 0.0)


# ---------------------------------------------------------------------------
# Bone length drift


def bone_length_drift(positions: np.ndarray, skel: Skeleton) -> float:
    """Max over bones of (max length - min length) / mean length."""
    pos = np.asarray(positions, dtype=np.float64)
    children = np.arange(1, skel.num_joints)
    parents = skel.parent_index[children]
    lengths = np.linalg.norm(pos[:, children] - pos[:, parents], axis=-1)  # (N, J-1)
    mean = lengths.mean(axis=0)
    if np.any(mean < 1e-12):
        raise ZeroLengthBone("bone with zero mean length")
    drift = (lengths.max(axis=0) - lengths.min(axis=0)) / mean
    return float(drift.max())


# ---------------------------------------------------------------------------
# Report


@dataclass
class ClipMetrics:
    clip_id: str
    pfc: float | None = None
    pfc_degenerate: bool = False
    beat_alignment: float | None = None
    bone_drift: float | None = None
    error: str | None = None


@dataclass
class MetricReport:
    fps: float
    clips: list = field(default_factory=list)
    diversity_kinetic: float | None = None
    diversity_geometric: float | None = None
    frechet_kinetic: float | None = None
    frechet_geometric: float | None = None
    config: dict = field(default_factory=dict)

    def _aggregate(self, name):
        vals = [getattr(c, name) for c in self.clips if getattr(c, name) is not None]
        if not vals:
            return None, None
        return float(np.mean(vals)), float(np.std(vals))

    @property
    def warning_count(self) -> int:
        return sum(1 for c in self.clips if c.error is not None)

    def to_text(self) -> str:
        lines = [f"fps: {self.fps:g}", f"clips: {len(self.clips)}"]
        for k, v in sorted(self.config.items()):
            lines.append(f"config.{k}: {v}")
        for c in self.clips:
            lines.append(f"[clip {c.clip_id}]")
            if c.error is not None:
                lines.append(f"  error: {c.error}")
                continue
            if c.pfc is not None:
                suffix = " (degenerate)" if c.pfc_degenerate else ""
                lines.append(f"  pfc: {c.pfc:.6f}{suffix}")
            if c.beat_alignment is not None:
                lines.append(f"  beat_alignment: {c.beat_alignment:.6f}")
            if c.bone_drift is not None:
                lines.append(f"  bone_drift: {c.bone_drift:.6e}")
        lines.append("[aggregate]")
        for name in ("pfc", "beat_alignment", "bone_drift"):
            mean, std = self._aggregate(name)
            if mean is not None:
                lines.append(f"  {name}_mean: {mean:.6f}")
                lines.append(f"  {name}_std: {std:.6f}")
        for name in (
            "diversity_kinetic",
            "diversity_geometric",
            "frechet_kinetic",
            "frechet_geometric",
        ):
            v = getattr(self, name)
            if v is not None:
                lines.append(f"  {name}: {v:.6f}")
        lines.append(f"  warnings: {self.warning_count}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["clip_id,pfc,pfc_degenerate,beat_alignment,bone_drift,error"]
        for c in self.clips:
            rows.append(
                ",".join(
                    [
                        c.clip_id,
                        "" if c.pfc is None else f"{c.pfc:.6f}",
                        "1" if c.pfc_degenerate else "0",
                        "" if c.beat_alignment is None else f"{c.beat_alignment:.6f}",
                        "" if c.bone_drift is None else f"{c.bone_drift:.6e}",
                        c.error or "",
                    ]
                )
            )
        return "\n".join(rows) + "\n"
