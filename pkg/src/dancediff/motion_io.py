"""Motion clip container and the binary file formats.

Motion files are a one-line ASCII header followed by raw little-endian
float32 data, row-major:

    MOTION1 n=<N> fps=<fps> layout=b4|rot6d144|trans3 [key=value ...]\n
    <N*151 float32>

Feature containers use the same pattern:

    FEAT1 n=<N> d=<D> fps=<fps> source=<baseline|precomputed>\n
    <N*D float32>

Constraint files carry a packed mask bitset followed by the known values:

    CONSTRAINT1 n=<N> mask=packbits\n
    <ceil(N*151/8) bytes mask> <N*151 float32 known>
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadHeader, DataError, FpsMismatch, ShapeMismatch

POSE_DIM = 151
NUM_CONTACTS = 4
NUM_JOINTS = 24
ROT_DIM = NUM_JOINTS * 6  # 144
LAYOUT = "b4|rot6d144|trans3"


@dataclass
class MotionClip:
    """An N x 151 pose sequence: 4 contacts + 144 rot6d values + 3 root trans."""

    data: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[1] != POSE_DIM:
            raise ShapeMismatch(f"expected (N, {POSE_DIM}), got {self.data.shape}")
        if self.fps <= 0:
            raise DataError("fps must be positive")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def contacts(self) -> np.ndarray:
        return self.data[:, :NUM_CONTACTS]

    @property
    def rotations(self) -> np.ndarray:
        """(N, 24, 6) per-joint 6-DOF rotations."""
        return self.data[:, NUM_CONTACTS : NUM_CONTACTS + ROT_DIM].reshape(
            len(self), NUM_JOINTS, 6
        )

    @property
    def root_translation(self) -> np.ndarray:
        return self.data[:, NUM_CONTACTS + ROT_DIM :]

    @staticmethod
    def assemble(contacts, rotations, root_translation, fps=30.0) -> "MotionClip":
        contacts = np.asarray(contacts, dtype=np.float32)
        n = contacts.shape[0]
        rot = np.asarray(rotations, dtype=np.float32).reshape(n, ROT_DIM)
        trans = np.asarray(root_translation, dtype=np.float32).reshape(n, 3)
        return MotionClip(np.concatenate([contacts, rot, trans], axis=1), fps=fps)


@dataclass
class ConditioningSequence:
    """Per-frame music features (N, D) aligned to motion fps."""

    features: np.ndarray
    fps: float = 30.0
    source: str = "baseline"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ShapeMismatch(f"features must be 2-D, got {self.features.shape}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _parse_header(line: bytes, magic: str) -> dict:
    try:
        text = line.decode("ascii").rstrip("\n")
    except UnicodeDecodeError as e:
        raise BadHeader(f"header is not ASCII: {e}") from None
    parts = text.split()
    if not parts or parts[0] != magic:
        raise BadHeader(f"expected magic {magic!r}, got {parts[:1]}")
    fields = {}
    for p in parts[1:]:
        if "=" not in p:
            raise BadHeader(f"malformed header field {p!r}")
        k, v = p.split("=", 1)
        fields[k] = v
    return fields


def _read_with_header(path, magic):
    with open(path, "rb") as f:
        fields = _parse_header(f.readline(), magic)
        payload = f.read()
    return fields, payload


def save_motion(clip: MotionClip, path, extra: dict | None = None) -> None:
    extras = "".join(f" {k}={v}" for k, v in (extra or {}).items())
    header = f"MOTION1 n={len(clip)} fps={clip.fps:g} layout={LAYOUT}{extras}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(clip.data, dtype="<f4").tobytes())


def load_motion(path) -> MotionClip:
    fields, payload = _read_with_header(path, "MOTION1")
    try:
        n = int(fields["n"])
        fps = float(fields["fps"])
    except (KeyError, ValueError) as e:
        raise BadHeader(f"{path}: {e}") from None
    if fields.get("layout") != LAYOUT:
        raise BadHeader(f"{path}: unsupported layout {fields.get('layout')!r}")
    expected = n * POSE_DIM * 4
    if len(payload) != expected:
        raise DataError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, POSE_DIM)
    return MotionClip(data.copy(), fps=fps)


def save_features(seq: ConditioningSequence, path) -> None:
    header = f"FEAT1 n={len(seq)} d={seq.dim} fps={seq.fps:g} source={seq.source}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())


def load_features(path, fps: float | None = None, resample: bool = True) -> ConditioningSequence:
    """Load a feature container, optionally resampling to a target fps.

    Resampling is linear interpolation along the frame axis; with
    `resample=False` a stored-fps mismatch raises FpsMismatch instead.
    """
    fields, payload = _read_with_header(path, "FEAT1")
    try:
        n = int(fields["n"])
        d = int(fields["d"])
        stored_fps = float(fields["fps"])
        source = fields["source"]
    except (KeyError, ValueError) as e:
        raise BadHeader(f"{path}: {e}") from None
    if len(payload) != n * d * 4:
        raise DataError(f"{path}: expected {n * d * 4} payload bytes, got {len(payload)}")
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    seq = ConditioningSequence(feats, fps=stored_fps, source=source)
    if fps is None or fps == stored_fps:
        return seq
    if not resample:
        raise FpsMismatch(f"{path}: stored fps {stored_fps}, requested {fps}")
    return resample_features(seq, fps)


def resample_features(seq: ConditioningSequence, fps: float) -> ConditioningSequence:
    """Linear-interpolate features to a new frame rate, same time span."""
    n = len(seq)
    duration = n / seq.fps
    new_n = max(1, int(round(duration * fps)))
    src_t = np.arange(n) / seq.fps
    dst_t = np.arange(new_n) / fps
    out = np.empty((new_n, seq.dim), dtype=np.float32)
    for j in range(seq.dim):
        out[:, j] = np.interp(dst_t, src_t, seq.features[:, j])
    return ConditioningSequence(out, fps=fps, source=seq.source)
