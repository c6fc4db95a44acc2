"""Forward kinematics and finite-difference derivatives on motion clips."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotation, TooShort
from .motion_io import MotionClip
from .rotations import rot6d_to_matrix
from .skeleton import UP_AXIS, Skeleton


def forward_kinematics(skel: Skeleton, clip: MotionClip) -> np.ndarray:
    """Joint positions (N, J, 3) from local rotations and root translation.

    position(root) = root_translation; position(j) = position(parent) +
    GlobalRot(parent) @ rest_offset(j), with global rotations composed
    parent-to-child.
    """
    n = len(clip)
    j = skel.num_joints
    try:
        local = rot6d_to_matrix(clip.rotations[:, :j, :])  # (N, J, 3, 3)
    except DegenerateRotation as e:
        raise DegenerateRotation(f"degenerate rotation in clip: {e}") from None

    glob = np.empty((n, j, 3, 3))
    pos = np.empty((n, j, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = clip.root_translation
    for k in range(1, j):
        p = skel.parent_index[k]
        glob[:, k] = glob[:, p] @ local[:, k]
        pos[:, k] = pos[:, p] + np.einsum("nab,b->na", glob[:, p], skel.rest_offset[k])
    return pos


def finite_difference(values: np.ndarray, fps: float) -> np.ndarray:
    """Forward differences scaled to per-second units: (v[i+1] - v[i]) * fps."""
    values = np.asarray(values)
    if values.shape[0] < 2:
        raise TooShort(f"need >= 2 frames, got {values.shape[0]}")
    return np.diff(values, axis=0) * fps


def extract_contact_labels(
    clip: MotionClip,
    skel: Skeleton,
    height_thresh: float = 0.05,
    speed_thresh: float = 0.3,
) -> np.ndarray:
    """Binary (N, 4) foot-contact labels from FK positions.

    Contact = foot joint below `height_thresh` above the ground plane AND
    moving slower than `speed_thresh` m/s. The ground plane is the minimum
    foot height over the clip. The last frame copies frame N-2's label.
    """
    if len(clip) < 2:
        raise TooShort("contact labels need >= 2 frames")
    pos = forward_kinematics(skel, clip)
    feet = pos[:, list(skel.contact_joints), :]  # (N, 4, 3)
    ground = feet[..., UP_AXIS].min()
    height = feet[..., UP_AXIS] - ground  # (N, 4)
    speed = np.linalg.norm(finite_difference(feet, clip.fps), axis=-1)  # (N-1, 4)

    labels = np.zeros((len(clip), len(skel.contact_joints)), dtype=np.float32)
    labels[:-1] = (height[:-1] < height_thresh) & (speed < speed_thresh)
    labels[-1] = labels[-2]
    return labels
