"""Skeleton definition and the bundled 24-joint SMPL-topology default.

The skeleton file format is one joint per line:

    joint_name parent_index ox oy oz

with the root marked by parent_index -1 and offsets in meters, expressed in
the parent joint's frame. Coordinates are z-up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError

# contact channel order: left heel, left toe, right heel, right toe
SMPL_CONTACT_JOINTS = (7, 10, 8, 11)
UP_AXIS = 2  # z-up


@dataclass(frozen=True)
class Skeleton:
    """A joint tree: parent indices plus rest-pose offsets (J, 3)."""

    parent_index: np.ndarray
    rest_offset: np.ndarray
    joint_names: tuple = ()
    contact_joints: tuple = SMPL_CONTACT_JOINTS

    def __post_init__(self):
        parents = np.asarray(self.parent_index, dtype=np.int64)
        offsets = np.asarray(self.rest_offset, dtype=np.float64)
        object.__setattr__(self, "parent_index", parents)
        object.__setattr__(self, "rest_offset", offsets)
        if parents.ndim != 1 or offsets.shape != (parents.size, 3):
            raise DataError("parent_index must be (J,), rest_offset (J, 3)")
        roots = np.flatnonzero(parents < 0)
        if roots.size != 1 or roots[0] != 0:
            raise DataError("exactly one root required, at index 0")
        if np.any(parents[1:] >= np.arange(1, parents.size)):
            raise DataError("parents must precede children (topological order)")
        if not np.isfinite(offsets).all():
            raise DataError("rest offsets must be finite")

    @property
    def num_joints(self) -> int:
        return int(self.parent_index.size)

    def bone_lengths(self) -> np.ndarray:
        """(J-1,) rest bone lengths for joints 1..J-1."""
        return np.linalg.norm(self.rest_offset[1:], axis=-1)


def load_skeleton(path) -> Skeleton:
    names, parents, offsets = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        names.append(parts[0])
        parents.append(int(parts[1]))
        offsets.append([float(v) for v in parts[2:]])
    if not names:
        raise DataError(f"{path}: empty skeleton file")
    return Skeleton(np.array(parents), np.array(offsets), joint_names=tuple(names))


def save_skeleton(skel: Skeleton, path) -> None:
    names = skel.joint_names or tuple(f"joint{i}" for i in range(skel.num_joints))
    lines = [
        f"{names[j]} {skel.parent_index[j]} "
        f"{skel.rest_offset[j, 0]} {skel.rest_offset[j, 1]} {skel.rest_offset[j, 2]}"
        for j in range(skel.num_joints)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def default_skeleton() -> Skeleton:
    """The bundled 24-joint SMPL-topology skeleton."""
    with resources.as_file(
        resources.files("dancediff.data") / "smpl_skeleton.txt"
    ) as p:
        return load_skeleton(p)


def chain_skeleton(offsets) -> Skeleton:
    """A simple serial chain (joint j's parent is j-1); handy for tests."""
    offsets = np.asarray(offsets, dtype=np.float64)
    parents = np.arange(-1, offsets.shape[0] - 1)
    return Skeleton(parents, offsets, contact_joints=())
