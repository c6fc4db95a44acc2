import numpy as np
import pytest

from dancediff.errors import TooShort
from dancediff.kinematics import (
    extract_contact_labels,
    finite_difference,
    forward_kinematics,
)
from dancediff.motion_io import MotionClip
from dancediff.rotations import matrix_to_rot6d, random_rotations, rot6d_to_matrix
from dancediff.skeleton import chain_skeleton, default_skeleton

IDENTITY_6D = np.array([1, 0, 0, 0, 1, 0], dtype=np.float32)


def make_clip(n, rotations=None, trans=None, fps=30.0):
    rot = np.tile(IDENTITY_6D, (n, 24, 1)) if rotations is None else rotations
    t = np.zeros((n, 3)) if trans is None else trans
    return MotionClip.assemble(np.zeros((n, 4)), rot, t, fps=fps)


def rest_positions(skel):
    """Accumulated rest offsets along each joint's ancestor chain."""
    pos = np.zeros((skel.num_joints, 3))
    for j in range(1, skel.num_joints):
        pos[j] = pos[skel.parent_index[j]] + skel.rest_offset[j]
    return pos


def test_identity_pose_gives_rest_offsets(skel):
    pos = forward_kinematics(skel, make_clip(3))
    expected = rest_positions(skel)
    for i in range(3):
        np.testing.assert_allclose(pos[i], expected, atol=1e-12)


def test_root_translation_shifts_everything(skel):
    t = np.tile([1.0, -2.0, 0.5], (2, 1))
    base = forward_kinematics(skel, make_clip(2))
    shifted = forward_kinematics(skel, make_clip(2, trans=t))
    np.testing.assert_allclose(shifted, base + t[:, None, :], atol=1e-12)


def test_root_rotation_rotates_rest_pose(skel):
    Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rot = np.tile(IDENTITY_6D, (1, 24, 1))
    rot[0, 0] = matrix_to_rot6d(Rz)
    pos = forward_kinematics(skel, make_clip(1, rotations=rot))
    # matrix-chain oracle: every rest position multiplied by the root rotation
    expected = rest_positions(skel) @ Rz.T
    np.testing.assert_allclose(pos[0], expected, atol=1e-9)


def test_fk_matches_matrix_chain_oracle_random(rng):
    skel = chain_skeleton([[0, 0, 0], [0, 0.5, 0], [0.3, 0, 0.2]])
    R = random_rotations(3, rng)
    rot = np.tile(IDENTITY_6D, (1, 24, 1))
    rot[0, :3] = matrix_to_rot6d(R)
    trans = rng.standard_normal((1, 3))
    pos = forward_kinematics(skel, make_clip(1, rotations=rot, trans=trans))
    # explicit matrix chain
    p0 = trans[0]
    g0 = R[0]
    p1 = p0 + g0 @ skel.rest_offset[1]
    g1 = g0 @ R[1]
    p2 = p1 + g1 @ skel.rest_offset[2]
    np.testing.assert_allclose(pos[0, :3], np.stack([p0, p1, p2]), atol=1e-6)


def test_fk_equivariance_under_root_rotation(skel, rng):
    rot = np.tile(IDENTITY_6D, (2, 24, 1))
    R_joints = random_rotations(24, rng)
    rot[:] = matrix_to_rot6d(R_joints)
    trans = rng.standard_normal((2, 3))
    pos = forward_kinematics(skel, make_clip(2, rotations=rot, trans=trans))

    Q = random_rotations(1, rng)[0]
    rot2 = rot.copy()
    rot2[:, 0] = matrix_to_rot6d(Q @ rot6d_to_matrix(rot[0, 0]))
    pos2 = forward_kinematics(skel, make_clip(2, rotations=rot2, trans=trans @ Q.T))
    np.testing.assert_allclose(pos2, pos @ Q.T, atol=1e-5)


def test_bone_lengths_constant(skel, rng):
    rot = matrix_to_rot6d(random_rotations(24 * 5, rng).reshape(5, 24, 3, 3))
    pos = forward_kinematics(skel, make_clip(5, rotations=rot, trans=rng.standard_normal((5, 3))))
    children = np.arange(1, 24)
    lengths = np.linalg.norm(pos[:, children] - pos[:, skel.parent_index[children]], axis=-1)
    expected = np.tile(np.linalg.norm(skel.rest_offset[1:], axis=-1), (5, 1))
    np.testing.assert_allclose(lengths, expected, atol=1e-5)


def test_finite_difference_basics():
    const = np.ones((5, 3))
    np.testing.assert_allclose(finite_difference(const, 30.0), 0.0)
    ramp = np.arange(6)[:, None] * np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(
        finite_difference(ramp, 30.0), np.tile(30.0 * np.array([0.5, -1.0, 2.0]), (5, 1))
    )
    with pytest.raises(TooShort):
        finite_difference(np.ones((1, 3)), 30.0)


def test_finite_difference_matches_analytic_derivative():
    n, fps = 3000, 30.0
    t = np.arange(n) / fps
    vals = np.sin(2 * np.pi * t)[:, None]
    fd = finite_difference(vals, fps)[:, 0]
    analytic = 2 * np.pi * np.cos(2 * np.pi * t[:-1])
    assert np.abs(fd - analytic).max() < 2 * np.pi**2 * 2 / fps  # O(1/fps)


def test_finite_difference_linearity(rng):
    x = rng.standard_normal((10, 4))
    y = rng.standard_normal((10, 4))
    np.testing.assert_allclose(
        finite_difference(2.0 * x - 3.0 * y, 30.0),
        2.0 * finite_difference(x, 30.0) - 3.0 * finite_difference(y, 30.0),
        atol=1e-12,
    )


def test_contact_labels_pinned_and_swinging(skel):
    # static pose: feet at ground height with zero velocity -> all ones
    static = make_clip(10, trans=np.tile([0.0, 0.0, 0.95], (10, 1)))
    labels = extract_contact_labels(static, skel)
    np.testing.assert_allclose(labels, 1.0)

    # whole body translating at 2 m/s -> feet fast -> all zeros
    trans = np.tile([0.0, 0.0, 0.95], (10, 1))
    trans[:, 1] = np.arange(10) * (2.0 / 30.0)
    moving = make_clip(10, trans=trans)
    np.testing.assert_allclose(extract_contact_labels(moving, skel), 0.0)


def test_contact_label_flips_at_constructed_frame(skel):
    # root still for the first half, then moves faster than the threshold:
    # labels must flip exactly at the first fast frame
    n, fps, speed_thresh = 12, 30.0, 0.3
    trans = np.tile([0.0, 0.0, 0.95], (n, 1))
    k = 6
    step = 2.0 * speed_thresh / fps  # double the threshold per frame
    for i in range(k, n):
        trans[i, 0] = trans[i - 1, 0] + step
    labels = extract_contact_labels(MotionClip.assemble(
        np.zeros((n, 4)), np.tile(IDENTITY_6D, (n, 24, 1)), trans, fps=fps
    ), skel, speed_thresh=speed_thresh)
    np.testing.assert_allclose(labels[: k - 1], 1.0)
    np.testing.assert_allclose(labels[k:-1], 0.0)
