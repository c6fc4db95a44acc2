"""Continuous 6-DOF rotation representation.

A rotation is encoded as the first two columns of its matrix, flattened to a
6-vector (column-major: first column then second column). Decoding runs
Gram-Schmidt: normalize the first vector, orthogonalize and normalize the
second against it, complete with the cross product.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotation, NotARotation

_EPS = 1e-8


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Decode 6-vectors to rotation matrices.

    Accepts shape (..., 6) and returns (..., 3, 3).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise DegenerateRotation(f"expected last dim 6, got {r.shape}")
    a = r[..., :3]
    b = r[..., 3:]

    na = np.linalg.norm(a, axis=-1)
    if np.any(na < _EPS):
        raise DegenerateRotation("first column norm below 1e-8")
    c0 = a / na[..., None]

    b_orth = b - np.sum(b * c0, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b_orth, axis=-1)
    if np.any(nb < _EPS):
        raise DegenerateRotation("second column degenerate after orthogonalization")
    c1 = b_orth / nb[..., None]

    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def matrix_to_rot6d(R: np.ndarray, tol: float = 1e-4) -> np.ndarray:
    """Encode rotation matrices (..., 3, 3) as 6-vectors (first two columns).

    Raises NotARotation when orthogonality or det(R) = +1 fails beyond `tol`.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise NotARotation(f"expected (..., 3, 3), got {R.shape}")
    eye = np.eye(3)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max()
    det_err = np.abs(np.linalg.det(R) - 1.0).max()
    if err > tol or det_err > tol:
        raise NotARotation(f"orthogonality error {err:.2e}, det error {det_err:.2e}")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation matrices (n, 3, 3) via QR of Gaussians."""
    m = rng.standard_normal((n, 3, 3))
    q, r = np.linalg.qr(m)
    # fix sign so det = +1 and the decomposition is unique
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    q = q * d[:, None, :]
    neg = np.linalg.det(q) < 0
    q[neg, :, 2] *= -1.0
    return q
