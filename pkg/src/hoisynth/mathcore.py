"""Rotation representations and rigid/similarity alignment.

All geometry is double precision, lengths in meters. The 6D rotation layout
is the first two *columns* of the rotation matrix, ``[c0x, c0y, c0z, c1x,
c1y, c1z]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateRotationError(ValueError):
    """A 6D rotation whose columns are zero or parallel."""


class NotARotationError(ValueError):
    pass


class RankDeficientError(ValueError):
    """Point sets too small or too degenerate to fix a transform."""


def sixd_to_matrix(r6d: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Gram-Schmidt a (..., 6) array into (..., 3, 3) rotation matrices."""
    r6d = np.asarray(r6d, dtype=float)
    if r6d.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {r6d.shape}")
    a, b = r6d[..., :3], r6d[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < eps):
        raise DegenerateRotationError("first 6D column is zero")
    c0 = a / na
    b = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(nb < eps * np.maximum(1.0, np.linalg.norm(r6d[..., 3:], axis=-1, keepdims=True))):
        raise DegenerateRotationError("6D columns are zero or parallel")
    c1 = b / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def matrix_to_sixd(rot: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    rot = np.asarray(rot, dtype=float)
    if rot.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3), got {rot.shape}")
    check_rotation(rot, tol)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def check_rotation(rot: np.ndarray, tol: float = 1e-6) -> None:
    rtr = np.swapaxes(rot, -1, -2) @ rot
    if np.max(np.abs(rtr - np.eye(3)), initial=0.0) > tol:
        raise NotARotationError("matrix is not orthonormal")
    if np.any(np.linalg.det(rot) < 0):
        raise NotARotationError("matrix is a reflection")


def axis_angle_to_matrix(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula on (..., 3) rotation vectors."""
    w = np.asarray(axis_angle, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    safe = np.where(theta > 1e-12, theta, 1.0)
    k = w / safe[..., 0]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([
        np.stack([zero, -kz, ky], axis=-1),
        np.stack([kz, zero, -kx], axis=-1),
        np.stack([-ky, kx, zero], axis=-1),
    ], axis=-2)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal-arc rotation taking direction ``u`` onto direction ``v``."""
    u = np.asarray(u, dtype=float) / np.linalg.norm(u)
    v = np.asarray(v, dtype=float) / np.linalg.norm(v)
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    c = float(np.dot(u, v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half-turn about any axis orthogonal to u
        ortho = np.cross(u, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-6:
            ortho = np.cross(u, [0.0, 1.0, 0.0])
        return axis_angle_to_matrix(np.pi * ortho / np.linalg.norm(ortho))
    return axis_angle_to_matrix(axis / s * np.arctan2(s, c))


@dataclass(frozen=True)
class RigidTransform:
    """``x -> scale * rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        check_rotation(self.rotation, tol=1e-6)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self.scale * points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rinv = self.rotation.T
        return RigidTransform(rinv, -(rinv @ self.translation) / self.scale, 1.0 / self.scale)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


def solve_procrustes(source: np.ndarray, target: np.ndarray, with_scale: bool = True) -> RigidTransform:
    """Closed-form similarity transform mapping ``source`` onto ``target``.

    Least squares over ``sum |s R x_i + t - y_i|^2`` via the SVD of the
    cross-covariance, with the determinant sign flip that keeps ``R`` a
    proper rotation even for mirrored targets.
    """
    x = np.asarray(source, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3 or x.shape != y.shape:
        raise ValueError(f"need two equal (M, 3) arrays, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise RankDeficientError(f"need at least 3 point pairs, got {len(x)}")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    dx, dy = x - mx, y - my
    sv = np.linalg.svd(dx, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise RankDeficientError("source points are collinear")

    cov = dy.T @ dx / len(x)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = (u * sign) @ vt
    if with_scale:
        var_x = np.sum(dx * dx) / len(x)
        scale = float(np.sum(d * sign) / var_x)
    else:
        scale = 1.0
    trans = my - scale * rot @ mx
    return RigidTransform(rot, trans, scale)


def procrustes_residual(transform: RigidTransform, source: np.ndarray, target: np.ndarray) -> float:
    """RMS distance between the transformed source and the target."""
    diff = transform.apply(source) - np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=-1))))
