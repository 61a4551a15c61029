"""Skeletons, pose sequences, forward kinematics and the capsule proxy surface.

Flattened pose layout, per frame: root translation (x, y, z) followed by the
6D local rotation of each rotated joint in skeleton order. The rotated joints
are the first ``n_rot`` joints; the rest keep identity local rotation.
World frame is z-up; a skeleton at identity root rotation faces +x.
"""
from __future__ import annotations

import hashlib
import math
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mathcore import rotation_between, sixd_to_matrix


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray
    n_rot: int
    wrists: tuple[int, int]
    feet: tuple[int, ...] = ()
    radii: tuple[float, ...] = ()

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "wrists", tuple(int(w) for w in self.wrists))
        object.__setattr__(self, "feet", tuple(int(f) for f in self.feet))
        radii = tuple(float(r) for r in self.radii) or (0.05,) * len(self.parents)
        object.__setattr__(self, "radii", radii)
        j = len(self.parents)
        if not (len(self.names) == len(off) == len(radii) == j):
            raise SkeletonError("names, parents, offsets and radii must have one entry per joint")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise SkeletonError("exactly one root, at index 0, is required")
        if any(not (0 <= p < i) for i, p in enumerate(self.parents) if i > 0):
            raise SkeletonError("parents must precede children")
        if not 1 <= self.n_rot <= j:
            raise SkeletonError(f"n_rot must be in [1, {j}]")
        if len(self.wrists) != 2 or any(not 0 <= w < j for w in self.wrists + self.feet):
            raise SkeletonError("wrist/foot indices out of range")
        if any(r <= 0 for r in radii):
            raise SkeletonError("radii must be positive")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def pose_dim(self) -> int:
        return pose_dim(self.n_rot)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "parents": list(self.parents),
                "offsets": self.offsets.tolist(), "n_rot": self.n_rot,
                "wrists": list(self.wrists), "feet": list(self.feet), "radii": list(self.radii)}

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(tuple(d["names"]), tuple(d["parents"]), np.array(d["offsets"], dtype=float),
                   int(d["n_rot"]), tuple(d["wrists"]), tuple(d.get("feet", ())), tuple(d.get("radii", ())))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def pose_dim(n_rot: int) -> int:
    return 3 + 6 * n_rot


def desk_skeleton() -> Skeleton:
    """9-joint stick figure: pelvis, spine, both arms, head.

    The spine joint sits just above the pelvis so its rotation bends the
    whole upper body. Arms hang straight down at rest.
    """
    names = ("pelvis", "spine", "l_shoulder", "l_elbow", "r_shoulder", "r_elbow", "head", "l_wrist", "r_wrist")
    parents = (-1, 0, 1, 2, 1, 4, 1, 3, 5)
    offsets = [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.10],
        [0.0, 0.18, 0.40],
        [0.0, 0.0, -0.28],
        [0.0, -0.18, 0.40],
        [0.0, 0.0, -0.28],
        [0.0, 0.0, 0.55],
        [0.0, 0.0, -0.25],
        [0.0, 0.0, -0.25],
    ]
    radii = (0.10, 0.12, 0.06, 0.045, 0.06, 0.045, 0.09, 0.035, 0.035)
    return Skeleton(names, parents, np.array(offsets), n_rot=6, wrists=(7, 8), feet=(), radii=radii)


def smpl_like_skeleton() -> Skeleton:
    """24 joints / 22 rotated, ordered like the common SMPL body tree (z-up, facing +x)."""
    names = ("pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle", "r_ankle",
             "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head", "l_shoulder",
             "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand")
    parents = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
    offsets = [
        [0, 0, 0], [0, 0.07, -0.09], [0, -0.07, -0.09], [0, 0, 0.11], [0, 0.01, -0.38], [0, -0.01, -0.38],
        [0, 0, 0.13], [0, 0, -0.40], [0, 0, -0.40], [0, 0, 0.05], [0.12, 0, -0.05], [0.12, 0, -0.05],
        [0, 0, 0.21], [0, 0.08, 0.12], [0, -0.08, 0.12], [0.02, 0, 0.09], [0, 0.10, 0.01], [0, -0.10, 0.01],
        [0, 0, -0.27], [0, 0, -0.27], [0, 0, -0.25], [0, 0, -0.25], [0, 0, -0.08], [0, 0, -0.08],
    ]
    radii = (0.10, 0.08, 0.08, 0.11, 0.06, 0.06, 0.12, 0.05, 0.05, 0.12, 0.04, 0.04, 0.05, 0.05, 0.05,
             0.09, 0.05, 0.05, 0.045, 0.045, 0.035, 0.035, 0.03, 0.03)
    return Skeleton(names, parents, np.array(offsets, dtype=float), n_rot=22, wrists=(20, 21), feet=(10, 11),
                    radii=radii)


def forward_kinematics(skel: Skeleton, root: np.ndarray, rot6d: np.ndarray,
                       return_rotations: bool = False):
    """Global joint positions (..., J, 3) from root translation and local 6D rotations.

    ``position[child] = position[parent] + R_global[parent] @ offset[child]``.
    """
    root = np.asarray(root, dtype=float)
    rot6d = np.asarray(rot6d, dtype=float)
    if rot6d.shape[-2:] != (skel.n_rot, 6):
        raise SkeletonError(f"expected (..., {skel.n_rot}, 6) rotations, got {rot6d.shape}")
    batch = root.shape[:-1]
    local = sixd_to_matrix(rot6d)
    eye = np.broadcast_to(np.eye(3), batch + (3, 3))
    glob: list[np.ndarray] = []
    pos: list[np.ndarray] = []
    for j, p in enumerate(skel.parents):
        r_loc = local[..., j, :, :] if j < skel.n_rot else eye
        if p < 0:
            glob.append(r_loc)
            pos.append(root + skel.offsets[j])
        else:
            glob.append(glob[p] @ r_loc)
            pos.append(pos[p] + glob[p] @ skel.offsets[j])
    positions = np.stack(pos, axis=-2)
    if return_rotations:
        return positions, np.stack(glob, axis=-3)
    return positions


@dataclass
class PoseSequence:
    skeleton: Skeleton
    root: np.ndarray    # (T, 3)
    rot6d: np.ndarray   # (T, n_rot, 6)

    def __post_init__(self):
        self.root = np.asarray(self.root, dtype=float).reshape(-1, 3)
        self.rot6d = np.asarray(self.rot6d, dtype=float).reshape(len(self.root), self.skeleton.n_rot, 6)

    def __len__(self) -> int:
        return len(self.root)

    @cached_property
    def _fk(self):
        return forward_kinematics(self.skeleton, self.root, self.rot6d, return_rotations=True)

    @property
    def joints(self) -> np.ndarray:
        return self._fk[0]

    @property
    def global_rotations(self) -> np.ndarray:
        return self._fk[1]

    @property
    def wrists(self) -> np.ndarray:
        """(T, 6): left wrist xyz then right wrist xyz."""
        j = self.joints
        return np.concatenate([j[:, self.skeleton.wrists[0]], j[:, self.skeleton.wrists[1]]], axis=-1)

    @property
    def root_rotation(self) -> np.ndarray:
        return self.global_rotations[:, 0]


def flatten_pose(seq: PoseSequence) -> np.ndarray:
    return np.concatenate([seq.root, seq.rot6d.reshape(len(seq), -1)], axis=-1)


def unflatten_pose(skel: Skeleton, flat: np.ndarray) -> PoseSequence:
    flat = np.asarray(flat, dtype=float)
    if flat.ndim != 2 or flat.shape[1] != skel.pose_dim:
        raise SkeletonError(f"expected (T, {skel.pose_dim}) pose matrix, got {flat.shape}")
    return PoseSequence(skel, flat[:, :3].copy(), flat[:, 3:].reshape(len(flat), skel.n_rot, 6).copy())


@dataclass(frozen=True)
class ProxySurface:
    """Rings of points on a capsule around every bone, fixed in the parent's frame.

    Point count is ``n_bones * rings * points_per_ring``.
    """

    rings: int = 3
    points_per_ring: int = 8

    def local_points(self, skel: Skeleton) -> tuple[np.ndarray, np.ndarray]:
        """Per-point (parent joint index, offset in the parent's frame)."""
        owners, pts = [], []
        phi = 2 * np.pi * np.arange(self.points_per_ring) / self.points_per_ring
        for j in range(1, skel.n_joints):
            p = skel.parents[j]
            o = skel.offsets[j]
            length = np.linalg.norm(o)
            axis = o / length if length > 1e-9 else np.array([0.0, 0.0, 1.0])
            rot = rotation_between(np.array([0.0, 0.0, 1.0]), axis)
            u, v = rot[:, 0], rot[:, 1]
            r = skel.radii[j]
            for k in range(self.rings):
                f = (k + 0.5) / self.rings
                ring = f * o + r * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)
                pts.append(ring)
                owners += [p] * self.points_per_ring
        return np.array(owners, dtype=np.int64), np.concatenate(pts)

    def count(self, skel: Skeleton) -> int:
        return (skel.n_joints - 1) * self.rings * self.points_per_ring


def sample_proxy_surface(skel: Skeleton, pose: PoseSequence, proxy: ProxySurface | None = None) -> np.ndarray:
    """(T, M, 3) world-space proxy surface points."""
    proxy = proxy or ProxySurface()
    owners, local = proxy.local_points(skel)
    pos = pose.joints[:, owners]
    rot = pose.global_rotations[:, owners]
    return pos + np.einsum("tmij,mj->tmi", rot, local)


def rest_pose(skel: Skeleton, frames: int = 1, root=(0.0, 0.0, 0.0)) -> PoseSequence:
    r6 = np.tile(np.array([1.0, 0, 0, 0, 1.0, 0]), (frames, skel.n_rot, 1))
    return PoseSequence(skel, np.tile(np.asarray(root, dtype=float), (frames, 1)), r6)


class UnreachableTargetError(ValueError):
    pass


def two_bone_ik(root: np.ndarray, target: np.ndarray, upper: float, lower: float,
                pole: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Analytic two-bone solve; returns (middle joint position, bend angle).

    The bend angle is 0 for a straight chain and ``pi - interior`` otherwise,
    with the interior angle from the law of cosines. The middle joint lies in
    the plane spanned by the chain axis and ``pole``, on the ``pole`` side.
    """
    root = np.asarray(root, dtype=float)
    target = np.asarray(target, dtype=float)
    axis = target - root
    d = float(np.linalg.norm(axis))
    if d > upper + lower + tol or d < abs(upper - lower) - tol or d < 1e-12:
        raise UnreachableTargetError(f"target at distance {d:.4f} outside [{abs(upper - lower):.4f}, {upper + lower:.4f}]")
    d = min(max(d, abs(upper - lower)), upper + lower)
    u = axis / np.linalg.norm(axis)
    v = np.asarray(pole, dtype=float) - np.dot(pole, u) * u
    nv = np.linalg.norm(v)
    if nv < 1e-9:
        raise UnreachableTargetError("pole direction is parallel to the chain axis")
    v /= nv
    a = (upper ** 2 - lower ** 2 + d ** 2) / (2 * d)
    h = math.sqrt(max(upper ** 2 - a ** 2, 0.0))
    mid = root + a * u + h * v
    cos_int = (upper ** 2 + lower ** 2 - d ** 2) / (2 * upper * lower)
    bend = math.pi - math.acos(min(1.0, max(-1.0, cos_int)))
    return mid, bend
