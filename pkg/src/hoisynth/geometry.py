"""Object meshes, trajectories, basis-point-set features, nearest-vertex and SDF queries."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mathcore import RigidTransform, check_rotation

TRAJECTORY_SCHEMA_VERSION = 1
BRUTE_FORCE_LIMIT = 4096

_TRAJ_COLUMNS = ["version", "frame"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"]


class MeshError(ValueError):
    pass


class TrajectoryFormatError(ValueError):
    pass


class SdfError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(v) < 1:
            raise MeshError("mesh needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise MeshError("mesh vertices contain NaN or inf")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


def load_obj(path: str | Path, name: str | None = None) -> Mesh:
    """Read ``v`` and triangular ``f`` lines of an OBJ file (1-based indices)."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] not in ("v", "f"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                    continue
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: {exc}") from exc
            if len(idx) != 3:
                raise MeshError(f"{path}:{lineno}: only triangle faces are supported")
            faces.append([i - 1 for i in idx])
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), name or Path(path).stem)


def save_obj(mesh: Mesh, path: str | Path) -> None:
    buf = io.StringIO()
    buf.write(f"# {mesh.name}\n")
    for v in mesh.vertices:
        buf.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
    for f in mesh.faces:
        buf.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    Path(path).write_text(buf.getvalue())


@dataclass(frozen=True)
class ObjectSequence:
    """A rigid mesh moved by per-frame transforms (rotations (T,3,3), translations (T,3))."""

    mesh: Mesh
    rotations: np.ndarray
    translations: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        trans = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        if len(rot) < 1 or len(rot) != len(trans):
            raise ValueError("need T >= 1 matching rotations and translations")
        check_rotation(rot, tol=1e-6)
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translations", trans)

    def __len__(self) -> int:
        return len(self.rotations)

    def transform(self, t: int) -> RigidTransform:
        self._check_frame(t)
        return RigidTransform(self.rotations[t], self.translations[t])

    def _check_frame(self, t: int) -> None:
        if not 0 <= t < len(self):
            raise IndexError(f"frame {t} out of range for {len(self)} frames")

    def vertices(self, t: int) -> np.ndarray:
        return transform_mesh(self, t)

    def all_vertices(self) -> np.ndarray:
        """(T, K, 3) world-space vertices."""
        v = self.mesh.vertices
        return np.einsum("tij,kj->tki", self.rotations, v) + self.translations[:, None, :]


def transform_mesh(seq: ObjectSequence, t: int) -> np.ndarray:
    seq._check_frame(t)
    return seq.mesh.vertices @ seq.rotations[t].T + seq.translations[t]


def save_trajectory(seq: ObjectSequence, path: str | Path) -> None:
    """CSV, one row per frame: version, frame, row-major rotation, translation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_TRAJ_COLUMNS)
        for t in range(len(seq)):
            w.writerow([TRAJECTORY_SCHEMA_VERSION, t]
                       + [repr(float(x)) for x in seq.rotations[t].reshape(-1)]
                       + [repr(float(x)) for x in seq.translations[t]])


def load_trajectory(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rots, trans = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != _TRAJ_COLUMNS:
            raise TrajectoryFormatError(f"{path}: unexpected header {reader.fieldnames}")
        for expected, row in enumerate(reader):
            if int(row["version"]) != TRAJECTORY_SCHEMA_VERSION:
                raise TrajectoryFormatError(f"{path}: unsupported schema version {row['version']}")
            if int(row["frame"]) != expected:
                raise TrajectoryFormatError(f"{path}: frames must be consecutive from 0")
            rots.append([float(row[c]) for c in _TRAJ_COLUMNS[2:11]])
            trans.append([float(row[c]) for c in _TRAJ_COLUMNS[11:]])
    if not rots:
        raise TrajectoryFormatError(f"{path}: no frames")
    return np.array(rots).reshape(-1, 3, 3), np.array(trans)


def load_object_sequence(mesh_path: str | Path, trajectory_path: str | Path, fps: float = 30.0) -> ObjectSequence:
    rots, trans = load_trajectory(trajectory_path)
    return ObjectSequence(load_obj(mesh_path), rots, trans, fps)


# --- nearest vertex -------------------------------------------------------

def _sq_dist(verts: np.ndarray, p: np.ndarray) -> np.ndarray:
    # spelled out per component so that any subset of rows yields bit-identical values
    dx = verts[..., 0] - p[..., 0]
    dy = verts[..., 1] - p[..., 1]
    dz = verts[..., 2] - p[..., 2]
    return dx * dx + dy * dy + dz * dz


def nearest_vertex_brute(verts: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive scan; returns (indices, distances) for (Q, 3) query points."""
    verts = np.asarray(verts, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(verts) == 0:
        raise MeshError("empty vertex list")
    idx = np.empty(len(points), dtype=np.int64)
    d2 = np.empty(len(points))
    chunk = max(1, 2_000_000 // len(verts))
    for s in range(0, len(points), chunk):
        sq = _sq_dist(verts[None, :, :], points[s:s + chunk, None, :])
        i = np.argmin(sq, axis=1)  # first occurrence -> lowest index on ties
        idx[s:s + chunk] = i
        d2[s:s + chunk] = sq[np.arange(len(i)), i]
    return idx, np.sqrt(d2)


class VertexGrid:
    """Uniform-grid bucketing of vertices for exact nearest-vertex search."""

    def __init__(self, verts: np.ndarray, cell: float | None = None):
        self.verts = np.asarray(verts, dtype=float)
        if len(self.verts) == 0:
            raise MeshError("empty vertex list")
        lo, hi = self.verts.min(axis=0), self.verts.max(axis=0)
        if cell is None:
            extent = float(np.max(hi - lo))
            cell = max(extent / max(1.0, len(self.verts) ** (1 / 3)), 1e-6)
        self.cell = cell
        self.lo = lo
        self.dims = np.maximum(np.floor((hi - lo) / cell).astype(np.int64) + 1, 1)
        keys = self._cell_of(self.verts)
        flat = self._flat(keys)
        order = np.argsort(flat, kind="stable")
        self._sorted = order
        self._flat_sorted = flat[order]

    def _cell_of(self, p: np.ndarray) -> np.ndarray:
        c = np.floor((p - self.lo) / self.cell).astype(np.int64)
        return np.clip(c, 0, self.dims - 1)

    def _flat(self, c: np.ndarray) -> np.ndarray:
        return (c[..., 0] * self.dims[1] + c[..., 1]) * self.dims[2] + c[..., 2]

    def _members(self, cells: np.ndarray) -> np.ndarray:
        flat = self._flat(cells)
        lo = np.searchsorted(self._flat_sorted, flat, side="left")
        hi = np.searchsorted(self._flat_sorted, flat, side="right")
        if not np.any(hi > lo):
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self._sorted[a:b] for a, b in zip(lo, hi) if b > a])

    def query(self, p: np.ndarray) -> tuple[int, float]:
        p = np.asarray(p, dtype=float)
        home = np.floor((p - self.lo) / self.cell).astype(np.int64)
        # distance from p to the grid box, so shells are counted from the box surface
        outside = np.maximum(np.maximum(self.lo - p, p - (self.lo + self.dims * self.cell)), 0.0)
        base = float(np.linalg.norm(outside))
        home = np.clip(home, 0, self.dims - 1)
        best_i, best_d2 = -1, np.inf
        max_r = int(self.dims.max())
        r = 0
        while r <= max_r:
            shell = _shell(home, r, self.dims)
            if len(shell):
                cand = self._members(shell)
                if len(cand):
                    d2 = _sq_dist(self.verts[cand], p)
                    j = int(np.argmin(d2))
                    m = d2[j]
                    ties = cand[d2 == m]
                    ci = int(ties.min())
                    if m < best_d2 or (m == best_d2 and ci < best_i):
                        best_i, best_d2 = ci, m
            # every vertex in shells beyond r is at least max(base, r * cell) away from p
            if best_i >= 0 and max(base, r * self.cell) ** 2 > best_d2:
                break
            r += 1
        return best_i, math.sqrt(best_d2)


def _shell(home: np.ndarray, r: int, dims: np.ndarray) -> np.ndarray:
    if r == 0:
        return home[None, :]
    rng = np.arange(-r, r + 1)
    g = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    g = g[np.abs(g).max(axis=1) == r] + home
    ok = np.all((g >= 0) & (g < dims), axis=1)
    return g[ok]


def nearest_vertex(verts: np.ndarray, p: np.ndarray) -> tuple[int, float]:
    """Index of the closest vertex (lowest index on ties) and its distance."""
    verts = np.asarray(verts, dtype=float)
    if len(verts) == 0:
        raise MeshError("empty vertex list")
    if len(verts) < BRUTE_FORCE_LIMIT:
        i, d = nearest_vertex_brute(verts, p)
        return int(i[0]), float(d[0])
    return VertexGrid(verts).query(p)


def nearest_vertices(verts: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`nearest_vertex` over (Q, 3) points."""
    verts = np.asarray(verts, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(verts) < BRUTE_FORCE_LIMIT:
        return nearest_vertex_brute(verts, points)
    grid = VertexGrid(verts)
    out = [grid.query(p) for p in points]
    return np.array([o[0] for o in out], dtype=np.int64), np.array([o[1] for o in out])


# --- basis point sets -----------------------------------------------------

@dataclass(frozen=True)
class BpsBasis:
    points: np.ndarray
    radius: float = 1.0
    seed: int = 0

    @classmethod
    def sample(cls, n_points: int = 1024, radius: float = 1.0, seed: int = 0) -> "BpsBasis":
        """Uniform samples from the volume of a ball."""
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((n_points, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.random(n_points) ** (1.0 / 3.0)
        return cls(d * r[:, None], radius, seed)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if np.any(np.linalg.norm(pts, axis=1) > self.radius * (1 + 1e-12)):
            raise ValueError("basis point outside the ball")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        h.update(repr(float(self.radius)).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class BpsFeature:
    centroid: np.ndarray
    deltas: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.centroid, self.deltas.reshape(-1)])


def compute_bps(basis: BpsBasis, verts: np.ndarray) -> BpsFeature:
    """Offsets from each (centroid-translated) basis point to its nearest vertex.

    ``deltas = nearest_vertex - query_point``, i.e. pointing toward the surface.
    """
    verts = np.asarray(verts, dtype=float).reshape(-1, 3)
    if len(verts) == 0:
        raise MeshError("empty vertex list")
    centroid = verts.mean(axis=0)
    q = centroid + basis.points
    idx, _ = nearest_vertices(verts, q)
    return BpsFeature(centroid, verts[idx] - q)


def bps_feature_dim(n_points: int) -> int:
    return 3 + 3 * n_points


def bps_sequence(basis: BpsBasis, seq: ObjectSequence) -> np.ndarray:
    """(T, 3 + 3 n_bps) raw features ``[centroid, deltas]`` for every frame."""
    all_v = seq.all_vertices()
    return np.stack([compute_bps(basis, v).flat() for v in all_v])


# --- signed distance fields -----------------------------------------------

class SdfField:
    """Signed distance in meters: negative inside, positive outside."""

    kind = "abstract"

    def __call__(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class SphereSdf(SdfField):
    radius: float
    center: tuple = (0.0, 0.0, 0.0)
    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise SdfError("sphere radius must be positive")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius

    def to_dict(self):
        return {"kind": self.kind, "radius": self.radius, "center": list(self.center)}


@dataclass(frozen=True)
class BoxSdf(SdfField):
    half_extents: tuple
    center: tuple = (0.0, 0.0, 0.0)
    kind = "box"

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise SdfError("box half extents must be positive")

    def __call__(self, p):
        q = np.abs(np.asarray(p, dtype=float) - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def to_dict(self):
        return {"kind": self.kind, "half_extents": list(self.half_extents), "center": list(self.center)}


@dataclass(frozen=True)
class CapsuleSdf(SdfField):
    a: tuple
    b: tuple
    radius: float
    kind = "capsule"

    def __post_init__(self):
        if not self.radius > 0:
            raise SdfError("capsule radius must be positive")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        a, b = np.asarray(self.a, dtype=float), np.asarray(self.b, dtype=float)
        ab = b - a
        denom = float(ab @ ab)
        h = np.zeros(p.shape[:-1]) if denom == 0 else np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
        return np.linalg.norm(p - a - h[..., None] * ab, axis=-1) - self.radius

    def to_dict(self):
        return {"kind": self.kind, "a": list(self.a), "b": list(self.b), "radius": self.radius}


@dataclass(frozen=True)
class CylinderSdf(SdfField):
    """Capped cylinder aligned with z."""

    radius: float
    half_height: float
    center: tuple = (0.0, 0.0, 0.0)
    kind = "cylinder"

    def __post_init__(self):
        if not (self.radius > 0 and self.half_height > 0):
            raise SdfError("cylinder dimensions must be positive")

    def __call__(self, p):
        q = np.asarray(p, dtype=float) - np.asarray(self.center)
        dr = np.linalg.norm(q[..., :2], axis=-1) - self.radius
        dz = np.abs(q[..., 2]) - self.half_height
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        return outside + np.minimum(np.maximum(dr, dz), 0.0)

    def to_dict(self):
        return {"kind": self.kind, "radius": self.radius, "half_height": self.half_height,
                "center": list(self.center)}


@dataclass(frozen=True)
class UnionSdf(SdfField):
    parts: tuple
    kind = "union"

    def __call__(self, p):
        return np.min(np.stack([s(p) for s in self.parts]), axis=0)

    def to_dict(self):
        return {"kind": self.kind, "parts": [s.to_dict() for s in self.parts]}


@dataclass(frozen=True)
class GridSdf(SdfField):
    """Trilinearly interpolated samples on a regular grid.

    Queries outside the grid are clamped to the grid box and the distance
    from the query to the box is added to the interpolated value.
    """

    origin: np.ndarray
    spacing: float
    values: np.ndarray
    kind = "grid"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or min(vals.shape) < 2:
            raise SdfError("grid values must be a 3-D array with at least 2 samples per axis")
        if not np.all(np.isfinite(vals)):
            raise SdfError("grid values must be finite")
        if not self.spacing > 0:
            raise SdfError("grid spacing must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.values.shape) - 1) * self.spacing

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        clamped = np.clip(p, self.origin, self.upper)
        extra = np.linalg.norm(p - clamped, axis=-1)
        u = (clamped - self.origin) / self.spacing
        shape = np.array(self.values.shape)
        i0 = np.clip(np.floor(u).astype(np.int64), 0, shape - 2)
        f = u - i0
        v = self.values
        out = 0.0
        for dx in (0, 1):
            wx = f[..., 0] if dx else 1 - f[..., 0]
            for dy in (0, 1):
                wy = f[..., 1] if dy else 1 - f[..., 1]
                for dz in (0, 1):
                    wz = f[..., 2] if dz else 1 - f[..., 2]
                    out = out + wx * wy * wz * v[i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz]
        return out + extra

    def to_dict(self):
        return {"kind": self.kind, "origin": self.origin.tolist(), "spacing": self.spacing,
                "values": self.values.tolist()}


def sdf_from_dict(d: dict) -> SdfField:
    kind = d.get("kind")
    if kind == "sphere":
        return SphereSdf(float(d["radius"]), tuple(d.get("center", (0, 0, 0))))
    if kind == "box":
        return BoxSdf(tuple(d["half_extents"]), tuple(d.get("center", (0, 0, 0))))
    if kind == "capsule":
        return CapsuleSdf(tuple(d["a"]), tuple(d["b"]), float(d["radius"]))
    if kind == "cylinder":
        return CylinderSdf(float(d["radius"]), float(d["half_height"]), tuple(d.get("center", (0, 0, 0))))
    if kind == "union":
        return UnionSdf(tuple(sdf_from_dict(p) for p in d["parts"]))
    if kind == "grid":
        return GridSdf(np.array(d["origin"]), float(d["spacing"]), np.array(d["values"]))
    raise SdfError(f"unknown SDF kind {kind!r}")


def sdf_query(field: SdfField, p: np.ndarray) -> np.ndarray:
    return field(p)


def point_triangle_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from points to triangles (broadcasting, Voronoi-region method)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        closest = a + v_in[..., None] * ab + w_in[..., None] * ac

        # edge regions
        t_ab = d1 / (d1 - d3)
        e_ab = a + t_ab[..., None] * ab
        t_ac = d2 / (d2 - d6)
        e_ac = a + t_ac[..., None] * ac
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        e_bc = b + t_bc[..., None] * (c - b)

    bshape = closest.shape
    a_, b_, c_ = (np.broadcast_to(x, bshape) for x in (a, b, c))
    # later assignments override earlier ones; order mirrors the region tests
    closest = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None], e_bc, closest)
    closest = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None], e_ac, closest)
    closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c_, closest)
    closest = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None], e_ab, closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b_, closest)
    closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a_, closest)
    return np.linalg.norm(p - closest, axis=-1)


def mesh_unsigned_distance(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Exact point-to-mesh distance.

    Triangles are culled by centroid distance: a triangle whose centroid is
    farther than ``best + circumradius_max`` cannot be closer than ``best``.
    Points whose k nearest centroids do not satisfy that bound are retried
    with a larger k, and finally with a full scan.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = mesh.vertices[mesh.faces]
    if len(tri) == 0:
        raise MeshError("mesh has no faces")
    cent = tri.mean(axis=1)
    rmax = float(np.max(np.linalg.norm(tri - cent[:, None, :], axis=-1)))
    tree = cKDTree(cent)
    best = np.full(len(points), np.inf)
    todo = np.arange(len(points))
    for k in (16, 64, 256):
        if len(todo) == 0 or k >= len(tri):
            break
        cd, ci = tree.query(points[todo], k=k)
        d = np.empty(cd.shape)
        for s in range(0, len(todo), 4096):
            sl = slice(s, s + 4096)
            t = tri[ci[sl]]
            d[sl] = point_triangle_distance(points[todo[sl], None, :], t[..., 0, :], t[..., 1, :], t[..., 2, :])
        b = d.min(axis=1)
        done = cd[:, -1] >= b + rmax
        best[todo[done]] = b[done]
        todo = todo[~done]
    for s in range(0, len(todo), 256):
        sel = todo[s:s + 256]
        full = point_triangle_distance(points[sel, None, :], tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
        best[sel] = full.min(axis=1)
    return best


def bake_grid_sdf(mesh: Mesh, resolution: int = 32, padding: float = 0.1) -> GridSdf:
    """Sample a closed triangle mesh's SDF on a cubic grid.

    Magnitudes are exact point-triangle distances; the sign comes from the
    parity of +z ray crossings through each grid column.
    """
    lo = mesh.vertices.min(axis=0) - padding
    hi = mesh.vertices.max(axis=0) + padding
    spacing = float(np.max(hi - lo) / (resolution - 1))
    axes = [lo[i] + spacing * np.arange(resolution) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    dist = mesh_unsigned_distance(mesh, pts).reshape(resolution, resolution, resolution)
    inside = _column_parity(mesh, axes)
    return GridSdf(lo, spacing, np.where(inside, -dist, dist))


def _column_parity(mesh: Mesh, axes: list[np.ndarray]) -> np.ndarray:
    tri = mesh.vertices[mesh.faces]
    # irrational nudge keeps rays off shared edges and vertices
    jitter = np.array([math.sqrt(2.0), math.sqrt(3.0)]) * 1e-7
    cx, cy = np.meshgrid(axes[0] + jitter[0], axes[1] + jitter[1], indexing="ij")
    cols = np.stack([cx.ravel(), cy.ravel()], axis=-1)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    inside = np.zeros((len(cols), len(axes[2])), dtype=bool)
    z = axes[2]
    for s in range(0, len(cols), 512):
        q = cols[s:s + 512, None, :]
        v0 = b[None, :, :2] - a[None, :, :2]
        v1 = c[None, :, :2] - a[None, :, :2]
        v2 = q - a[None, :, :2]
        den = v0[..., 0] * v1[..., 1] - v1[..., 0] * v0[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (v2[..., 0] * v1[..., 1] - v1[..., 0] * v2[..., 1]) / den
            v = (v0[..., 0] * v2[..., 1] - v2[..., 0] * v0[..., 1]) / den
            hit = (den != 0) & (u >= 0) & (v >= 0) & (u + v <= 1)
            zhit = a[None, :, 2] + u * (b[None, :, 2] - a[None, :, 2]) + v * (c[None, :, 2] - a[None, :, 2])
        zhit = np.where(hit, zhit, -np.inf)
        counts = np.sum(zhit[:, :, None] > z[None, None, :], axis=1)
        inside[s:s + 512] = counts % 2 == 1
    return inside.reshape(len(axes[0]), len(axes[1]), len(axes[2]))


# --- primitive meshes -----------------------------------------------------

def _weld(verts: np.ndarray, faces: np.ndarray, decimals: int = 9) -> tuple[np.ndarray, np.ndarray]:
    key = np.round(verts, decimals)
    uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty(len(order), dtype=np.int64)
    remap[order] = np.arange(len(order))
    new_verts = verts[first[order]]
    new_faces = remap[inv.reshape(-1)][faces]
    keep = (new_faces[:, 0] != new_faces[:, 1]) & (new_faces[:, 1] != new_faces[:, 2]) & (new_faces[:, 0] != new_faces[:, 2])
    return new_verts, new_faces[keep]


def _even_divisions(length: float, spacing: float) -> int:
    n = max(2, int(math.ceil(length / spacing)))
    return n + (n % 2)


def box_mesh(size, spacing: float = 0.03, center=(0.0, 0.0, 0.0), name: str = "box") -> Mesh:
    """Closed box surface subdivided to roughly ``spacing``; face centers are vertices."""
    size = np.asarray(size, dtype=float)
    half = size / 2
    verts, faces = [], []
    for axis in range(3):
        u_ax, v_ax = [i for i in range(3) if i != axis]
        nu = _even_divisions(size[u_ax], spacing)
        nv = _even_divisions(size[v_ax], spacing)
        us = np.linspace(-half[u_ax], half[u_ax], nu + 1)
        vs = np.linspace(-half[v_ax], half[v_ax], nv + 1)
        for sgn in (-1.0, 1.0):
            base = sum(len(v) for v in verts)
            g = np.zeros((nu + 1, nv + 1, 3))
            g[..., axis] = sgn * half[axis]
            g[..., u_ax] = us[:, None]
            g[..., v_ax] = vs[None, :]
            verts.append(g.reshape(-1, 3))
            idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1) + base
            q0, q1, q2, q3 = idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]
            f = np.concatenate([np.stack([q0, q1, q2], -1).reshape(-1, 3),
                                np.stack([q0, q2, q3], -1).reshape(-1, 3)])
            # outward winding: (u, v, axis) right-handed -> flip when sign is negative
            handed = np.cross(np.eye(3)[u_ax], np.eye(3)[v_ax])[axis]
            if sgn * handed < 0:
                f = f[:, [0, 2, 1]]
            faces.append(f)
    v, f = _weld(np.concatenate(verts), np.concatenate(faces))
    return Mesh(v + np.asarray(center, dtype=float), f, name)


def cylinder_mesh(radius: float, height: float, spacing: float = 0.03, center=(0.0, 0.0, 0.0),
                  name: str = "cylinder") -> Mesh:
    """Closed z-aligned cylinder; angular divisions are a multiple of 4."""
    n_th = max(8, int(math.ceil(2 * math.pi * radius / spacing)))
    n_th += (-n_th) % 4
    n_z = _even_divisions(height, spacing)
    n_r = max(1, int(math.ceil(radius / spacing)))
    th = 2 * math.pi * np.arange(n_th) / n_th
    zs = np.linspace(-height / 2, height / 2, n_z + 1)
    ring = np.stack([np.cos(th), np.sin(th)], -1)

    side = np.concatenate([np.column_stack([radius * ring, np.full(n_th, z)]) for z in zs])
    verts = [side]
    faces = []
    idx = np.arange(len(side)).reshape(n_z + 1, n_th)
    nxt = np.roll(idx, -1, axis=1)
    faces.append(np.stack([idx[:-1], nxt[:-1], nxt[1:]], -1).reshape(-1, 3))
    faces.append(np.stack([idx[:-1], nxt[1:], idx[1:]], -1).reshape(-1, 3))

    for sgn, z in ((-1.0, zs[0]), (1.0, zs[-1])):
        base = sum(len(v) for v in verts)
        rings = [np.column_stack([radius * (k / n_r) * ring, np.full(n_th, z)]) for k in range(n_r, 0, -1)]
        cap = np.concatenate(rings + [np.array([[0.0, 0.0, z]])])
        verts.append(cap)
        ci = np.arange(n_r * n_th).reshape(n_r, n_th) + base
        cn = np.roll(ci, -1, axis=1)
        f = [np.stack([ci[:-1], ci[1:], cn[1:]], -1).reshape(-1, 3),
             np.stack([ci[:-1], cn[1:], cn[:-1]], -1).reshape(-1, 3),
             np.stack([ci[-1], np.full(n_th, base + n_r * n_th), cn[-1]], -1)]
        f = np.concatenate(f)
        if sgn > 0:
            f = f[:, [0, 2, 1]]
        faces.append(f)
    v, f = _weld(np.concatenate(verts), np.concatenate(faces))
    return Mesh(v + np.asarray(center, dtype=float), f, name)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    t = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = {}
        verts = list(v)

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in edges:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                edges[key] = len(verts) - 1
            return edges[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v, f = np.array(verts), np.array(nf)
    return Mesh(v * radius, f, "icosphere")


def merge_meshes(meshes: list[Mesh], name: str) -> Mesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return Mesh(np.concatenate(verts), np.concatenate(faces), name)
