"""Procedural human-object interaction sequences and their on-disk corpus.

A scenario places a primitive object (box, cylinder or a lamp made of a base
plate and a pole), moves it along a smooth parametric path, and poses a
skeleton that walks with it while its wrists hold fixed grasp vertices. Arms
are solved with analytic two-bone IK; the torso bends and lowers when the
grasp is below chest height.

World frame is z-up. The body stands on the object's -x side and faces +x of
the object, so it turns with the object when the object yaws.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import contact_labels
from .formats import MotionFile, load_labels, load_motion, save_labels, save_motion
from .geometry import (BoxSdf, CylinderSdf, Mesh, ObjectSequence, SdfField, UnionSdf, box_mesh,
                       cylinder_mesh, load_obj, load_trajectory, merge_meshes, nearest_vertices, save_obj,
                       save_trajectory, sdf_from_dict)
from .kinematics import (PoseSequence, Skeleton, UnreachableTargetError, desk_skeleton,
                         forward_kinematics, two_bone_ik)
from .mathcore import RigidTransform, matrix_to_sixd, rot_y, rot_z, rotation_between, solve_procrustes

PRIMITIVES = ("box", "cylinder", "lamp")
FAMILIES = ("lift", "drag", "push", "rotate")
MANIFEST_SCHEMA = "hoisynth.corpus"
MANIFEST_VERSION = 1
MAX_RETRIES = 20

_SIDES = ("left", "right")


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """One scenario draw. ``dims`` depends on the primitive:

    box ``(width_y, depth_x, height)``, cylinder ``(radius, height)``,
    lamp ``(pole_height, base_size)``. Travel, lift and turn are sampled from
    the ranges when the scenario is generated.
    """

    primitive: str
    dims: tuple
    family: str
    hand_mode: str = "two"          # "two" | "left" | "right"
    frames: int = 30
    fps: float = 30.0
    seed: int = 0
    subject: int = 0
    lift_range: tuple = (0.10, 0.30)
    travel_range: tuple = (0.25, 0.50)
    turn_range_deg: tuple = (30.0, 75.0)

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown trajectory family {self.family!r}")
        if self.hand_mode not in ("two", "left", "right"):
            raise ValueError(f"hand_mode must be two, left or right, got {self.hand_mode!r}")
        expected = {"box": 3, "cylinder": 2, "lamp": 2}[self.primitive]
        if len(self.dims) != expected or min(self.dims) <= 0:
            raise ValueError(f"{self.primitive} needs {expected} positive dimensions, got {self.dims}")
        if self.frames < 12:
            raise ValueError("approach, contact and retreat phases need at least 12 frames")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def random_spec(rng: np.random.Generator, primitive: str, family: str, subject: int = 0,
                frames: int = 30, fps: float = 30.0, seed: int = 0) -> ScenarioSpec:
    """Draw object dimensions and hand mode for a primitive/family pair."""
    if primitive == "box":
        dims = (rng.uniform(0.30, 0.55), rng.uniform(0.25, 0.45), rng.uniform(0.20, 0.45))
        mode = "two"
    elif primitive == "cylinder":
        dims = (rng.uniform(0.07, 0.13), rng.uniform(0.30, 0.60))
        mode = ("two", "left", "right")[int(rng.integers(3))]
    else:
        dims = (rng.uniform(0.95, 1.25), rng.uniform(0.20, 0.30))
        mode = ("left", "right", "right", "two")[int(rng.integers(4))]
    dims = tuple(round(float(x), 4) for x in dims)
    return ScenarioSpec(primitive, dims, family, mode, frames, fps, seed, subject)


@dataclass(frozen=True)
class SubjectStyle:
    reach: float        # horizontal distance from root to grasp, body forward axis
    flare: float        # outward weight of the elbow pole direction


def subject_style(subject: int) -> SubjectStyle:
    rng = np.random.default_rng([7919, subject])
    return SubjectStyle(float(rng.uniform(0.27, 0.36)), float(rng.uniform(0.3, 0.8)))


@dataclass
class DatasetRecord:
    name: str
    spec: ScenarioSpec
    object: ObjectSequence
    sdf: SdfField                 # object-local frame
    pose: PoseSequence
    contact: np.ndarray           # (T, 2) bool, wrist strictly within the contact-metric distance of a vertex
    grasp: np.ndarray             # (T, 2) bool, wrist attached to its grasp vertex
    grasp_vertices: tuple = (-1, -1)
    split: str = "train"

    @property
    def hands(self) -> np.ndarray:
        return self.pose.wrists

    @property
    def subject(self) -> int:
        return self.spec.subject

    def __len__(self) -> int:
        return len(self.pose)


# --- object construction ----------------------------------------------------

def build_object(spec: ScenarioSpec, rng: np.random.Generator, spacing: float = 0.03):
    """Mesh, local SDF and per-hand local grasp points (None for a free hand).

    Boxes and cylinders sit on an invisible support; the lamp stands on the
    floor. The local origin is the centre of the object's footprint.
    """
    if spec.primitive == "box":
        wy, dx, h = spec.dims
        base = rng.uniform(0.50, 0.75)
        center = (0.0, 0.0, base + h / 2)
        mesh = box_mesh((dx, wy, h), spacing, center, "box")
        sdf: SdfField = BoxSdf((dx / 2, wy / 2, h / 2), center)
        gx = -dx / 2 + min(0.10, dx / 4)
        gz = base + h * rng.uniform(0.4, 0.6)
        grasps = {"left": np.array([gx, wy / 2, gz]), "right": np.array([gx, -wy / 2, gz])}
        front = -dx / 2
    elif spec.primitive == "cylinder":
        r, h = spec.dims
        base = rng.uniform(0.50, 0.75)
        center = (0.0, 0.0, base + h / 2)
        mesh = cylinder_mesh(r, h, spacing, center, "cylinder")
        sdf = CylinderSdf(r, h / 2, center)
        gz = base + h * rng.uniform(0.4, 0.7)
        if spec.hand_mode == "two":
            grasps = {"left": np.array([0.0, r, gz]), "right": np.array([0.0, -r, gz])}
        else:
            sgn = 1.0 if spec.hand_mode == "left" else -1.0
            ang = sgn * math.radians(120.0)
            grasps = {spec.hand_mode: np.array([r * math.cos(ang), r * math.sin(ang), gz])}
        front = -r
    else:
        pole_h, size = spec.dims
        plate, pr = 0.04, 0.025
        base_mesh = box_mesh((size, size, plate), spacing, (0.0, 0.0, plate / 2), "base")
        pole_mesh = cylinder_mesh(pr, pole_h, spacing, (0.0, 0.0, plate + pole_h / 2), "pole")
        mesh = merge_meshes([base_mesh, pole_mesh], "lamp")
        sdf = UnionSdf((BoxSdf((size / 2, size / 2, plate / 2), (0.0, 0.0, plate / 2)),
                        CylinderSdf(pr, pole_h / 2, (0.0, 0.0, plate + pole_h / 2))))
        gz = plate + pole_h * rng.uniform(0.70, 0.85)
        if spec.hand_mode == "two":
            grasps = {"left": np.array([-pr, 0.0, gz + 0.08]), "right": np.array([-pr, 0.0, gz - 0.08])}
        else:
            grasps = {spec.hand_mode: np.array([-pr, 0.0, gz])}
        front = -size / 2
    return mesh, sdf, grasps, front


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def object_trajectory(spec: ScenarioSpec, rng: np.random.Generator, start: int, end: int):
    """Per-frame (yaw, translation) with all motion inside [start, end]."""
    t = np.arange(spec.frames)
    s = smoothstep((t - start) / max(end - start, 1))
    yaw0 = rng.uniform(-math.pi, math.pi)
    p0 = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0])
    dyaw = 0.0
    local = np.zeros(3)
    if spec.family == "lift":
        local = np.array([rng.uniform(-0.08, 0.08), 0.0, rng.uniform(*spec.lift_range)])
    elif spec.family == "drag":
        local = np.array([-rng.uniform(*spec.travel_range), rng.uniform(-0.1, 0.1), 0.0])
    elif spec.family == "push":
        local = np.array([rng.uniform(*spec.travel_range), rng.uniform(-0.1, 0.1), 0.0])
    else:
        dyaw = math.radians(rng.uniform(*spec.turn_range_deg)) * (1.0 if rng.random() < 0.5 else -1.0)
    delta = rot_z(yaw0) @ local
    yaws = yaw0 + dyaw * s
    trans = p0 + s[:, None] * delta
    return yaws, trans


# --- body solve -------------------------------------------------------------

@dataclass(frozen=True)
class ArmRig:
    """Indices and lengths needed to pose one skeleton with the generator."""

    skeleton: Skeleton
    spine: int
    chains: dict                  # side -> (shoulder, elbow, wrist)
    lengths: dict                 # side -> (upper, lower)
    root_height: float
    max_bend: float = math.radians(35.0)
    max_crouch: float = 0.5

    @classmethod
    def for_skeleton(cls, skel: Skeleton) -> "ArmRig":
        spine = next((i for i, n in enumerate(skel.names) if n.startswith("spine")), None)
        if spine is None or spine >= skel.n_rot:
            raise ValueError("skeleton needs a rotated joint named spine*")
        chains, lengths = {}, {}
        for side, w in zip(_SIDES, skel.wrists):
            e = skel.parents[w]
            s = skel.parents[e]
            if s < 0 or e >= skel.n_rot or s >= skel.n_rot:
                raise ValueError(f"{side} wrist needs a rotated elbow and shoulder")
            chains[side] = (s, e, w)
            lengths[side] = (float(np.linalg.norm(skel.offsets[e])), float(np.linalg.norm(skel.offsets[w])))
        rest = forward_kinematics(skel, np.zeros(3), np.tile([1.0, 0, 0, 0, 1, 0], (skel.n_rot, 1)))
        if skel.feet:
            height = float(-rest[list(skel.feet), 2].min())
        else:
            height = 0.95
        return cls(skel, spine, chains, lengths, height)

    def reach(self, side: str) -> float:
        return sum(self.lengths[side])


def _identity_locals(n: int) -> np.ndarray:
    return np.broadcast_to(np.eye(3), (n, 3, 3)).copy()


def _fk_globals(skel: Skeleton, root: np.ndarray, local: np.ndarray):
    return forward_kinematics(skel, root, matrix_to_sixd(local), return_rotations=True)


def rest_wrists(rig: ArmRig, root_xy, yaw: float) -> dict:
    skel = rig.skeleton
    local = _identity_locals(skel.n_rot)
    local[0] = rot_z(yaw)
    pos, _ = _fk_globals(skel, np.array([root_xy[0], root_xy[1], rig.root_height]), local)
    return {side: pos[rig.chains[side][2]].copy() for side in _SIDES}


def bend_for_height(rig: ArmRig, height: float) -> float:
    """Forward torso pitch that grows as the lowest grasp drops below chest level."""
    return rig.max_bend * float(np.clip((1.0 - height) / 0.6, 0.0, 1.0))


def solve_body_frame(rig: ArmRig, root_xy, yaw: float, targets: dict, bend: float, margin: float,
                     flare: float) -> tuple[np.ndarray, np.ndarray]:
    """Root translation and local rotation matrices reaching ``targets`` exactly.

    ``targets`` maps side -> world wrist position; missing sides hang down.
    The root is lowered by the smallest crouch that puts every target within
    ``margin`` times the arm length of its shoulder.
    """
    skel = rig.skeleton
    local = _identity_locals(skel.n_rot)
    r_root = rot_z(yaw)
    local[0] = r_root
    local[rig.spine] = rot_y(bend)
    root = np.array([root_xy[0], root_xy[1], rig.root_height])
    pos, glob = _fk_globals(skel, root, local)

    crouch, ceiling = 0.0, rig.max_crouch
    for side, w in targets.items():
        s0 = pos[rig.chains[side][0]]
        d = np.asarray(w) - s0
        r = margin * rig.reach(side)
        h2 = d[0] ** 2 + d[1] ** 2
        if h2 >= r * r:
            raise UnreachableTargetError(f"{side} target is {math.sqrt(h2):.3f} m away horizontally")
        slack = math.sqrt(r * r - h2)
        crouch = max(crouch, -d[2] - slack)
        ceiling = min(ceiling, -d[2] + slack)
    if crouch > ceiling + 1e-12:
        raise UnreachableTargetError(f"crouch {crouch:.3f} m exceeds the feasible range")
    root[2] -= crouch
    pos, glob = _fk_globals(skel, root, local)

    for side in _SIDES:
        s, e, w = rig.chains[side]
        parent_rot = glob[skel.parents[s]]
        if side not in targets:
            local[s] = parent_rot.T @ r_root
            continue
        upper, lower = rig.lengths[side]
        out = 1.0 if side == "left" else -1.0
        pole = r_root @ np.array([-0.3, out * flare, -1.0])
        shoulder = pos[s]
        target = np.asarray(targets[side], dtype=float)
        elbow, _ = two_bone_ik(shoulder, target, upper, lower, pole)
        r_s = rotation_between(parent_rot @ skel.offsets[e], elbow - shoulder) @ parent_rot
        r_e = rotation_between(r_s @ skel.offsets[w], target - elbow) @ r_s
        local[s] = parent_rot.T @ r_s
        local[e] = r_s.T @ r_e
    return root, local


def generate_scenario(spec: ScenarioSpec, rng: np.random.Generator, skeleton: Skeleton | None = None,
                      name: str = "scenario", spacing: float = 0.03) -> DatasetRecord:
    """Sample a scenario, retrying with fresh parameters when IK fails."""
    skeleton = skeleton or desk_skeleton()
    rig = ArmRig.for_skeleton(skeleton)
    last = None
    for _ in range(MAX_RETRIES):
        try:
            return _generate_once(spec, rng, rig, name, spacing)
        except UnreachableTargetError as exc:
            last = exc
    raise ScenarioError(f"{name}: no reachable configuration after {MAX_RETRIES} draws ({last})")


def _generate_once(spec: ScenarioSpec, rng: np.random.Generator, rig: ArmRig, name: str,
                   spacing: float) -> DatasetRecord:
    t_count = spec.frames
    style = subject_style(spec.subject)
    mesh, sdf, grasp_pts, _front = build_object(spec, rng, spacing)
    gidx, _ = nearest_vertices(mesh.vertices, np.array(list(grasp_pts.values())))
    grasp_local = {side: mesh.vertices[i] for side, i in zip(grasp_pts, gidx)}

    start = int(rng.integers(5, 9))
    end = t_count - 1 - int(rng.integers(4, 7))
    yaws, trans = object_trajectory(spec, rng, start, end)
    rots = np.stack([rot_z(y) for y in yaws])

    # stance in the object frame: behind the grasp by the subject's reach
    gx = min(p[0] for p in grasp_local.values())
    gy = float(np.mean([p[1] for p in grasp_local.values()]))
    if spec.hand_mode == "left":
        gy -= 0.12
    elif spec.hand_mode == "right":
        gy += 0.12
    stance = np.array([gx - style.reach, gy, 0.0])
    root_xy = trans[:, :2] + np.einsum("tij,j->ti", rots, stance)[:, :2]

    active = list(grasp_local)
    world_grasp = {s: np.einsum("tij,j->ti", rots, grasp_local[s]) + trans for s in active}
    rest_start = rest_wrists(rig, root_xy[0], yaws[0])
    rest_end = rest_wrists(rig, root_xy[-1], yaws[-1])
    low = min(float(world_grasp[s][:, 2].min()) for s in active)

    roots = np.zeros((t_count, 3))
    rot6d = np.zeros((t_count, rig.skeleton.n_rot, 6))
    grasp = np.zeros((t_count, 2), dtype=bool)
    for t in range(t_count):
        if t < start:
            engage = float(smoothstep(t / start))
            targets = {s: (1 - engage) * rest_start[s] + engage * world_grasp[s][start] for s in active}
        elif t <= end:
            engage = 1.0
            targets = {s: world_grasp[s][t] for s in active}
        else:
            engage = 1.0 - float(smoothstep((t - end) / (t_count - 1 - end)))
            targets = {s: engage * world_grasp[s][end] + (1 - engage) * rest_end[s] for s in active}
        for s in active:
            grasp[t, _SIDES.index(s)] = start <= t <= end
        bend = engage * bend_for_height(rig, low)
        margin = 1.0 - 0.03 * engage
        root, local = solve_body_frame(rig, root_xy[t], yaws[t], targets, bend, margin, style.flare)
        roots[t] = root
        rot6d[t] = matrix_to_sixd(local)

    pose = PoseSequence(rig.skeleton, roots, rot6d)
    obj = ObjectSequence(mesh, rots, trans, spec.fps)
    contact = contact_labels(pose.wrists, obj)
    gv = tuple(int(gidx[active.index(s)]) if s in active else -1 for s in _SIDES)
    return DatasetRecord(name, spec, obj, sdf, pose, contact, grasp, gv)


# --- marker fitting ---------------------------------------------------------

def solve_object_pose_from_markers(rest_markers: np.ndarray, observed: np.ndarray,
                                   scale_tolerance: float = 0.01) -> list[RigidTransform]:
    """Per-frame similarity fit of rest-frame markers to observed markers (T, M, 3)."""
    rest = np.asarray(rest_markers, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if obs.ndim == 2:
        obs = obs[None]
    out = []
    for t, frame in enumerate(obs):
        tf = solve_procrustes(rest, frame, with_scale=True)
        if abs(tf.scale - 1.0) > scale_tolerance:
            warnings.warn(f"frame {t}: fitted scale {tf.scale:.4f} is not rigid", RuntimeWarning, stacklevel=2)
        out.append(tf)
    return out


# --- persistence --------------------------------------------------------------

@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 200
    n_test: int = 40
    frames: int = 30
    fps: float = 30.0
    seed: int = 0
    n_train_subjects: int = 15
    n_test_subjects: int = 2
    primitives: tuple = PRIMITIVES
    families: tuple = FAMILIES
    held_out_primitive: str = "cylinder"
    mesh_spacing: float = 0.03

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("corpus needs at least one train and one test sequence")
        if self.n_train_subjects < 1 or self.n_test_subjects < 1:
            raise ValueError("need at least one subject on each side of the split")
        if self.held_out_primitive not in self.primitives:
            raise ValueError(f"held-out primitive {self.held_out_primitive!r} is not generated")
        bad = [p for p in self.primitives if p not in PRIMITIVES] + [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ValueError(f"unknown primitives/families: {bad}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def record_plan(cfg: CorpusConfig, index: int) -> tuple[str, str, int, str]:
    """(primitive, family, subject, subject-split tag) for record ``index``."""
    fam = cfg.families[index % len(cfg.families)]
    prim = cfg.primitives[(index // len(cfg.families)) % len(cfg.primitives)]
    if index < cfg.n_train:
        return prim, fam, index % cfg.n_train_subjects, "train"
    return prim, fam, cfg.n_train_subjects + index % cfg.n_test_subjects, "test"


def generate_record(cfg: CorpusConfig, index: int, skeleton: Skeleton | None = None) -> DatasetRecord:
    rng = np.random.default_rng([cfg.seed, index])
    prim, fam, subject, split = record_plan(cfg, index)
    spec = random_spec(rng, prim, fam, subject, cfg.frames, cfg.fps, cfg.seed)
    rec = generate_scenario(spec, rng, skeleton, f"seq{index:04d}", cfg.mesh_spacing)
    rec.split = split
    return rec


def save_record(rec: DatasetRecord, directory: str | Path) -> dict[str, str]:
    """Write one sequence directory; returns sha256 per file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_obj(rec.object.mesh, d / "object.obj")
    save_trajectory(rec.object, d / "trajectory.csv")
    meta = {"name": rec.name, "split": rec.split, "spec": rec.spec.to_dict(), "sdf": rec.sdf.to_dict(),
            "grasp_vertices": list(rec.grasp_vertices)}
    save_motion(d / "motion.jsonl", MotionFile(rec.pose, rec.pose.wrists, rec.spec.fps, meta={"source": "synthetic"}))
    save_labels(d / "labels.csv", rec.contact, rec.grasp)
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return {f: _sha256(d / f) for f in ("object.obj", "trajectory.csv", "motion.jsonl", "labels.csv", "meta.json")}


def load_record(directory: str | Path) -> DatasetRecord:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    spec = ScenarioSpec.from_dict(meta["spec"])
    mesh = load_obj(d / "object.obj", name=spec.primitive)
    rots, trans = load_trajectory(d / "trajectory.csv")
    motion = load_motion(d / "motion.jsonl")
    contact, grasp = load_labels(d / "labels.csv")
    return DatasetRecord(meta["name"], spec, ObjectSequence(mesh, rots, trans, spec.fps), sdf_from_dict(meta["sdf"]),
                         motion.pose, contact, grasp, tuple(meta["grasp_vertices"]), meta["split"])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_corpus(cfg: CorpusConfig, out_dir: str | Path, skeleton: Skeleton | None = None) -> dict:
    """Generate every record, write it, and write ``manifest.json``. Returns the manifest."""
    out = Path(out_dir)
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory {out.parent} does not exist")
    out.mkdir(exist_ok=True)
    entries, subj_split = [], {"train": [], "test": []}
    obj_split = {"train": [], "test": []}
    for i in range(cfg.n_train + cfg.n_test):
        rec = generate_record(cfg, i, skeleton)
        hashes = save_record(rec, out / rec.name)
        entries.append({"name": rec.name, "subject": rec.subject, "primitive": rec.spec.primitive,
                        "family": rec.spec.family, "hand_mode": rec.spec.hand_mode, "frames": len(rec),
                        "sha256": hashes})
        subj_split[rec.split].append(rec.name)
        obj_split["test" if rec.spec.primitive == cfg.held_out_primitive else "train"].append(rec.name)
    manifest = {"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION, "config": cfg.to_dict(),
                "skeleton": (skeleton or desk_skeleton()).to_dict(), "sequences": entries,
                "splits": {"subject": subj_split, "object": dict(obj_split, held_out=cfg.held_out_primitive)}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def manifest_hash(corpus_dir: str | Path) -> str:
    return _sha256(Path(corpus_dir) / "manifest.json")


@dataclass
class Corpus:
    root: Path
    manifest: dict
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def open(cls, directory: str | Path) -> "Corpus":
        root = Path(directory)
        path = root / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        manifest = json.loads(path.read_text())
        if manifest.get("schema") != MANIFEST_SCHEMA or manifest.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest schema/version")
        return cls(root, manifest)

    @property
    def skeleton(self) -> Skeleton:
        return Skeleton.from_dict(self.manifest["skeleton"])

    def names(self, scheme: str = "subject", split: str = "train") -> list[str]:
        try:
            return list(self.manifest["splits"][scheme][split])
        except KeyError as exc:
            raise KeyError(f"no split {scheme}/{split}") from exc

    def record(self, name: str) -> DatasetRecord:
        if name not in self._cache:
            self._cache[name] = load_record(self.root / name)
        return self._cache[name]

    def records(self, scheme: str = "subject", split: str = "train") -> list[DatasetRecord]:
        return [self.record(n) for n in self.names(scheme, split)]
