"""Line-delimited JSON motion files and CSV contact labels.

Motion file: the first line is a header object, every further line is one
frame record. Floats are written with ``repr`` precision so a save/load
round trip is exact.

    {"schema": "hoisynth.motion", "version": 1, "fps": 30.0, "frames": T,
     "skeleton": {...}, "anchors": [...], "meta": {...}}
    {"frame": 0, "root": [x, y, z], "rot6d": [[6 floats] * n_rot], "wrists": [lx, ly, lz, rx, ry, rz]}
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import PoseSequence, Skeleton

MOTION_SCHEMA = "hoisynth.motion"
MOTION_VERSION = 1
LABELS_VERSION = 1
_LABEL_COLUMNS = ["version", "frame", "left_contact", "right_contact", "left_grasp", "right_grasp"]


class MotionFormatError(ValueError):
    pass


@dataclass
class MotionFile:
    pose: PoseSequence
    hands: np.ndarray                      # (T, 6)
    fps: float = 30.0
    anchors: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def save_motion(path: str | Path, motion: MotionFile) -> None:
    pose = motion.pose
    hands = np.asarray(motion.hands, dtype=float)
    t = len(pose)
    if hands.shape != (t, 6):
        raise MotionFormatError(f"hands must be ({t}, 6), got {hands.shape}")
    header = {"schema": MOTION_SCHEMA, "version": MOTION_VERSION, "fps": float(motion.fps), "frames": t,
              "skeleton": pose.skeleton.to_dict(), "anchors": motion.anchors, "meta": motion.meta}
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(t):
        rec = {"frame": i, "root": pose.root[i].tolist(), "rot6d": pose.rot6d[i].tolist(),
               "wrists": hands[i].tolist()}
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def load_motion(path: str | Path) -> MotionFile:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise MotionFormatError(f"{path}: empty motion file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise MotionFormatError(f"{path}: {exc}") from exc
    if header.get("schema") != MOTION_SCHEMA:
        raise MotionFormatError(f"{path}: not a motion file")
    if header.get("version") != MOTION_VERSION:
        raise MotionFormatError(f"{path}: unsupported motion version {header.get('version')}")
    if len(records) != header["frames"] or [r["frame"] for r in records] != list(range(len(records))):
        raise MotionFormatError(f"{path}: frame records missing or out of order")
    skel = Skeleton.from_dict(header["skeleton"])
    root = np.array([r["root"] for r in records], dtype=float).reshape(-1, 3)
    rot6d = np.array([r["rot6d"] for r in records], dtype=float).reshape(-1, skel.n_rot, 6)
    hands = np.array([r["wrists"] for r in records], dtype=float).reshape(-1, 6)
    return MotionFile(PoseSequence(skel, root, rot6d), hands, float(header["fps"]),
                      list(header.get("anchors", [])), dict(header.get("meta", {})))


def save_labels(path: str | Path, contact: np.ndarray, grasp: np.ndarray) -> None:
    contact = np.asarray(contact, dtype=bool)
    grasp = np.asarray(grasp, dtype=bool)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_LABEL_COLUMNS)
        for t in range(len(contact)):
            w.writerow([LABELS_VERSION, t, *contact[t].astype(int), *grasp[t].astype(int)])


def load_labels(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _LABEL_COLUMNS:
        raise MotionFormatError(f"{path}: bad labels header")
    body = np.array([[int(v) for v in r] for r in rows[1:]], dtype=int).reshape(-1, len(_LABEL_COLUMNS))
    if np.any(body[:, 0] != LABELS_VERSION):
        raise MotionFormatError(f"{path}: unsupported labels version")
    return body[:, 2:4].astype(bool), body[:, 4:6].astype(bool)
