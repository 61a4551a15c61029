"""Motion quality metrics and corpus-level reports.

Distances are computed in meters and reported in centimeters, except the
root orientation error which is dimensionless.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import ObjectSequence, SdfField, nearest_vertices
from .kinematics import PoseSequence, ProxySurface, sample_proxy_surface

CONTACT_THRESHOLD = 0.05
COLLISION_THRESHOLD = 0.04
FOOT_HEIGHT_THRESHOLD = 0.05

COLUMNS = ("Hand JPE", "MPJPE", "MPVPE", "T_root", "O_root", "Collision %", "FS", "C_prec", "C_rec", "F1 Score")


class MetricConfigError(ValueError):
    pass


def _check_pair(pred: PoseSequence, gt: PoseSequence) -> None:
    if pred.skeleton.digest() != gt.skeleton.digest():
        raise MetricConfigError("prediction and ground truth use different skeletons")
    if len(pred) != len(gt):
        raise MetricConfigError(f"length mismatch: {len(pred)} vs {len(gt)} frames")


def joint_errors(pred: PoseSequence, gt: PoseSequence, proxy: ProxySurface | None = None
                 ) -> tuple[float, float, float]:
    """(Hand JPE, MPJPE, MPVPE) in cm."""
    _check_pair(pred, gt)
    proxy = proxy or ProxySurface()
    wr = list(pred.skeleton.wrists)
    dj = np.linalg.norm(pred.joints - gt.joints, axis=-1)
    dv = np.linalg.norm(sample_proxy_surface(pred.skeleton, pred, proxy)
                        - sample_proxy_surface(gt.skeleton, gt, proxy), axis=-1)
    return 100.0 * float(dj[:, wr].mean()), 100.0 * float(dj.mean()), 100.0 * float(dv.mean())


def hand_jpe(pred_hands: np.ndarray, gt_hands: np.ndarray) -> float:
    """Mean wrist distance in cm between two (T, 6) trajectories."""
    a = np.asarray(pred_hands, dtype=float).reshape(-1, 2, 3)
    b = np.asarray(gt_hands, dtype=float).reshape(-1, 2, 3)
    if a.shape != b.shape:
        raise MetricConfigError(f"hand shapes differ: {a.shape} vs {b.shape}")
    return 100.0 * float(np.linalg.norm(a - b, axis=-1).mean())


def root_errors(pred: PoseSequence, gt: PoseSequence) -> tuple[float, float]:
    """(T_root in cm, O_root = mean Frobenius norm of R_pred R_gt^T - I)."""
    if len(pred) != len(gt):
        raise MetricConfigError(f"length mismatch: {len(pred)} vs {len(gt)} frames")
    t = np.linalg.norm(pred.root - gt.root, axis=-1).mean()
    rel = pred.root_rotation @ np.swapaxes(gt.root_rotation, -1, -2)
    o = np.linalg.norm(rel - np.eye(3), axis=(-2, -1)).mean()
    return 100.0 * float(t), float(o)


def collision_percentage_points(points: np.ndarray, sdf: SdfField, threshold: float = COLLISION_THRESHOLD) -> float:
    """Percent of frames (T, M, 3) with some point deeper than ``threshold`` inside."""
    d = sdf(np.asarray(points, dtype=float))
    hit = np.any((d < 0) & (-d > threshold), axis=-1)
    return 100.0 * float(hit.mean())


def collision_percentage(pred: PoseSequence, sdf: SdfField, seq: ObjectSequence | None = None,
                         threshold: float = COLLISION_THRESHOLD, proxy: ProxySurface | None = None) -> float:
    """Body proxy points are mapped into the object's local frame when ``seq`` is given."""
    pts = sample_proxy_surface(pred.skeleton, pred, proxy or ProxySurface())
    if seq is not None:
        if len(seq) != len(pred):
            raise MetricConfigError("pose and object lengths differ")
        pts = np.einsum("tji,tmj->tmi", seq.rotations, pts - seq.translations[:, None, :])
    return collision_percentage_points(pts, sdf, threshold)


def contact_labels(hands: np.ndarray, seq: ObjectSequence, threshold: float = CONTACT_THRESHOLD) -> np.ndarray:
    hands = np.asarray(hands, dtype=float).reshape(-1, 2, 3)
    if len(hands) != len(seq):
        raise MetricConfigError(f"{len(hands)} hand frames vs {len(seq)} object frames")
    out = np.zeros((len(seq), 2), dtype=bool)
    for t in range(len(seq)):
        _, d = nearest_vertices(seq.vertices(t), hands[t])
        out[t] = d < threshold
    return out


def contact_scores(pred_labels: np.ndarray, gt_labels: np.ndarray) -> tuple[float, float, float]:
    """Precision, recall, F1 over all label pairs.

    An empty denominator gives 1 for precision or recall (nothing claimed /
    nothing to find), which keeps the swap symmetry exact.
    """
    p = np.asarray(pred_labels, dtype=bool).ravel()
    g = np.asarray(gt_labels, dtype=bool).ravel()
    if p.shape != g.shape:
        raise MetricConfigError("label arrays differ in size")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    prec = tp / (tp + fp) if tp + fp else 1.0
    rec = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return prec, rec, f1


def contact_metrics(pred_hands: np.ndarray, gt_hands: np.ndarray, seq: ObjectSequence,
                    threshold: float = CONTACT_THRESHOLD) -> tuple[float, float, float]:
    return contact_scores(contact_labels(pred_hands, seq, threshold), contact_labels(gt_hands, seq, threshold))


def foot_sliding(pred: PoseSequence, height_threshold: float = FOOT_HEIGHT_THRESHOLD) -> float:
    """Height-weighted horizontal foot displacement per frame, in cm; NaN without feet."""
    feet = list(pred.skeleton.feet)
    if not feet or len(pred) < 2:
        return float("nan")
    p = pred.joints[:, feet]                        # (T, F, 3)
    step = np.linalg.norm(p[1:, :, :2] - p[:-1, :, :2], axis=-1)
    h = p[1:, :, 2]
    weight = np.where(h < height_threshold, 2.0 - 2.0 ** (np.minimum(h, height_threshold) / height_threshold), 0.0)
    return 100.0 * float(np.sum(step * weight, axis=1).mean())


@dataclass
class MetricReport:
    hand_jpe: float
    mpjpe: float
    mpvpe: float
    t_root: float
    o_root: float
    collision_pct: float
    fs: float
    c_prec: float
    c_rec: float
    f1: float

    def row(self) -> dict:
        return dict(zip(COLUMNS, (getattr(self, f.name) for f in fields(self))))

    @classmethod
    def mean(cls, reports: list["MetricReport"]) -> "MetricReport":
        """Uniform average over sequences, summed in list order."""
        if not reports:
            raise ValueError("no reports to aggregate")
        vals = {}
        for f in fields(cls):
            xs = [getattr(r, f.name) for r in reports]
            vals[f.name] = float(math.fsum(xs) / len(xs)) if not any(math.isnan(x) for x in xs) else float("nan")
        return cls(**vals)


def evaluate_sequence(pred: PoseSequence, gt: PoseSequence, seq: ObjectSequence,
                      sdf: SdfField, contact_threshold: float = CONTACT_THRESHOLD,
                      collision_threshold: float = COLLISION_THRESHOLD) -> MetricReport:
    """Every column for one sequence; contact is judged on the wrists of the generated body."""
    hj, mpjpe, mpvpe = joint_errors(pred, gt)
    tr, orr = root_errors(pred, gt)
    col = collision_percentage(pred, sdf, seq, collision_threshold)
    prec, rec, f1 = contact_metrics(pred.wrists, gt.wrists, seq, contact_threshold)
    return MetricReport(hj, mpjpe, mpvpe, tr, orr, col, foot_sliding(pred), prec, rec, f1)


def best_of(candidates: list, key) -> tuple[int, object]:
    """Index and item minimising ``key``; ties go to the earliest candidate."""
    if not candidates:
        raise ValueError("no candidates")
    scores = [key(c) for c in candidates]
    i = int(np.argmin(scores))
    return i, candidates[i]


def format_table(reports: dict[str, MetricReport]) -> str:
    """Plain-text table, one row per variant."""
    name_w = max(len("Variant"), *(len(k) for k in reports))
    head = "Variant".ljust(name_w) + "".join(f" | {c:>11}" for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for name, rep in reports.items():
        cells = "".join(f" | {v:11.4f}" for v in rep.row().values())
        lines.append(name.ljust(name_w) + cells)
    return "\n".join(lines)


def report_json(per_sequence: dict[str, dict[str, MetricReport]], aggregate: dict[str, MetricReport]) -> str:
    out = {"schema": "hoisynth.report", "version": 1, "columns": list(COLUMNS),
           "aggregate": {k: v.row() for k, v in aggregate.items()},
           "sequences": {v: {name: r.row() for name, r in rows.items()} for v, rows in per_sequence.items()}}
    return json.dumps(out, indent=1, sort_keys=True, allow_nan=True)

