"""Evaluation harness: pipeline variants on a corpus split, best-of-s selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import MetricReport, best_of, evaluate_sequence, hand_jpe, joint_errors
from .pipeline import RECTIFY_THRESHOLD, Stage, check_compatible, predict_hands, run_pipeline_samples, stage_generators
from .synthdata import DatasetRecord

VARIANTS = ("rectified", "no_constraints", "gt_hands")


@dataclass
class SplitResult:
    aggregate: dict[str, MetricReport]
    per_sequence: dict[str, dict[str, MetricReport]]
    hand_jpe_best: float                   # best-of-s stage-1 wrist error, cm
    hand_jpe_baseline: float               # constant training-mean trajectory, cm
    hand_jpe_offset_baseline: float        # object centroid plus mean wrist offset, cm
    selected: dict[str, dict[str, int]] = field(default_factory=dict)


def mean_hand_trajectory(records: list[DatasetRecord]) -> np.ndarray:
    return np.mean(np.stack([r.hands for r in records]), axis=0)


def mean_hand_offset(records: list[DatasetRecord]) -> np.ndarray:
    """Mean (T, 6) wrist offset from the per-frame object vertex centroid."""
    offs = []
    for r in records:
        c = r.object.all_vertices().mean(axis=1)
        offs.append(r.hands - np.tile(c, 2))
    return np.mean(np.stack(offs), axis=0)


def _mpjpe(result, gt) -> float:
    return joint_errors(result.pose, gt)[1]


def evaluate_split(test: list[DatasetRecord], train: list[DatasetRecord], hands_stage: Stage, body_stage: Stage,
                   best_of_s: int = 20, seed: int = 0, th_rectify: float = RECTIFY_THRESHOLD,
                   contact_threshold: float = 0.05, collision_threshold: float = 0.04,
                   variants: tuple[str, ...] = VARIANTS) -> SplitResult:
    """Run every variant on every test record with shared per-record seeds.

    Stage-1 samples are drawn once per record and fed to both the rectified
    and the unconstrained variant, so their difference is rectification
    alone. Each variant then keeps the sample with the lowest MPJPE.
    """
    check_compatible(hands_stage, body_stage)
    mean_traj = mean_hand_trajectory(train)
    mean_off = mean_hand_offset(train)
    per_seq = {v: {} for v in variants}
    selected = {v: {} for v in variants}
    best_hand, base_hand, off_hand = [], [], []
    for i, rec in enumerate(test):
        rseed = seed * 100_003 + i
        g1, _ = stage_generators(rseed)
        raw = predict_hands(hands_stage, rec.object, g1, best_of_s)
        best_hand.append(min(hand_jpe(h, rec.hands) for h in raw))
        base_hand.append(hand_jpe(mean_traj, rec.hands))
        cen = rec.object.all_vertices().mean(axis=1)
        off_hand.append(hand_jpe(np.tile(cen, 2) + mean_off, rec.hands))
        for v in variants:
            if v == "gt_hands":
                feed, rect = np.repeat(rec.hands[None], best_of_s, axis=0), False
            else:
                feed, rect = raw, v == "rectified"
            results = run_pipeline_samples(rec.object, hands_stage, body_stage, rseed, best_of_s, rect,
                                           th_rectify, raw_hands=feed)
            k, chosen = best_of(results, lambda r: _mpjpe(r, rec.pose))
            selected[v][rec.name] = k
            per_seq[v][rec.name] = evaluate_sequence(chosen.pose, rec.pose, rec.object, rec.sdf,
                                                     contact_threshold, collision_threshold)
    aggregate = {v: MetricReport.mean(list(per_seq[v].values())) for v in variants}
    return SplitResult(aggregate, per_seq, float(np.mean(best_hand)), float(np.mean(base_hand)),
                       float(np.mean(off_hand)), selected)
