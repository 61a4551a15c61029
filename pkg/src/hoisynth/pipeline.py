"""Object motion -> wrist trajectories -> contact rectification -> full body.

Stage 1 denoises wrist trajectories (T, 6) conditioned on per-frame object
features (BPS deltas plus centroid, projected by a small MLP). Stage 2
denoises flattened poses (T, 3 + 6 n_rot) conditioned on wrist positions.

Both stages work in a translated frame so the networks never see absolute
floor positions: stage 1 subtracts the object's frame-0 centroid (x, y) and
stage 2 subtracts the frame-0 midpoint of the two wrists (x, y). Heights are
left alone.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as tnn

from .diffusion import NoiseSchedule, Normalizer, sample
from .geometry import BpsBasis, ObjectSequence, bps_feature_dim, bps_sequence, nearest_vertices
from .kinematics import PoseSequence, Skeleton, flatten_pose, unflatten_pose
from .nn import (CheckpointError, DenoiserConfig, TransformerDenoiser, config_dict, init_parameters,
                 load_checkpoint, load_module_arrays, module_arrays, save_checkpoint)

RECTIFY_THRESHOLD = 0.03
_SIDES = ("left", "right")


class IncompatibleCheckpointsError(CheckpointError):
    pass


# --- object features ----------------------------------------------------------

class ObjectProjector(tnn.Module):
    """Per-frame MLP from raw object features to the conditioning width."""

    def __init__(self, d_in: int, d_out: int = 256, d_hidden: int | None = None):
        super().__init__()
        d_hidden = d_hidden or d_out
        self.d_in, self.d_out = d_in, d_out
        self.fc1 = tnn.Linear(d_in, d_hidden)
        self.fc2 = tnn.Linear(d_hidden, d_out)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(raw)))


def object_shift(seq: ObjectSequence) -> np.ndarray:
    """Horizontal offset removed before stage 1: frame-0 vertex centroid with z zeroed."""
    c = seq.vertices(0).mean(axis=0)
    return np.array([c[0], c[1], 0.0])


def hand_shift(hands: np.ndarray) -> np.ndarray:
    """Horizontal offset removed before stage 2: frame-0 midpoint of the wrists."""
    h = np.asarray(hands, dtype=float).reshape(-1, 2, 3)[0]
    m = h.mean(axis=0)
    return np.array([m[0], m[1], 0.0])


def raw_object_features(seq: ObjectSequence, basis: BpsBasis) -> np.ndarray:
    """(T, 3 + 3 n_bps) rows of [centroid, deltas] in world coordinates."""
    return bps_sequence(basis, seq)


def encode_object(seq: ObjectSequence, basis: BpsBasis, projector: ObjectProjector | None = None,
                  normalizer: Normalizer | None = None):
    """Raw features, plus the projected (T, d_proj) features when a projector is given."""
    raw = raw_object_features(seq, basis)
    if projector is None:
        return raw
    shifted = raw.copy()
    shifted[:, :3] -= object_shift(seq)
    x = normalizer.encode(shifted) if normalizer is not None else shifted
    with torch.no_grad():
        proj = projector(torch.as_tensor(x, dtype=torch.float32)).numpy()
    return raw, proj


# --- stage models ---------------------------------------------------------------

class StageNet(tnn.Module):
    """Denoiser with an optional conditioning projector in front."""

    def __init__(self, denoiser_cfg: DenoiserConfig, projector: ObjectProjector | None = None):
        super().__init__()
        self.projector = projector
        self.denoiser = TransformerDenoiser(denoiser_cfg)

    def forward(self, x: torch.Tensor, n, cond: torch.Tensor) -> torch.Tensor:
        if self.projector is not None:
            cond = self.projector(cond)
        return self.denoiser(x, n, cond)


@dataclass
class Stage:
    """A trained (or trainable) denoising stage with its data statistics."""

    kind: str                       # "hands" | "body"
    net: StageNet
    schedule: NoiseSchedule
    x_norm: Normalizer
    c_norm: Normalizer
    skeleton: Skeleton
    basis: BpsBasis
    hand_stats: Normalizer          # shared between stages for the compatibility key
    extra: dict = field(default_factory=dict)

    @property
    def compat_key(self) -> str:
        return compat_key(self.basis, self.skeleton, self.hand_stats)

    def sample(self, cond_raw: np.ndarray, n_samples: int, generator: torch.Generator) -> np.ndarray:
        """(n_samples, T, d_x) decoded samples for one (T, d_c) conditioning sequence."""
        c = torch.as_tensor(self.c_norm.encode(cond_raw), dtype=torch.float32)
        c = c.unsqueeze(0).expand(n_samples, -1, -1)
        d_x = self.net.denoiser.cfg.d_x
        self.net.eval()
        z = sample(self.net, self.schedule, c, (n_samples, c.shape[1], d_x), generator)
        return self.x_norm.decode(z.double().numpy())


def compat_key(basis: BpsBasis, skeleton: Skeleton, hand_stats: Normalizer) -> str:
    h = hashlib.sha256()
    h.update(basis.digest().encode())
    h.update(skeleton.digest().encode())
    h.update(np.ascontiguousarray(hand_stats.mean, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(hand_stats.std, dtype="<f8").tobytes())
    return h.hexdigest()


def new_stage(kind: str, skeleton: Skeleton, basis: BpsBasis, schedule: NoiseSchedule,
              x_norm: Normalizer, c_norm: Normalizer, hand_stats: Normalizer, d_model: int = 512,
              d_kqv: int = 256, n_heads: int = 4, n_layers: int = 4, d_proj: int = 256,
              seed: int = 0) -> Stage:
    if kind == "hands":
        projector = ObjectProjector(bps_feature_dim(len(basis)), d_proj)
        cfg = DenoiserConfig(d_x=6, d_cond=d_proj, d_model=d_model, d_kqv=d_kqv, n_heads=n_heads, n_layers=n_layers)
    elif kind == "body":
        projector = None
        cfg = DenoiserConfig(d_x=skeleton.pose_dim, d_cond=6, d_model=d_model, d_kqv=d_kqv, n_heads=n_heads,
                             n_layers=n_layers)
    else:
        raise ValueError(f"unknown stage kind {kind!r}")
    net = StageNet(cfg, projector)
    init_parameters(net, torch.Generator().manual_seed(seed))
    return Stage(kind, net, schedule, x_norm, c_norm, skeleton, basis, hand_stats,
                 {"d_proj": d_proj if projector is not None else None})


def stage_arrays(stage: Stage) -> dict[str, np.ndarray]:
    arrays = module_arrays(stage.net)
    arrays.update(stage.x_norm.arrays("norm.x"))
    arrays.update(stage.c_norm.arrays("norm.c"))
    arrays.update(stage.hand_stats.arrays("norm.hands"))
    arrays["bps.points"] = stage.basis.points
    return arrays


def stage_meta(stage: Stage) -> dict:
    return {"kind": stage.kind, "denoiser": config_dict(stage.net.denoiser.cfg),
            "d_proj": stage.extra.get("d_proj"), "schedule": stage.schedule.to_dict(),
            "skeleton": stage.skeleton.to_dict(), "bps_radius": stage.basis.radius, "bps_seed": stage.basis.seed,
            "bps_digest": stage.basis.digest(), "compat": stage.compat_key}


def save_stage(stage: Stage, path: str | Path, extra_meta: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    meta = stage_meta(stage)
    meta.update(extra_meta or {})
    arrays = stage_arrays(stage)
    arrays.update(extra_arrays or {})
    save_checkpoint(path, meta, arrays)


def load_stage(path: str | Path) -> tuple[Stage, dict, dict[str, np.ndarray]]:
    """Returns the stage plus the raw meta and arrays (for optimizer/RNG state)."""
    meta, arrays = load_checkpoint(path)
    try:
        cfg = DenoiserConfig(**meta["denoiser"])
        skeleton = Skeleton.from_dict(meta["skeleton"])
        basis = BpsBasis(arrays["bps.points"], float(meta["bps_radius"]), int(meta["bps_seed"]))
        projector = ObjectProjector(bps_feature_dim(len(basis)), int(meta["d_proj"])) if meta["kind"] == "hands" else None
        net = StageNet(cfg, projector)
        load_module_arrays(net, arrays)
        stage = Stage(meta["kind"], net, NoiseSchedule.from_dict(meta["schedule"]),
                      Normalizer.from_arrays(arrays, "norm.x"), Normalizer.from_arrays(arrays, "norm.c"),
                      skeleton, basis, Normalizer.from_arrays(arrays, "norm.hands"), {"d_proj": meta["d_proj"]})
    except KeyError as exc:
        raise CheckpointError(f"{path}: checkpoint lacks {exc}") from exc
    if stage.basis.digest() != meta["bps_digest"] or stage.compat_key != meta["compat"]:
        raise CheckpointError(f"{path}: stored hashes do not match contents")
    return stage, meta, arrays


def check_compatible(hands_stage: Stage, body_stage: Stage) -> None:
    if hands_stage.kind != "hands" or body_stage.kind != "body":
        raise IncompatibleCheckpointsError("expected a hands checkpoint and a body checkpoint")
    if hands_stage.compat_key != body_stage.compat_key:
        raise IncompatibleCheckpointsError("checkpoints were trained with different BPS basis, skeleton or data stats")


# --- stage inputs ---------------------------------------------------------------

def hands_condition(seq: ObjectSequence, basis: BpsBasis) -> tuple[np.ndarray, np.ndarray]:
    """Shifted raw object features and the shift applied."""
    shift = object_shift(seq)
    raw = raw_object_features(seq, basis)
    raw[:, :3] -= shift
    return raw, shift


def body_condition(hands: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = hand_shift(hands)
    return np.asarray(hands, dtype=float) - np.tile(shift, 2), shift


def body_target(pose: PoseSequence) -> tuple[np.ndarray, np.ndarray]:
    """Flattened pose with the root shifted by the wrist-midpoint offset."""
    flat = flatten_pose(pose).copy()
    shift = hand_shift(pose.wrists)
    flat[:, :3] -= shift
    return flat, shift


def predict_hands(stage: Stage, seq: ObjectSequence, generator: torch.Generator, n_samples: int = 1) -> np.ndarray:
    """(n_samples, T, 6) world-space wrist trajectories."""
    cond, shift = hands_condition(seq, stage.basis)
    out = stage.sample(cond, n_samples, generator)
    return out + np.tile(shift, 2)


def predict_fullbody(stage: Stage, hands: np.ndarray, generator: torch.Generator,
                     n_samples: int = 1) -> list[PoseSequence]:
    """One pose sample per row of ``hands`` (B, T, 6) or n_samples for a single (T, 6)."""
    hands = np.asarray(hands, dtype=float)
    if hands.ndim == 2:
        cond, shift = body_condition(hands)
        flat = stage.sample(cond, n_samples, generator)
        shifts = [shift] * n_samples
    else:
        pairs = [body_condition(h) for h in hands]
        c = np.stack([p[0] for p in pairs])
        shifts = [p[1] for p in pairs]
        ct = torch.as_tensor(stage.c_norm.encode(c), dtype=torch.float32)
        stage.net.eval()
        z = sample(stage.net, stage.schedule, ct, (len(c), c.shape[1], stage.net.denoiser.cfg.d_x), generator)
        flat = stage.x_norm.decode(z.double().numpy())
    poses = []
    for f, s in zip(flat, shifts):
        f = f.copy()
        f[:, :3] += s
        poses.append(unflatten_pose(stage.skeleton, f))
    return poses


# --- contact rectification --------------------------------------------------------

@dataclass(frozen=True)
class ContactAnchor:
    hand: str
    frame: int
    vertex: int
    offset: np.ndarray       # H_k - V_k^i
    rotation: np.ndarray     # R_k

    def to_dict(self) -> dict:
        return {"hand": self.hand, "frame": self.frame, "vertex": self.vertex,
                "offset": self.offset.tolist(), "rotation": self.rotation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ContactAnchor":
        return cls(d["hand"], int(d["frame"]), int(d["vertex"]), np.array(d["offset"], dtype=float),
                   np.array(d["rotation"], dtype=float))


def hand_distances(hands: np.ndarray, seq: ObjectSequence) -> tuple[np.ndarray, np.ndarray]:
    """Nearest vertex index and distance per frame and hand, each (T, 2)."""
    hands = np.asarray(hands, dtype=float).reshape(-1, 2, 3)
    if len(hands) != len(seq):
        raise ValueError(f"hand trajectory has {len(hands)} frames, object has {len(seq)}")
    idx = np.zeros((len(seq), 2), dtype=np.int64)
    dist = np.zeros((len(seq), 2))
    for t in range(len(seq)):
        idx[t], dist[t] = nearest_vertices(seq.vertices(t), hands[t])
    return idx, dist


def rectify_contacts(hands: np.ndarray, seq: ObjectSequence, th: float = RECTIFY_THRESHOLD
                     ) -> tuple[np.ndarray, list[ContactAnchor]]:
    """Lock each hand to its first-contact offset on the object for all later frames."""
    hands = np.asarray(hands, dtype=float)
    out = hands.reshape(-1, 2, 3).copy()
    idx, dist = hand_distances(hands, seq)
    anchors = []
    for h, side in enumerate(_SIDES):
        hits = np.flatnonzero(dist[:, h] < th)
        if len(hits) == 0:
            continue
        k = int(hits[0])
        i = int(idx[k, h])
        p = out[k, h] - seq.vertices(k)[i]
        r_k = seq.rotations[k]
        anchors.append(ContactAnchor(side, k, i, p.copy(), r_k.copy()))
        for t in range(k + 1, len(seq)):
            out[t, h] = seq.vertices(t)[i] + seq.rotations[t] @ (r_k.T @ p)
    return out.reshape(hands.shape), anchors


def infer_hand_mode(hands: np.ndarray, seq: ObjectSequence, th: float = RECTIFY_THRESHOLD) -> str:
    """"two_handed", "one_handed_left", "one_handed_right" or "none"."""
    _, dist = hand_distances(hands, seq)
    touching = [bool(np.any(dist[:, h] < th)) for h in range(2)]
    if all(touching):
        return "two_handed"
    if touching[0]:
        return "one_handed_left"
    if touching[1]:
        return "one_handed_right"
    return "none"


# --- full pipeline ------------------------------------------------------------------

@dataclass
class PipelineResult:
    pose: PoseSequence
    hands: np.ndarray             # hands fed to stage 2 (rectified unless disabled)
    raw_hands: np.ndarray         # stage-1 output
    anchors: list[ContactAnchor]
    hand_mode: str


def run_pipeline(seq: ObjectSequence, hands_stage: Stage, body_stage: Stage, seed: int = 0,
                 rectify: bool = True, th: float = RECTIFY_THRESHOLD) -> PipelineResult:
    return run_pipeline_samples(seq, hands_stage, body_stage, seed, 1, rectify, th)[0]


def stage_generators(seed: int) -> tuple[torch.Generator, torch.Generator]:
    """Independent streams for stage 1 and stage 2 derived from one seed."""
    return torch.Generator().manual_seed(2 * int(seed)), torch.Generator().manual_seed(2 * int(seed) + 1)


def run_pipeline_samples(seq: ObjectSequence, hands_stage: Stage, body_stage: Stage, seed: int,
                         n_samples: int, rectify: bool = True, th: float = RECTIFY_THRESHOLD,
                         raw_hands: np.ndarray | None = None) -> list[PipelineResult]:
    """``n_samples`` independent pipeline outputs.

    Stage 2 draws from its own stream, so runs that share a seed share their
    body noise. Passing ``raw_hands`` (n_samples, T, 6) skips stage 1, which
    is how ground-truth hands or cached stage-1 samples are fed in.
    """
    check_compatible(hands_stage, body_stage)
    g1, g2 = stage_generators(seed)
    if raw_hands is None:
        raw_hands = predict_hands(hands_stage, seq, g1, n_samples)
    raw_hands = np.asarray(raw_hands, dtype=float)
    fed, anchors = [], []
    for h in raw_hands:
        if rectify:
            r, a = rectify_contacts(h, seq, th)
        else:
            r, a = h.copy(), []
        fed.append(r)
        anchors.append(a)
    poses = predict_fullbody(body_stage, np.stack(fed), g2)
    return [PipelineResult(p, f, r, a, infer_hand_mode(r, seq, th))
            for p, f, r, a in zip(poses, fed, raw_hands, anchors)]


def pipeline_fingerprint(result: PipelineResult) -> str:
    h = hashlib.sha256()
    for arr in (result.pose.root, result.pose.rot6d, result.hands):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    h.update(json.dumps([a.to_dict() for a in result.anchors], sort_keys=True).encode())
    return h.hexdigest()
