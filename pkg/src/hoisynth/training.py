"""Dataset tensors and the training loop for both stages."""
from __future__ import annotations

import json
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, TrainConfig
from .diffusion import Normalizer, train_step
from .geometry import BpsBasis
from .kinematics import Skeleton
from .nn import Adam
from .pipeline import (Stage, body_condition, body_target, hands_condition, load_stage, new_stage, save_stage)
from .synthdata import DatasetRecord


def hands_dataset(records: list[DatasetRecord], basis: BpsBasis) -> tuple[np.ndarray, np.ndarray]:
    """Stage-1 targets (N, T, 6) and conditions (N, T, 3 + 3 n_bps), both shifted."""
    xs, cs = [], []
    for r in records:
        cond, shift = hands_condition(r.object, basis)
        xs.append(r.hands - np.tile(shift, 2))
        cs.append(cond)
    return np.stack(xs), np.stack(cs)


def body_dataset(records: list[DatasetRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stage-2 targets (N, T, D) and conditions (N, T, 6)."""
    xs, cs = [], []
    for r in records:
        x, _ = body_target(r.pose)
        c, _ = body_condition(r.hands)
        xs.append(x)
        cs.append(c)
    return np.stack(xs), np.stack(cs)


def hand_statistics(records: list[DatasetRecord]) -> Normalizer:
    """Statistics of the shifted training wrists; both stages hash these into their compatibility key."""
    _, c = body_dataset(records)
    return Normalizer.fit(c)


def make_stage(kind: str, cfg: RunConfig, records: list[DatasetRecord], skeleton: Skeleton,
               basis: BpsBasis | None = None) -> tuple[Stage, np.ndarray, np.ndarray]:
    """Fresh stage with normalizers fitted on ``records``; returns (stage, x, c) unnormalized."""
    basis = basis or BpsBasis.sample(cfg.bps.n_points, cfg.bps.radius, cfg.bps.seed)
    if kind == "hands":
        x, c = hands_dataset(records, basis)
        seed = cfg.train_hands.seed
    else:
        x, c = body_dataset(records)
        seed = cfg.train_body.seed
    m = cfg.model
    stage = new_stage(kind, skeleton, basis, cfg.schedule.build(), Normalizer.fit(x), Normalizer.fit(c),
                      hand_statistics(records), m.d_model, m.d_kqv, m.n_heads, m.n_layers, m.d_proj, seed)
    return stage, x, c


class TrainingRun:
    """Owns the optimizer and the sampling stream so a run can be checkpointed and resumed."""

    def __init__(self, stage: Stage, x: np.ndarray, c: np.ndarray, tcfg: TrainConfig):
        self.stage = stage
        self.tcfg = tcfg
        self.x = torch.as_tensor(stage.x_norm.encode(x), dtype=torch.float32)
        self.c = torch.as_tensor(stage.c_norm.encode(c), dtype=torch.float32)
        self.opt = Adam(stage.net.named_parameters(), lr=tcfg.lr)
        self.gen = torch.Generator().manual_seed(tcfg.seed + 1)
        self.step = 0

    def train(self, until: int, log_path: str | Path | None = None, on_log=None) -> list[tuple[int, float]]:
        """Advance to ``until`` steps, logging every ``log_every`` steps."""
        net = self.stage.net
        net.train()
        log = []
        fh = open(log_path, "a") if log_path else None
        try:
            while self.step < until:
                idx = torch.randint(len(self.x), (self.tcfg.batch,), generator=self.gen)
                loss = train_step(net, self.stage.schedule, self.x[idx], self.c[idx], self.gen, self.opt)
                self.step += 1
                if self.step % self.tcfg.log_every == 0 or self.step == 1:
                    log.append((self.step, loss))
                    if fh:
                        fh.write(json.dumps({"step": self.step, "loss": loss}) + "\n")
                        fh.flush()
                    if on_log:
                        on_log(self.step, loss)
        finally:
            if fh:
                fh.close()
        net.eval()
        return log

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        meta = {"step": self.step, "train": asdict(self.tcfg)}
        meta.update(extra_meta or {})
        arrays = self.opt.state_arrays()
        arrays["rng.state"] = self.gen.get_state().numpy().copy()
        save_stage(self.stage, path, meta, arrays)

    @classmethod
    def resume(cls, path: str | Path, x: np.ndarray, c: np.ndarray) -> "TrainingRun":
        stage, meta, arrays = load_stage(path)
        run = cls(stage, x, c, TrainConfig(**meta["train"]))
        run.opt.load_state_arrays(arrays)
        run.gen.set_state(torch.from_numpy(arrays["rng.state"].copy()))
        run.step = int(meta["step"])
        return run


def truncate_log(log_path: str | Path, step: int) -> None:
    """Drop log lines past ``step`` so a resumed run appends cleanly."""
    p = Path(log_path)
    if not p.exists():
        return
    keep = [ln for ln in p.read_text().splitlines() if ln.strip() and json.loads(ln)["step"] <= step]
    p.write_text("".join(ln + "\n" for ln in keep))


def train_stage(kind: str, cfg: RunConfig, records: list[DatasetRecord], out_dir: str | Path,
                resume: str | Path | None = None, on_log=None) -> tuple[Stage, list[tuple[int, float]]]:
    """Train one stage into ``out_dir`` (checkpoint plus loss log); returns the stage and its log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train_hands if kind == "hands" else cfg.train_body
    name = "stage1" if kind == "hands" else "stage2"
    log_path = out / f"{name}_loss.jsonl"
    skeleton = cfg.build_skeleton()
    if resume is not None:
        stage, _, _ = load_stage(resume)
        x, c = hands_dataset(records, stage.basis) if kind == "hands" else body_dataset(records)
        run = TrainingRun.resume(resume, x, c)
        # the stored optimizer settings stay; only the step target and logging follow the new config
        run.tcfg = replace(run.tcfg, steps=tcfg.steps, log_every=tcfg.log_every)
        truncate_log(log_path, run.step)
    else:
        stage, x, c = make_stage(kind, cfg, records, skeleton)
        run = TrainingRun(stage, x, c, tcfg)
        log_path.write_text("")
    log = run.train(tcfg.steps, log_path, on_log)
    run.save(out / f"{name}.ckpt", {"config": cfg.to_dict()})
    return run.stage, log
