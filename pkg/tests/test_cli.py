import json
import subprocess
import sys

import numpy as np
import pytest

from hoisynth import cli
from hoisynth.diffusion import NonFiniteLossError
from hoisynth.formats import load_motion
from hoisynth.geometry import ObjectSequence, cylinder_mesh, save_obj, save_trajectory
from hoisynth.mathcore import rot_z

SMALL = ["--set", "corpus.n_train=6", "--set", "corpus.n_test=2", "--set", "corpus.n_train_subjects=3"]
TINY = SMALL + [a for kv in ["model.d_model=16", "model.d_kqv=8", "model.n_heads=2", "model.n_layers=1",
                              "model.d_proj=8", "bps.n_points=16", "schedule.n_steps=6",
                              "train_hands.steps=10", "train_body.steps=10", "train_hands.batch=4",
                              "train_body.batch=4", "train_hands.log_every=5", "train_body.log_every=5"]
                for a in ("--set", kv)]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-data", "--out", str(root / "corpus")] + TINY) == 0
    for stage in (1, 2):
        assert cli.main(["train", "--stage", str(stage), "--corpus", str(root / "corpus"),
                         "--out", str(root / "run")] + TINY) == 0
    return root


def test_gen_data_writes_manifest_and_config(run_dir, capsys):
    manifest = json.loads((run_dir / "corpus" / "manifest.json").read_text())
    assert len(manifest["sequences"]) == 8 and manifest["version"] == 1
    echoed = json.loads((run_dir / "corpus" / "config.json").read_text())
    assert echoed["corpus"]["n_train"] == 6


def test_gen_data_is_reproducible(run_dir, tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "again")] + TINY) == 0
    out = capsys.readouterr().out.strip().splitlines()[-1]
    record = json.loads(out)
    assert record["sequences"] == 8
    assert (tmp_path / "again" / "manifest.json").read_bytes() == (run_dir / "corpus" / "manifest.json").read_bytes()


def test_train_outputs(run_dir):
    for s in (1, 2):
        assert (run_dir / "run" / f"stage{s}.ckpt").exists()
        lines = (run_dir / "run" / f"stage{s}_loss.jsonl").read_text().splitlines()
        assert [json.loads(ln)["step"] for ln in lines] == [1, 5, 10]
        assert (run_dir / "run" / f"stage{s}_config.json").exists()


def test_pipeline_command(run_dir, tmp_path):
    # an unseen primitive shape: a tall cylinder sliding and turning
    mesh = cylinder_mesh(0.15, 0.5, 0.05, center=(0, 0, 0.25))
    t_count = 14
    seq = ObjectSequence(mesh, np.stack([rot_z(0.05 * t) for t in range(t_count)]),
                         [[0.6 + 0.01 * t, 0.0, 0.6] for t in range(t_count)])
    save_obj(mesh, tmp_path / "m.obj")
    save_trajectory(seq, tmp_path / "traj.csv")
    args = ["pipeline", "--object-trajectory", str(tmp_path / "traj.csv"), "--mesh", str(tmp_path / "m.obj"),
            "--stage1", str(run_dir / "run" / "stage1.ckpt"), "--stage2", str(run_dir / "run" / "stage2.ckpt"),
            "--seed", "3"] + TINY
    assert cli.main(args + ["--out", str(tmp_path / "a.jsonl")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b.jsonl"), "--no-rectify"]) == 0
    a, b = load_motion(tmp_path / "a.jsonl"), load_motion(tmp_path / "b.jsonl")
    assert len(a.pose) == len(b.pose) == t_count
    first = min([x["frame"] for x in a.anchors], default=t_count - 1)
    np.testing.assert_array_equal(a.hands[:first + 1], b.hands[:first + 1])
    assert b.anchors == [] and a.meta["rectify"] and not b.meta["rectify"]
    assert (tmp_path / "a.jsonl.config.json").exists()


def test_evaluate_command(run_dir, capsys):
    out = run_dir / "eval"
    assert cli.main(["evaluate", "--corpus", str(run_dir / "corpus"), "--stage1", str(run_dir / "run" / "stage1.ckpt"),
                     "--stage2", str(run_dir / "run" / "stage2.ckpt"), "--best-of", "2", "--out", str(out)] + TINY) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["aggregate"]) == {"rectified", "no_constraints", "gt_hands"}
    assert len(report["columns"]) == 10
    table = (out / "table.txt").read_text()
    for col in report["columns"]:
        assert col in table
    assert report["best_of"] == 2 and report["sequences"] == 2


def test_exit_codes(run_dir, tmp_path, monkeypatch):
    assert cli.main(["gen-data", "--out", str(tmp_path / "no" / "such" / "dir")] + SMALL) == cli.EXIT_IO
    assert cli.main(["gen-data", "--out", str(tmp_path / "c"), "--set", "thresholds.collision=0"]) == cli.EXIT_CONFIG
    assert cli.main(["gen-data", "--out", str(tmp_path / "c"), "--config", str(tmp_path / "none.json")]) == cli.EXIT_IO
    assert cli.main(["gen-data", "--out", str(run_dir / "corpus")] + SMALL) == cli.EXIT_IO
    ck1, ck2 = str(run_dir / "run" / "stage1.ckpt"), str(run_dir / "run" / "stage2.ckpt")
    assert cli.main(["evaluate", "--corpus", str(run_dir / "corpus"), "--stage1", ck2, "--stage2", ck1,
                     "--out", str(tmp_path / "e")]) == cli.EXIT_INCOMPATIBLE
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert cli.main(["evaluate", "--corpus", str(run_dir / "corpus"), "--stage1", str(tmp_path / "junk.ckpt"),
                     "--stage2", ck2, "--out", str(tmp_path / "e")]) == cli.EXIT_IO

    def boom(*a, **k):
        raise NonFiniteLossError("loss is nan")
    monkeypatch.setattr("hoisynth.training.train_step", boom)
    assert cli.main(["train", "--stage", "1", "--corpus", str(run_dir / "corpus"),
                     "--out", str(tmp_path / "t")] + TINY) == cli.EXIT_NONFINITE


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hoisynth", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout
    res = subprocess.run([sys.executable, "-m", "hoisynth", "train"], capture_output=True, text=True)
    assert res.returncode == 2
