"""Acceptance suite: each test checks one numbered criterion and prints a PASS/FAIL line."""
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import torch
import torch.nn as tnn
from scipy.spatial.transform import Rotation

from hoisynth.benchmark import evaluate_split
from hoisynth.config import load_config
from hoisynth.diffusion import (NoiseSchedule, forward_noise, forward_step, posterior_mean, sample, train_step)
from hoisynth.evaluation import (collision_percentage_points, contact_scores, format_table, joint_errors,
                                 root_errors)
from hoisynth.geometry import BpsBasis, Mesh, SphereSdf, bake_grid_sdf, compute_bps, icosphere
from hoisynth.kinematics import PoseSequence, desk_skeleton, rest_pose
from hoisynth.mathcore import RigidTransform, matrix_to_sixd, procrustes_residual, rot_z, solve_procrustes
from hoisynth.nn import (Adam, DenoiserConfig, FeedForward, MultiHeadSelfAttention, NoiseLevelEmbedding,
                         SelfAttentionBlock, TransformerDenoiser, gradient_check, init_parameters)
from hoisynth.pipeline import ObjectProjector, StageNet, hand_distances, load_stage, pipeline_fingerprint, \
    rectify_contacts, run_pipeline
from hoisynth.synthdata import Corpus, build_corpus, manifest_hash
from hoisynth.training import train_stage
from support import approaching_hands, random_object_sequence


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


# --- 1 ------------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(report):
    t0 = time.time()
    torch.manual_seed(0)
    errors = {}
    h = torch.randn(2, 4, 6, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 4, 6, dtype=torch.float64)
    layers = {"linear": tnn.Linear(6, 6), "layernorm": tnn.LayerNorm(6), "attention": MultiHeadSelfAttention(6, 4, 2),
              "feedforward": FeedForward(6, 10), "block": SelfAttentionBlock(6, 4, 2, 10)}
    for name, layer in layers.items():
        layer = layer.double()
        init_parameters(layer, torch.Generator().manual_seed(1))
        if name == "layernorm":
            with torch.no_grad():
                layer.weight.uniform_(0.5, 1.5)
                layer.bias.uniform_(-0.5, 0.5)
        errs = gradient_check(lambda: ((layer(h) - target) ** 2).mean(), dict(layer.named_parameters(), input=h))
        errors[name] = max(errs.values())

    emb = NoiseLevelEmbedding(6).double()
    init_parameters(emb, torch.Generator().manual_seed(2))
    levels = torch.tensor([1, 13, 50])
    errors["noise_embedding"] = max(gradient_check(lambda: emb(levels).pow(2).mean(),
                                                   dict(emb.named_parameters())).values())

    proj = ObjectProjector(9, 5, 7).double()
    init_parameters(proj, torch.Generator().manual_seed(3))
    raw = torch.randn(3, 9, dtype=torch.float64, requires_grad=True)
    errors["projector"] = max(gradient_check(lambda: proj(raw).pow(2).mean(),
                                             dict(proj.named_parameters(), input=raw)).values())

    cfg = DenoiserConfig(d_x=3, d_cond=4, d_model=8, d_kqv=8, n_heads=2, n_layers=2, zero_init_output=False)
    net = StageNet(cfg, ObjectProjector(5, 4, 6)).double()
    init_parameters(net, torch.Generator().manual_seed(4))
    g = torch.Generator().manual_seed(5)
    x = torch.randn(2, 5, 3, generator=g, dtype=torch.float64, requires_grad=True)
    c = torch.randn(2, 5, 5, generator=g, dtype=torch.float64, requires_grad=True)
    x0 = torch.randn(2, 5, 3, generator=g, dtype=torch.float64)
    n = torch.tensor([4, 17])
    errors["full_denoiser_l1"] = max(gradient_check(lambda: (net(x, n, c) - x0).abs().mean(),
                                                    dict(net.named_parameters(), x=x, c=c)).values())
    elapsed = time.time() - t0
    worst = max(errors.values())
    ok = worst < 1e-4 and elapsed < 60
    report(1, ok, f"max relative error {worst:.2e} over {sorted(errors)} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok, errors


# --- 2 ------------------------------------------------------------------------------

def test_criterion_2_diffusion_identities(report):
    s = NoiseSchedule.linear(50)
    prod = np.array([math.prod(1 - s.betas[1:n + 1]) for n in range(51)])
    ident = float(np.max(np.abs(prod - s.alpha_bars)))

    m, x0_val, n_chain = 100_000, 0.8, 50
    g = torch.Generator().manual_seed(0)
    x0 = torch.full((m,), x0_val, dtype=torch.float64)
    chain = x0.clone()
    for n in range(1, n_chain + 1):
        chain = forward_step(s, chain, n, g)
    closed = forward_noise(s, x0, n_chain, g)
    ab = s.alpha_bars[n_chain]
    mu, var = math.sqrt(ab) * x0_val, 1 - ab
    # the two samples are independent, so the standard error of their difference adds in quadrature
    se_mean = math.sqrt(2 * var / m)
    se_var = var * math.sqrt(2 * 2 / (m - 1))
    z = {"mean": abs(chain.mean().item() - closed.mean().item()) / se_mean,
         "var": abs(chain.var().item() - closed.var().item()) / se_var}
    analytic = {"chain_mean": (chain.mean().item() - mu) / math.sqrt(var / m),
                "closed_mean": (closed.mean().item() - mu) / math.sqrt(var / m)}

    x_n = torch.randn(4, 3, dtype=torch.float64, generator=g)
    x0_hat = torch.randn(4, 3, dtype=torch.float64, generator=g)
    exact = torch.equal(posterior_mean(s, x_n, x0_hat, 1), x0_hat)

    ok = ident < 1e-12 and max(z.values()) < 3 and exact
    report(2, ok, f"alpha_bar identity error {ident:.1e}; chain vs closed form z-scores "
                  f"{ {k: round(float(v), 2) for k, v in z.items()} } (< 3); z vs analytic mean (info) "
                  f"{ {k: round(float(v), 2) for k, v in analytic.items()} }; posterior mean at n=1 exact: {exact}")
    assert ok


# --- 3 ------------------------------------------------------------------------------

def test_criterion_3_toy_conditional_recovery(report):
    t0 = time.time()
    targets = torch.tensor([-1.0, 1.5])
    sched = NoiseSchedule.linear(50, 1e-3, 0.2)
    net = TransformerDenoiser(DenoiserConfig(d_x=1, d_cond=2, d_model=32, d_kqv=16, n_heads=2, n_layers=1))
    init_parameters(net, torch.Generator().manual_seed(0))
    opt = Adam(net.named_parameters(), lr=2e-3)
    g = torch.Generator().manual_seed(1)
    steps = 1500
    for _ in range(steps):
        lab = torch.randint(0, 2, (128,), generator=g)
        x0 = (targets[lab] + 0.1 * torch.randn(128, generator=g)).reshape(128, 1, 1)
        c = torch.nn.functional.one_hot(lab, 2).float().reshape(128, 1, 2)
        train_step(net, sched, x0, c, g, opt)
    net.eval()
    means = []
    for k in range(2):
        c = torch.zeros(2000, 1, 2)
        c[:, :, k] = 1
        means.append(sample(net, sched, c, (2000, 1, 1), torch.Generator().manual_seed(2 + k)).mean().item())
    elapsed = time.time() - t0
    errs = [abs(m - t) for m, t in zip(means, targets.tolist())]
    ok = max(errs) < 0.1 and elapsed < 120
    report(3, ok, f"{steps} steps, sample means {[round(m, 3) for m in means]} vs targets {targets.tolist()} "
                  f"(max error {max(errs):.3f} < 0.1), {elapsed:.1f}s (< 120s)")
    assert ok


# --- 4 ------------------------------------------------------------------------------

def test_criterion_4_rectification(report):
    worst, anchored, idem, untouched = 0.0, 0, True, True
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        seq = random_object_sequence(rng)
        hands = approaching_hands(rng, seq)
        out, anchors = rectify_contacts(hands, seq, 0.03)
        _, dist = hand_distances(hands, seq)
        for a in anchors:
            h = 0 if a.hand == "left" else 1
            sl = slice(3 * h, 3 * h + 3)
            assert a.frame == np.flatnonzero(dist[:, h] < 0.03)[0]
            untouched &= np.array_equal(out[:a.frame + 1, sl], hands[:a.frame + 1, sl])
            for t in range(a.frame + 1, len(seq)):
                d = np.linalg.norm(out[t, sl] - seq.vertices(t)[a.vertex])
                worst = max(worst, abs(d - np.linalg.norm(a.offset)))
            anchored += 1
        for h in range(2):
            if not any(a.hand == ("left", "right")[h] for a in anchors):
                untouched &= np.array_equal(out[:, 3 * h:3 * h + 3], hands[:, 3 * h:3 * h + 3])
        again, _ = rectify_contacts(out, seq, 0.03)
        idem &= np.array_equal(again, out)
    ok = worst <= 1e-9 and idem and untouched and anchored > 100
    report(4, ok, f"100 sequences, {anchored} anchored hands, max | |H-V| - |p| | = {worst:.1e} (<= 1e-9), "
                  f"idempotent: {idem}, frames up to k untouched: {untouched}")
    assert ok


# --- 5 ------------------------------------------------------------------------------

def test_criterion_5_geometry_oracles(report):
    rng = np.random.default_rng(0)
    basis = BpsBasis.sample(64, 1.0, 0)
    bps_ok = True
    for i in range(50):
        n = int(rng.integers(50, 6000)) if i % 5 else 5000        # every fifth mesh takes the grid path
        verts = rng.normal(size=(n, 3)) * rng.uniform(0.05, 0.6, size=3)
        mesh = Mesh(verts, rng.integers(0, n, size=(n, 3)))
        feat = compute_bps(basis, mesh.vertices)
        q = mesh.vertices.mean(axis=0) + basis.points
        oracle = np.empty_like(q)
        for j, p in enumerate(q):
            d2 = np.sum((mesh.vertices - p) ** 2, axis=1)
            oracle[j] = mesh.vertices[int(np.argmin(d2))] - p
        bps_ok &= np.array_equal(feat.deltas, oracle)

    radius = 0.5
    grid = bake_grid_sdf(icosphere(4, radius), resolution=32, padding=0.1)
    spacing = float(np.max(grid.spacing))
    lo, hi = np.asarray(grid.origin), np.asarray(grid.upper)
    pts = rng.uniform(lo, hi, size=(1000, 3))
    sdf_err = float(np.max(np.abs(grid(pts) - SphereSdf(radius)(pts))))

    proc = 0.0
    for _ in range(20):
        src = rng.normal(size=(8, 3))
        tf = RigidTransform(Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix(),
                            rng.normal(size=3), float(rng.uniform(0.3, 3.0)))
        fit = solve_procrustes(src, tf.apply(src))
        proc = max(proc, procrustes_residual(fit, src, tf.apply(src)))
    ok = bps_ok and sdf_err <= 2 * spacing and proc < 1e-9
    report(5, ok, f"BPS equals brute force on 50 meshes: {bps_ok}; grid SDF max error {sdf_err:.4f} "
                  f"(<= 2 x spacing = {2 * spacing:.4f}); Procrustes residual {proc:.1e} (< 1e-9)")
    assert ok


# --- 6 ------------------------------------------------------------------------------

def test_criterion_6_metric_cases(report):
    skel = desk_skeleton()
    gt = rest_pose(skel, 4)
    mpjpe = joint_errors(gt, gt)[1]
    prf = contact_scores(np.array([[True, False], [True, False]]), np.array([[True, True], [False, False]]))
    rot6d = gt.rot6d.copy()
    rot6d[:, 0] = matrix_to_sixd(rot_z(math.pi))
    o_root = root_errors(PoseSequence(skel, gt.root, rot6d), gt)[1]
    sphere = SphereSdf(1.0)
    shallow = collision_percentage_points(np.array([[[0.97, 0.0, 0.0]]]), sphere, 0.04)
    deep = collision_percentage_points(np.array([[[0.95, 0.0, 0.0]]]), sphere, 0.04)
    ok = mpjpe == 0.0 and prf == (0.5, 0.5, 0.5) and abs(o_root - math.sqrt(8)) < 1e-9 and shallow == 0 and deep == 100
    report(6, ok, f"MPJPE(GT,GT)={mpjpe}; P,R,F1={prf}; O_root={o_root:.12f} (sqrt 8 = {math.sqrt(8):.12f}); "
                  f"depth 0.03 -> {shallow}% and depth 0.05 -> {deep}% collision")
    assert ok


# --- 7 and 8: one full desk-scale run, then an independent CLI rerun ---------------------

@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cfg = load_config()
    t0 = time.time()
    build_corpus(cfg.corpus, root / "corpus", cfg.build_skeleton())
    corpus = Corpus.open(root / "corpus")
    train = corpus.records("subject", "train")
    test = corpus.records("subject", "test")
    t1 = time.time()
    hs, log1 = train_stage("hands", cfg, train, root / "run")
    bs, log2 = train_stage("body", cfg, train, root / "run")
    t2 = time.time()
    th = cfg.thresholds
    res = evaluate_split(test, train, hs, bs, cfg.best_of, cfg.eval_seed, th.contact_rectify, th.contact_metric,
                         th.collision)
    t3 = time.time()
    return {"root": root, "cfg": cfg, "test": test, "hs": hs, "bs": bs, "log1": log1, "log2": log2, "res": res,
            "times": {"corpus": t1 - t0, "train": t2 - t1, "eval": t3 - t2}}


def test_criterion_7_end_to_end_desk(desk_run, report, capsys):
    res, times, cfg = desk_run["res"], desk_run["times"], desk_run["cfg"]
    with capsys.disabled():
        print("\n" + format_table(res.aggregate))
    total = times["train"] + times["eval"]
    agg = res.aggregate
    rect, plain, gt = agg["rectified"], agg["no_constraints"], agg["gt_hands"]
    a = res.hand_jpe_best <= 0.7 * res.hand_jpe_baseline
    b = rect.c_rec > plain.c_rec and rect.f1 > plain.f1
    c = gt.mpjpe <= rect.mpjpe
    budget = total <= 45 * 60
    loss_drop = desk_run["log1"][-1][1] < 0.5 * desk_run["log1"][0][1]
    shape = (cfg.corpus.n_train, cfg.corpus.n_test, cfg.corpus.frames, cfg.build_skeleton().n_joints,
             cfg.bps.n_points, cfg.schedule.n_steps, cfg.model.d_model)
    report("7a", a, f"best-of-{cfg.best_of} Hand JPE {res.hand_jpe_best:.2f} cm vs constant-mean baseline "
                    f"{res.hand_jpe_baseline:.2f} cm ({100 * (1 - res.hand_jpe_best / res.hand_jpe_baseline):.1f}% "
                    f"better, need >= 30%)")
    report("7b", b, f"rectified recall {rect.c_rec:.4f} vs {plain.c_rec:.4f}, F1 {rect.f1:.4f} vs {plain.f1:.4f} "
                    f"(both strictly greater)")
    report("7c", c, f"GT-hands MPJPE {gt.mpjpe:.2f} cm <= pipeline MPJPE {rect.mpjpe:.2f} cm")
    report("7t", budget, f"train {times['train']:.0f}s + eval {times['eval']:.0f}s = {total / 60:.1f} min "
                         f"(<= 45 min); corpus {times['corpus']:.0f}s; config {shape}")
    report("7l", loss_drop, f"stage-1 loss {desk_run['log1'][0][1]:.4f} -> {desk_run['log1'][-1][1]:.4f} "
                            f"(final < half of initial)")
    assert shape == (200, 40, 30, 9, 64, 50, 64)
    assert a and b and c and budget and loss_drop


def test_criterion_8_reproducibility(desk_run, report, tmp_path):
    root = desk_run["root"]

    def cli(*args):
        proc = subprocess.run([sys.executable, "-m", "hoisynth", *args], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    cli("gen-data", "--out", str(tmp_path / "corpus"))
    for stage in ("1", "2"):
        cli("train", "--stage", stage, "--corpus", str(tmp_path / "corpus"), "--out", str(tmp_path / "run"))
    manifest = manifest_hash(root / "corpus") == manifest_hash(tmp_path / "corpus")
    logs = all((root / "run" / f).read_bytes() == (tmp_path / "run" / f).read_bytes()
               for f in ("stage1_loss.jsonl", "stage2_loss.jsonl"))
    ckpts = all((root / "run" / f).read_bytes() == (tmp_path / "run" / f).read_bytes()
                for f in ("stage1.ckpt", "stage2.ckpt"))
    hs2, _, _ = load_stage(tmp_path / "run" / "stage1.ckpt")
    bs2, _, _ = load_stage(tmp_path / "run" / "stage2.ckpt")
    samples = all(pipeline_fingerprint(run_pipeline(rec.object, desk_run["hs"], desk_run["bs"], seed))
                  == pipeline_fingerprint(run_pipeline(rec.object, hs2, bs2, seed))
                  for seed, rec in enumerate(desk_run["test"][:4]))
    ok = manifest and logs and ckpts and samples
    report(8, ok, f"manifest hash equal: {manifest}; loss logs equal: {logs}; checkpoints equal: {ckpts}; "
                  f"sampled outputs equal: {samples}")
    assert ok
