import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hoisynth.config import load_config
from hoisynth.diffusion import Normalizer
from hoisynth.geometry import BpsBasis, ObjectSequence, bps_feature_dim, box_mesh
from hoisynth.mathcore import rot_z
from hoisynth.pipeline import (ContactAnchor, IncompatibleCheckpointsError, body_condition, body_target,
                               check_compatible, encode_object, hand_distances, hand_shift, hands_condition,
                               infer_hand_mode, load_stage, object_shift, pipeline_fingerprint, predict_fullbody,
                               predict_hands, rectify_contacts, run_pipeline, run_pipeline_samples, save_stage)
from hoisynth.synthdata import CorpusConfig, generate_record
from hoisynth.training import make_stage
from support import approaching_hands, random_object_sequence


@pytest.fixture(scope="module")
def records():
    cfg = CorpusConfig(n_train=8, n_test=2)
    return [generate_record(cfg, i) for i in range(8)]


@pytest.fixture(scope="module")
def stages(records):
    cfg = load_config(overrides=["model.d_model=16", "model.d_kqv=8", "model.n_heads=2", "model.n_layers=1",
                                 "model.d_proj=8", "bps.n_points=16", "schedule.n_steps=8"])
    skel = cfg.build_skeleton()
    hs, _, _ = make_stage("hands", cfg, records, skel)
    bs, _, _ = make_stage("body", cfg, records, skel, hs.basis)
    # untrained nets output zero; give them some signal so samples are non-trivial
    g = torch.Generator().manual_seed(0)
    for st_ in (hs, bs):
        with torch.no_grad():
            w = st_.net.denoiser.output_proj.weight
            w.copy_(0.1 * torch.randn(w.shape, generator=g))
    return hs, bs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_rectification_guarantees(seed):
    rng = np.random.default_rng(seed)
    seq = random_object_sequence(rng)
    hands = approaching_hands(rng, seq)
    out, anchors = rectify_contacts(hands, seq, 0.03)
    _, dist = hand_distances(hands, seq)
    sides = {a.hand: a for a in anchors}
    for h, side in enumerate(("left", "right")):
        hits = np.flatnonzero(dist[:, h] < 0.03)
        if len(hits) == 0:
            assert side not in sides
            np.testing.assert_array_equal(out[:, 3 * h:3 * h + 3], hands[:, 3 * h:3 * h + 3])
            continue
        a = sides[side]
        assert a.frame == hits[0]
        np.testing.assert_array_equal(out[:a.frame + 1, 3 * h:3 * h + 3], hands[:a.frame + 1, 3 * h:3 * h + 3])
        for t in range(a.frame + 1, len(seq)):
            d = np.linalg.norm(out[t, 3 * h:3 * h + 3] - seq.vertices(t)[a.vertex])
            assert abs(d - np.linalg.norm(a.offset)) < 1e-9
    again, _ = rectify_contacts(out, seq, 0.03)
    assert np.array_equal(again, out)


def test_rectified_hand_rides_with_a_rotating_object():
    mesh = box_mesh((0.4, 0.4, 0.4), spacing=0.1)
    t_count = 10
    rots = np.stack([rot_z(0.2 * t) for t in range(t_count)])
    seq = ObjectSequence(mesh, rots, np.zeros((t_count, 3)))
    vi = int(np.argmax(mesh.vertices[:, 0] + 0.1 * mesh.vertices[:, 2]))
    hands = np.full((t_count, 6), 5.0)
    hands[3:, :3] = seq.vertices(3)[vi] + [0.02, 0, 0]       # stays put in the world
    out, anchors = rectify_contacts(hands, seq, 0.03)
    assert len(anchors) == 1 and anchors[0].frame == 3
    for t in range(4, t_count):
        local = rots[t].T @ out[t, :3]
        np.testing.assert_allclose(local, rots[3].T @ hands[3, :3], atol=1e-12)
    np.testing.assert_array_equal(out[:, 3:], hands[:, 3:])
    assert infer_hand_mode(hands, seq) == "one_handed_left"
    assert infer_hand_mode(hands[:, [3, 4, 5, 0, 1, 2]], seq) == "one_handed_right"
    assert infer_hand_mode(np.full((t_count, 6), 5.0), seq) == "none"


def test_anchor_serialisation():
    a = ContactAnchor("left", 4, 17, np.array([0.01, 0.0, -0.02]), rot_z(0.3))
    b = ContactAnchor.from_dict(a.to_dict())
    assert (b.hand, b.frame, b.vertex) == ("left", 4, 17)
    np.testing.assert_array_equal(b.offset, a.offset)
    np.testing.assert_array_equal(b.rotation, a.rotation)


def test_shifts_remove_horizontal_position(records):
    rec = records[0]
    basis = BpsBasis.sample(16, 1.0, 0)
    cond, shift = hands_condition(rec.object, basis)
    moved = ObjectSequence(rec.object.mesh, rec.object.rotations, rec.object.translations + [2.0, -3.0, 0.0])
    cond2, shift2 = hands_condition(moved, basis)
    np.testing.assert_allclose(cond2, cond, atol=1e-12)
    np.testing.assert_allclose(shift2 - shift, [2.0, -3.0, 0.0], atol=1e-12)
    assert shift[2] == 0.0 and object_shift(rec.object)[2] == 0.0
    assert cond.shape == (len(rec), bps_feature_dim(16))
    c, s = body_condition(rec.hands)
    np.testing.assert_allclose(c[0, :2] + c[0, 3:5], 0.0, atol=1e-12)
    np.testing.assert_array_equal(s, hand_shift(rec.hands))
    flat, s2 = body_target(rec.pose)
    np.testing.assert_allclose(flat[:, :3] + s2, rec.pose.root)


def test_encode_object_projects_per_frame(records, stages):
    hs, _ = stages
    raw, proj = encode_object(records[0].object, hs.basis, hs.net.projector, hs.c_norm)
    assert raw.shape == (30, bps_feature_dim(16)) and proj.shape == (30, 8)
    assert encode_object(records[0].object, hs.basis).shape == raw.shape


def test_predictions_have_the_right_shapes(records, stages):
    hs, bs = stages
    rec = records[1]
    hands = predict_hands(hs, rec.object, torch.Generator().manual_seed(0), 3)
    assert hands.shape == (3, 30, 6) and np.isfinite(hands).all()
    poses = predict_fullbody(bs, rec.hands, torch.Generator().manual_seed(0), 2)
    assert len(poses) == 2 and poses[0].rot6d.shape == (30, 6, 6)
    batch = predict_fullbody(bs, hands, torch.Generator().manual_seed(0))
    assert len(batch) == 3


def test_pipeline_is_seeded_and_rectification_is_local(records, stages):
    hs, bs = stages
    seq = records[2].object
    a = run_pipeline(seq, hs, bs, seed=5)
    b = run_pipeline(seq, hs, bs, seed=5)
    c = run_pipeline(seq, hs, bs, seed=6)
    assert pipeline_fingerprint(a) == pipeline_fingerprint(b) != pipeline_fingerprint(c)
    plain = run_pipeline(seq, hs, bs, seed=5, rectify=False)
    np.testing.assert_array_equal(plain.raw_hands, a.raw_hands)
    np.testing.assert_array_equal(plain.hands, plain.raw_hands)
    first = min([x.frame for x in a.anchors], default=len(seq) - 1)
    np.testing.assert_array_equal(a.hands[:first + 1], plain.hands[:first + 1])


def test_pipeline_accepts_external_hands(records, stages):
    hs, bs = stages
    rec = records[3]
    fed = np.repeat(rec.hands[None], 2, axis=0)
    res = run_pipeline_samples(rec.object, hs, bs, 0, 2, rectify=False, raw_hands=fed)
    np.testing.assert_array_equal(res[0].hands, rec.hands)
    assert res[0].hand_mode in ("two_handed", "one_handed_left", "one_handed_right", "none")


def test_checkpoint_roundtrip_and_compatibility(records, stages, tmp_path):
    hs, bs = stages
    save_stage(hs, tmp_path / "h.ckpt")
    save_stage(bs, tmp_path / "b.ckpt")
    hs2, meta, _ = load_stage(tmp_path / "h.ckpt")
    bs2, _, _ = load_stage(tmp_path / "b.ckpt")
    assert meta["kind"] == "hands"
    check_compatible(hs2, bs2)
    seq = records[4].object
    assert pipeline_fingerprint(run_pipeline(seq, hs, bs, 1)) == pipeline_fingerprint(run_pipeline(seq, hs2, bs2, 1))
    with pytest.raises(IncompatibleCheckpointsError):
        check_compatible(bs2, hs2)
    other = Normalizer(hs.hand_stats.mean + 1.0, hs.hand_stats.std)
    bs2.hand_stats = other
    with pytest.raises(IncompatibleCheckpointsError):
        check_compatible(hs2, bs2)
    bs2.hand_stats = hs.hand_stats
    bs2.basis = BpsBasis.sample(16, 1.0, 1)
    with pytest.raises(IncompatibleCheckpointsError):
        check_compatible(hs2, bs2)
