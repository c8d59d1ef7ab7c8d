import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hrcplan.perception import BONES, JOINT_INDEX, Skeleton, standing_skeleton
from hrcplan.prediction import (
    ConstantVelocityForecaster,
    LossWeights,
    PoseForecast,
    PoseHistory,
    PoseWindow,
    StaticForecaster,
    bone_lengths,
    extract_features,
    fill_occlusions,
    horizon_weights,
    predict_constant_velocity,
    prediction_loss,
    reconstruct_pose,
)


def walk_window(v=(0.0, 0.0, 0.0), n=30, dt=0.1, t0=0.0, skel=None):
    skel = skel or standing_skeleton(root=(0.3, -0.2, 0.0), heading=0.4)
    v = np.asarray(v, float)
    times = t0 + dt * np.arange(n)
    return PoseWindow(tuple(skel.translated(v * t) for t in times), times)


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


# -- horizon weights ---------------------------------------------------------

def test_horizon_weights_geometric():
    w = horizon_weights(10, 0.9)
    assert len(w) == 11
    assert w[0] == 1.0
    assert np.allclose(w, [0.9 ** i for i in range(11)], rtol=0, atol=1e-15)


def test_forecast_rejects_increasing_weights():
    s = standing_skeleton()
    with pytest.raises(ValueError):
        PoseForecast((s, s), np.array([0.0, 0.1]), np.array([0.5, 0.6]))


# -- features ----------------------------------------------------------------

def test_static_window_has_zero_displacements():
    f = extract_features(walk_window())
    assert np.array_equal(f.displacements, np.zeros_like(f.displacements))


def test_bone_units_are_unit_norm():
    f = extract_features(walk_window((0.4, 0.1, 0.0)))
    assert np.allclose(np.linalg.norm(f.bone_units, axis=-1), 1.0, atol=1e-9)


def test_features_translation_invariant():
    w = walk_window((0.3, 0.0, 0.0))
    f1 = extract_features(w)
    f2 = extract_features(w.translated((1.0, 2.0, 3.0)))
    assert np.allclose(f1.bone_units, f2.bone_units, atol=1e-12)
    assert np.allclose(f1.displacements, f2.displacements, atol=1e-12)


def test_uniform_walk_displacement():
    # 0.05 m per frame at 10 Hz
    f = extract_features(walk_window((0.5, 0.0, 0.0)))
    assert np.array_equal(f.displacements[0], np.zeros((15, 3)))
    assert np.allclose(f.displacements[1:], np.broadcast_to([0.05, 0.0, 0.0], f.displacements[1:].shape), atol=1e-12)


def test_zero_length_bone_rejected():
    pos = standing_skeleton().positions.copy()
    pos[JOINT_INDEX["LWPS"]] = pos[JOINT_INDEX["LAEL"]]
    s = Skeleton(pos)
    with pytest.raises(ValueError):
        extract_features(PoseWindow((s, s), np.array([0.0, 0.1])))


def test_occluded_window_rejected_by_features():
    s = standing_skeleton().with_invalid(["LWPS"])
    with pytest.raises(ValueError):
        extract_features(PoseWindow((s,), np.array([0.0])))


# -- reconstruction ----------------------------------------------------------

def test_round_trip_identity():
    s = standing_skeleton(root=(1.2, -0.7, 0.1), heading=2.1, height=1.62)
    f = extract_features(PoseWindow((s,), np.array([0.0])))
    back = reconstruct_pose(s["L3"], f.bone_units[0], bone_lengths(s))
    assert np.max(np.abs(back.positions - s.positions)) < 1e-9


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.floats(1.4, 2.0))
def test_round_trip_identity_property(x, y, heading, height):
    s = standing_skeleton(root=(x, y, 0.0), heading=heading, height=height)
    f = extract_features(PoseWindow((s,), np.array([0.0])))
    back = reconstruct_pose(s["L3"], f.bone_units[0], bone_lengths(s))
    assert np.max(np.abs(back.positions - s.positions)) < 1e-9


def test_t_pose_hand_walk():
    # zero root; spine up, arms out along +/-y, legs straight down
    up, down = np.array([0, 0, 1.0]), np.array([0, 0, -1.0])
    left, right = np.array([0, 1.0, 0]), np.array([0, -1.0, 0])
    dirs = {
        ("CLAV", "C7"): up, ("C7", "LSHO"): left, ("C7", "RSHO"): right,
        ("LSHO", "LAEL"): left, ("LAEL", "LWPS"): left,
        ("RSHO", "RAEL"): right, ("RAEL", "RWPS"): right,
        ("C7", "L3"): down, ("L3", "LHIP"): left, ("L3", "RHIP"): right,
        ("LHIP", "LKNE"): down, ("LKNE", "LHEE"): down,
        ("RHIP", "RKNE"): down, ("RKNE", "RHEE"): down,
    }
    lengths = {
        ("CLAV", "C7"): 0.05, ("C7", "LSHO"): 0.2, ("C7", "RSHO"): 0.2,
        ("LSHO", "LAEL"): 0.3, ("LAEL", "LWPS"): 0.25,
        ("RSHO", "RAEL"): 0.3, ("RAEL", "RWPS"): 0.25,
        ("C7", "L3"): 0.5, ("L3", "LHIP"): 0.1, ("L3", "RHIP"): 0.1,
        ("LHIP", "LKNE"): 0.45, ("LKNE", "LHEE"): 0.45,
        ("RHIP", "RKNE"): 0.45, ("RKNE", "RHEE"): 0.45,
    }
    s = reconstruct_pose(np.zeros(3), np.array([dirs[b] for b in BONES]), np.array([lengths[b] for b in BONES]))
    expected = {
        "L3": (0, 0, 0), "C7": (0, 0, 0.5), "CLAV": (0, 0, 0.45),
        "LSHO": (0, 0.2, 0.5), "RSHO": (0, -0.2, 0.5),
        "LAEL": (0, 0.5, 0.5), "RAEL": (0, -0.5, 0.5),
        "LWPS": (0, 0.75, 0.5), "RWPS": (0, -0.75, 0.5),
        "LHIP": (0, 0.1, 0), "RHIP": (0, -0.1, 0),
        "LKNE": (0, 0.1, -0.45), "RKNE": (0, -0.1, -0.45),
        "LHEE": (0, 0.1, -0.9), "RHEE": (0, -0.1, -0.9),
    }
    for name, xyz in expected.items():
        assert np.allclose(s[name], xyz, atol=1e-12), name


def test_doubling_lengths_doubles_offsets_from_root():
    s = standing_skeleton(root=(0.5, 0.5, 0.0), heading=1.0)
    units = extract_features(PoseWindow((s,), np.array([0.0]))).bone_units[0]
    root = s["L3"]
    one = reconstruct_pose(root, units, bone_lengths(s))
    two = reconstruct_pose(root, units, 2 * bone_lengths(s))
    assert np.allclose(two.positions - root, 2 * (one.positions - root), atol=1e-12)


def test_reconstruct_rejects_non_unit_vectors():
    s = standing_skeleton()
    units = extract_features(PoseWindow((s,), np.array([0.0]))).bone_units[0].copy()
    units[3] *= 1.01
    with pytest.raises(ValueError):
        reconstruct_pose(s["L3"], units, bone_lengths(s))


# -- constant velocity -------------------------------------------------------

def test_static_window_forecast_equals_last_frame():
    w = walk_window()
    fc = predict_constant_velocity(w)
    assert fc.n_steps == 10 and len(fc.predicted) == 10
    for s in fc.steps:
        assert np.allclose(s.positions, w.frames[-1].positions, atol=1e-12)


def test_linear_motion_forecast_is_exact():
    w = walk_window((0.5, 0.0, 0.0))
    fc = predict_constant_velocity(w)
    last = w.frames[-1].positions
    for k, s in enumerate(fc.steps):
        assert np.max(np.abs(s.positions - (last + [0.05 * k, 0.0, 0.0]))) < 1e-9
    assert np.allclose(fc.times, w.times[-1] + 0.1 * np.arange(11), atol=1e-12)


def test_noisy_window_forecast_start_near_true_line(rng):
    v = np.array([0.5, -0.2, 0.0])
    clean = walk_window(v)
    noisy = PoseWindow(
        tuple(Skeleton(f.positions + rng.normal(0.0, 1e-3, (15, 3))) for f in clean.frames), clean.times)
    fc = predict_constant_velocity(noisy)
    assert np.max(np.abs(fc.steps[0].positions - clean.frames[-1].positions)) < 5e-3
    # least-squares oracle for one coordinate
    j = JOINT_INDEX["LWPS"]
    y = noisy.positions[:, j, 0]
    slope = np.polyfit(noisy.times, y, 1)[0]
    assert fc.steps[1].positions[j, 0] == pytest.approx(y[-1] + 0.1 * slope, abs=1e-12)


def test_forecast_needs_two_frames():
    w = walk_window(n=1)
    with pytest.raises(ValueError):
        predict_constant_velocity(w)


@given(st.floats(-math.pi, math.pi), st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1)))
def test_constant_velocity_equivariant(angle, shift):
    w = walk_window((0.4, 0.3, 0.0))
    r, t = rot_z(angle), np.array(shift)
    moved = PoseWindow(tuple(Skeleton(f.positions @ r.T + t) for f in w.frames), w.times)
    a = predict_constant_velocity(w)
    b = predict_constant_velocity(moved)
    for sa, sb in zip(a.steps, b.steps):
        assert np.allclose(sa.positions @ r.T + t, sb.positions, atol=1e-9)


def test_forecaster_contract_step_count_and_times():
    w = walk_window((0.2, 0.0, 0.0))
    for f in (ConstantVelocityForecaster(), ConstantVelocityForecaster(fill="body"), StaticForecaster()):
        fc = f(w, 10)
        assert len(fc.predicted) == 10
        assert np.all(np.diff(fc.times) > 0)


# -- occlusion fill ----------------------------------------------------------

def _occluded_walk(v, hide, first_hidden):
    w = walk_window(v)
    frames = tuple(f.with_invalid(hide) if i >= first_hidden else f for i, f in enumerate(w.frames))
    return w, PoseWindow(frames, w.times)


def test_world_fill_holds_last_seen_position():
    clean, w = _occluded_walk((0.5, 0.0, 0.0), ["LWPS"], 20)
    pos, seen = fill_occlusions(w, "world")
    j = JOINT_INDEX["LWPS"]
    assert seen.all()
    assert np.array_equal(pos[20:, j], np.broadcast_to(clean.positions[19, j], (10, 3)))


def test_body_fill_moves_with_root():
    clean, w = _occluded_walk((0.5, 0.0, 0.0), ["LWPS"], 20)
    pos, _ = fill_occlusions(w, "body")
    # rigid translation: the held offset from L3 reproduces the true joint
    assert np.allclose(pos, clean.positions, atol=1e-12)


def test_never_seen_joint_is_marked_unseen():
    _, w = _occluded_walk((0.0, 0.0, 0.0), ["RWPS"], 0)
    fc = predict_constant_velocity(w)
    assert not fc.steps[0].valid[JOINT_INDEX["RWPS"]]
    assert fc.steps[0].valid.sum() == 14


def test_fill_rejects_unknown_frame():
    with pytest.raises(ValueError):
        fill_occlusions(walk_window(), "camera")


def test_history_is_bounded_and_ordered():
    h = PoseHistory(3)
    s = standing_skeleton()
    for i in range(5):
        h.push(0.1 * i, s)
    w = h.window()
    assert len(w) == 3
    assert np.allclose(w.times, [0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        h.push(0.4, s)


# -- loss --------------------------------------------------------------------

def _direct_loss(pred, truth, lp, lb):
    n = 0
    sq = 0.0
    for p, t in zip(pred, truth):
        for j in range(15):
            for c in range(3):
                sq += (p.positions[j, c] - t.positions[j, c]) ** 2
                n += 1
    terms = []
    for p, t in zip(pred, truth):
        for par, ch in BONES:
            a = p[ch] - p[par]
            b = t[ch] - t[par]
            terms.append(1.0 - float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return lp * sq / n + lb * sum(terms) / len(terms)


def test_loss_of_identical_sequences_is_zero():
    seq = list(walk_window((0.3, 0, 0)).frames[:10])
    assert prediction_loss(seq, seq) == 0.0


def test_loss_of_orthogonal_bones_is_one():
    # planar figure in the xy plane, then rotated a quarter turn in that plane
    base = standing_skeleton().positions
    flat = np.column_stack([base[:, 1], base[:, 2], np.zeros(15)])
    truth = [Skeleton(flat)]
    pred = [Skeleton(flat @ rot_z(math.pi / 2).T)]
    loss = prediction_loss(pred, truth, LossWeights(position=0.0, bone=1.0))
    assert loss == pytest.approx(1.0, abs=1e-12)


def test_loss_matches_direct_formula(rng):
    truth = list(walk_window((0.3, 0.1, 0)).frames[:10])
    pred = [Skeleton(s.positions + rng.normal(0, 0.02, (15, 3))) for s in truth]
    lw = LossWeights(1.0, 0.5)
    assert abs(prediction_loss(pred, truth, lw) - _direct_loss(pred, truth, 1.0, 0.5)) < 1e-12


def test_loss_non_negative_and_mse_symmetric(rng):
    truth = list(walk_window((0.3, 0.1, 0)).frames[:5])
    pred = [Skeleton(s.positions + rng.normal(0, 0.05, (15, 3))) for s in truth]
    lw = LossWeights(1.0, 0.0)
    assert prediction_loss(pred, truth, lw) > 0
    assert prediction_loss(pred, truth, lw) == pytest.approx(prediction_loss(truth, pred, lw), abs=1e-15)


def test_loss_length_mismatch_rejected():
    seq = list(walk_window().frames[:3])
    with pytest.raises(ValueError):
        prediction_loss(seq, seq[:2])


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(0.0, 0.0)
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)
