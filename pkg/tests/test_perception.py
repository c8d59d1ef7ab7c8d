import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hrcplan.perception import (
    BONES,
    JOINT_INDEX,
    CameraIntrinsics,
    HumanGeometry,
    PoseFrame,
    Skeleton,
    TiltAngles,
    lift_pixel,
    project_point,
    read_pose_file,
    rot_x,
    rot_y,
    skeleton_capsules,
    standing_skeleton,
    tilt_rotation,
    to_world,
    write_pose_file,
)

K = CameraIntrinsics(fx=610.0, fy=605.0, cx=320.0, cy=240.0)
tilt = st.floats(-1.5, 1.5)


# -- lifting -----------------------------------------------------------------

def test_principal_point_lifts_onto_optical_axis():
    p = lift_pixel(K.cx, K.cy, 2.0, K)
    assert np.array_equal(p.xyz, [0.0, 2.0, 0.0])
    assert not p.degenerate


def test_one_focal_length_offset_is_unit_tangent():
    assert np.allclose(lift_pixel(K.cx + K.fx, K.cy, 1.0, K).xyz, [1.0, 1.0, 0.0], atol=1e-15)


def test_pixel_above_center_lifts_upward():
    assert lift_pixel(K.cx, K.cy - K.fy, 1.0, K).xyz[2] == pytest.approx(1.0)


def test_zero_depth_is_flagged_degenerate():
    p = lift_pixel(100.0, 50.0, 0.0, K)
    assert p.degenerate
    assert np.array_equal(p.xyz, np.zeros(3))


def test_negative_depth_rejected():
    with pytest.raises(ValueError):
        lift_pixel(1.0, 1.0, -0.5, K)


def test_non_positive_focal_length_rejected():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 600.0, 320.0, 240.0)


def test_lift_reprojects_to_same_pixel(rng):
    for u, v, d in zip(rng.uniform(0, 640, 500), rng.uniform(0, 480, 500), rng.uniform(0.2, 6.0, 500)):
        # independent pinhole projection
        x, y, z = lift_pixel(u, v, d, K).xyz
        assert abs(K.cx + K.fx * x / y - u) < 1e-6
        assert abs(K.cy - K.fy * z / y - v) < 1e-6
        pu, pv = project_point((x, y, z), K)
        assert abs(pu - u) < 1e-6 and abs(pv - v) < 1e-6


@given(st.floats(0, 640), st.floats(0, 480), st.floats(0.1, 8.0))
def test_lift_linear_in_depth(u, v, d):
    assert np.allclose(lift_pixel(u, v, 2 * d, K).xyz, 2 * lift_pixel(u, v, d, K).xyz, rtol=1e-14, atol=1e-14)


# -- tilt --------------------------------------------------------------------

def test_zero_tilt_is_exact_identity():
    assert np.array_equal(tilt_rotation(TiltAngles(0.0, 0.0)), np.eye(3))


def test_quarter_roll_maps_forward_to_up():
    r = tilt_rotation(TiltAngles(roll=math.pi / 2, pitch=0.0))
    assert np.allclose(r @ [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], atol=1e-15)


def test_roll_matrix_entries():
    a = 0.3
    assert np.array_equal(rot_x(a), [[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])


@given(tilt, tilt)
def test_tilt_is_proper_rotation(alpha, beta):
    r = tilt_rotation(TiltAngles(alpha, beta))
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1.0) < 1e-12


@given(tilt, tilt, st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)))
def test_to_world_matches_sequential_rotation(alpha, beta, p):
    p = np.array(p)
    seq = rot_y(beta) @ (rot_x(alpha) @ p)
    out = to_world(p, TiltAngles(alpha, beta))
    assert np.allclose(out, seq, atol=1e-12)
    assert abs(np.linalg.norm(out) - np.linalg.norm(p)) < 1e-12


def test_zero_tilt_leaves_point_unchanged():
    p = np.array([0.3, 2.0, -0.4])
    assert np.array_equal(to_world(p, TiltAngles()), p)


def test_non_finite_tilt_rejected():
    with pytest.raises(ValueError):
        tilt_rotation(TiltAngles(math.nan, 0.0))


# -- skeleton capsules -------------------------------------------------------

def test_full_skeleton_has_fourteen_capsules():
    assert len(skeleton_capsules(standing_skeleton(), HumanGeometry())) == 14


def test_left_arm_occlusion_omits_touching_bones():
    s = standing_skeleton().with_invalid(["LAEL", "LWPS"])
    caps = skeleton_capsules(s, HumanGeometry())
    dropped = [b for b in BONES if "LAEL" in b or "LWPS" in b]
    assert len(dropped) == 2
    assert len(caps) == 14 - len(dropped)
    bad = {tuple(s["LAEL"]), tuple(s["LWPS"])}
    for c in caps:
        assert tuple(c.axis.a) not in bad and tuple(c.axis.b) not in bad


def test_fully_occluded_skeleton_has_no_capsules():
    s = standing_skeleton()
    hidden = Skeleton(s.positions, np.zeros(15, bool))
    assert skeleton_capsules(hidden, HumanGeometry()) == []


def test_t_pose_arm_capsule_lengths_equal_joint_distances():
    s = standing_skeleton()
    pos = s.positions.copy()
    for side, sign in (("L", 1.0), ("R", -1.0)):
        sho = pos[JOINT_INDEX[f"{side}SHO"]]
        pos[JOINT_INDEX[f"{side}AEL"]] = sho + [0.0, sign * 0.30, 0.0]
        pos[JOINT_INDEX[f"{side}WPS"]] = sho + [0.0, sign * 0.55, 0.0]
    caps = skeleton_capsules(Skeleton(pos), HumanGeometry())
    by_bone = dict(zip(BONES, caps))
    upper = by_bone[("LSHO", "LAEL")]
    fore = by_bone[("LAEL", "LWPS")]
    assert np.linalg.norm(upper.axis.b - upper.axis.a) == pytest.approx(0.30, abs=1e-12)
    assert np.linalg.norm(fore.axis.b - fore.axis.a) == pytest.approx(0.25, abs=1e-12)


def test_capsule_radii_split_torso_and_limbs():
    caps = skeleton_capsules(standing_skeleton(), HumanGeometry(0.08, 0.15))
    radii = sorted({c.radius for c in caps})
    assert radii == [0.08, 0.15]
    assert sum(c.radius == 0.15 for c in caps) == 4


def test_invalid_joints_may_be_non_finite_but_valid_ones_not():
    pos = standing_skeleton().positions.copy()
    pos[0] = np.nan
    valid = np.ones(15, bool)
    with pytest.raises(ValueError):
        Skeleton(pos, valid)
    valid[0] = False
    Skeleton(pos, valid)


def test_standing_skeleton_l3_is_midpoint():
    s = standing_skeleton(root=(1.0, -2.0, 0.0), heading=0.7)
    hip_mid = 0.5 * (s["LHIP"] + s["RHIP"])
    assert np.allclose(s["L3"], 0.5 * (s["C7"] + hip_mid), atol=1e-12)


def test_standing_skeleton_heading_rotates_about_root():
    a = standing_skeleton(heading=0.0)
    b = standing_skeleton(heading=math.pi / 2)
    # facing +y: the left shoulder (body +y) ends up on world -x
    assert b["LSHO"][0] == pytest.approx(-a["LSHO"][1], abs=1e-12)


# -- recorded-pose files -----------------------------------------------------

def test_pose_file_round_trip(tmp_path):
    s = standing_skeleton(root=(0.5, 1.0, 0.0)).with_invalid(["LWPS"])
    frames = [PoseFrame(0.1 * i, s.translated((0.05 * i, 0, 0))) for i in range(5)]
    path = tmp_path / "poses.jsonl"
    write_pose_file(path, frames)
    back = read_pose_file(path)
    assert len(back) == 5
    for f, g in zip(frames, back):
        assert f.t == g.t
        assert np.array_equal(f.skeleton.positions, g.skeleton.positions)
        assert np.array_equal(f.skeleton.valid, g.skeleton.valid)


def test_pose_file_rejects_non_increasing_times(tmp_path):
    s = standing_skeleton()
    path = tmp_path / "poses.jsonl"
    write_pose_file(path, [PoseFrame(0.2, s), PoseFrame(0.1, s)])
    with pytest.raises(ValueError):
        read_pose_file(path)


def test_pose_file_reports_bad_line(tmp_path):
    path = tmp_path / "poses.jsonl"
    path.write_text('{"t": 0.0, "joints": [[0, 0, 0, 1]]}\n')
    with pytest.raises(ValueError, match=":1:"):
        read_pose_file(path)
