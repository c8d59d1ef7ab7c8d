import numpy as np
import pytest
import yaml

from hrcplan.config import ConfigError, apply_overrides, default_config_text, from_dict, load_config
from hrcplan.perception import PoseFrame, standing_skeleton, write_pose_file


def default_data():
    return yaml.safe_load(default_config_text())


def issues_of(data, base_dir=None):
    with pytest.raises(ConfigError) as exc:
        from_dict(data, base_dir)
    return exc.value.issues


def test_shipped_default_is_valid():
    cfg = load_config()
    assert cfg.scenario.id == "S2"
    assert cfg.apf.tau == 20.0 and cfg.apf.d_th == 0.5
    assert cfg.sim.window_frames == 30 and cfg.sim.horizon_steps == 10
    assert cfg.planner.goal_bias == 0.1 and cfg.planner.t_max == 2.0
    assert cfg.seed_list() == list(range(20))
    assert cfg.chain is not None and cfg.link_geometry.n_links == 6


def test_negative_tau_named_in_report():
    data = default_data()
    data["apf"]["tau"] = -1
    assert any("tau" in i for i in issues_of(data))


def test_five_row_dh_table_reported(tmp_path):
    chain = tmp_path / "arm.yaml"
    chain.write_text("dh:\n" + "".join("  - {a: 0.1, d: 0.1, alpha: 0.0}\n" for _ in range(5)))
    data = default_data()
    data["robot"]["chain"] = "arm.yaml"
    issues = issues_of(data, tmp_path)
    assert any("6 rows" in i and "5" in i for i in issues)


def test_missing_chain_file_reported(tmp_path):
    data = default_data()
    data["robot"]["chain"] = "nowhere.yaml"
    assert any("not found" in i for i in issues_of(data, tmp_path))


def test_non_positive_radius_reported():
    data = default_data()
    data["human"]["limb_radius"] = 0.0
    assert any("radi" in i for i in issues_of(data))


def test_unknown_keys_reported():
    data = default_data()
    data["planner"]["goal_bais"] = 0.2
    data["extra"] = 1
    issues = issues_of(data)
    assert any("goal_bais" in i for i in issues)
    assert any("extra" in i for i in issues)


def test_all_issues_collected_at_once():
    data = default_data()
    data["apf"]["tau"] = -1
    data["sim"]["dt"] = 0
    data["scenario"]["id"] = "S9"
    assert len(issues_of(data)) >= 3


def test_s3_preset_adds_occlusions():
    cfg = load_config().with_scenario("S3")
    assert cfg.scenario.id == "S3"
    assert any(set(w.joints) >= {"LAEL", "LWPS"} for w in cfg.scenario.occlusions)
    assert any(len(w.joints) == 15 for w in cfg.scenario.occlusions)


def test_overrides_take_precedence():
    cfg = apply_overrides(load_config(), tau=12.0, d_th=0.6, walk_speed=1.1, seeds=[3, 4])
    assert (cfg.apf.tau, cfg.apf.d_th, cfg.scenario.walk_speed) == (12.0, 0.6, 1.1)
    assert cfg.seed_list() == [3, 4]
    with pytest.raises(ConfigError):
        apply_overrides(load_config(), tau=-2.0)


def _recording(tmp_path, t0, t1):
    s = standing_skeleton(root=(-1.5, 1.5, 0.0))
    frames = [PoseFrame(float(t), s) for t in np.arange(t0, t1 + 1e-9, 0.5)]
    path = tmp_path / "rec.jsonl"
    write_pose_file(path, frames)
    return path


def test_custom_recording_must_cover_trial(tmp_path):
    _recording(tmp_path, 0.0, 10.0)
    data = default_data()
    data["scenario"] = {"id": "custom", "recording": "rec.jsonl"}
    data["sim"]["duration"] = 20.0
    assert any("cover" in i for i in issues_of(data, tmp_path))


def test_custom_recording_accepted_when_covering(tmp_path):
    _recording(tmp_path, -3.0, 20.0)
    data = default_data()
    data["scenario"] = {"id": "custom", "recording": "rec.jsonl"}
    data["sim"]["duration"] = 20.0
    cfg = from_dict(data, tmp_path)
    assert cfg.scenario.recording == str(tmp_path / "rec.jsonl")


def test_invalid_yaml_is_config_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("apf: {tau: [\n")
    with pytest.raises(ConfigError):
        load_config(p)
