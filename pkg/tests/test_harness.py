import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from gensemcom.codec import iou
from gensemcom.errors import ConfigurationError, ValidationError
from gensemcom.harness import (METRICS_COLUMNS, ScenarioConfig, background_texture, config_from_dict, detect_boxes,
                               generate_scene, load_config, make_dataset, run_case_study, run_fl_experiment,
                               run_scheduler_experiment)
from gensemcom.harness.cli import main

TINY = {
    "seeds": [0], "model": {"hidden": 16},
    "train": {"local_steps": 20, "cluster_steps": 20, "local_dataset": 16, "cluster_dataset_per_user": 8,
              "log_every": 10},
    "case_study": {"scenes_per_cell": 2},
    "fl": {"rounds": 2, "steps_per_round": 2, "hidden": 8, "dataset_per_client": 8, "eval_per_client": 4},
    "scheduler": {"instances": 4},
    "encode_offload": {"drift_draws": 1, "frozen_L": [1], "episodes": 20, "eval_steps": 20},
}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_scene_empty_and_deterministic():
    s = generate_scene(np.random.default_rng(0), 1, box_count_range=(0, 0))
    assert s.semantics.boxes == [] and np.array_equal(s.image, background_texture(1))
    a = generate_scene(np.random.default_rng(3), 2, shading=0.1)
    b = generate_scene(np.random.default_rng(3), 2, shading=0.1)
    assert np.array_equal(a.image, b.image) and a.semantics == b.semantics


def test_generate_scene_validation():
    with pytest.raises(ValidationError):
        generate_scene(np.random.default_rng(0), 0, box_count_range=(2, 1))
    with pytest.raises(ValidationError):
        generate_scene(np.random.default_rng(0), 0, box_px_range=(3, 20))
    with pytest.raises(ValidationError):
        generate_scene(np.random.default_rng(0), 0, box_count_range=(30, 30), box_px_range=(6, 6))


def test_contrast_margin_holds():
    rng = np.random.default_rng(1)
    for bg in range(4):
        s = generate_scene(rng, bg, box_count_range=(1, 4))
        tex = background_texture(bg)
        for b in s.semantics.boxes:
            y0, x0, y1, x1 = (round(v * 16) for v in (b.y_min, b.x_min, b.y_max, b.x_max))
            assert np.all(np.abs(s.image[y0:y1, x0:x1] - tex[y0:y1, x0:x1]) >= 0.25)


def test_detect_closed_loop():
    rng = np.random.default_rng(2)
    for i in range(200):
        bg = i % 4
        s = generate_scene(rng, bg, box_count_range=(0, 4), shading=0.1)
        found = detect_boxes(s.image, bg)
        assert len(found) == s.semantics.num_boxes
        for t in s.semantics.boxes:
            assert max(iou(t, d) for d in found) >= 0.8
    assert detect_boxes(background_texture(0), 0) == []


def test_make_dataset_shapes():
    scenes, images, conds = make_dataset(np.random.default_rng(0), 0, 5)
    assert images.shape == (5, 16, 16) and conds.shape == (5, 20) and len(scenes) == 5


def test_config_defaults_and_overrides(tmp_path):
    cfg = ScenarioConfig()
    assert cfg.model.T == 1000 and cfg.max_offload == 650 and cfg.offload_options == (0, 350, 650)
    assert cfg.scene.image_size == (16, 16) and len(cfg.seeds) == 10
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"snr_db": [5], "fl": {"rounds": 3}}))
    loaded = load_config(p)
    assert loaded.snr_db == (5,) and loaded.fl.rounds == 3 and loaded.fl.hidden == cfg.fl.hidden
    assert config_from_dict(json.loads(cfg.to_json())) == cfg
    assert cfg.with_seed(4).seeds == (4,)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        config_from_dict({"sneds": [1]})
    with pytest.raises(ConfigurationError):
        config_from_dict({"seeds": []})
    with pytest.raises(ConfigurationError):
        config_from_dict({"offload_options": [350]})
    with pytest.raises(ConfigurationError):
        config_from_dict({"fl": {"rounds": 1, "bogus": 2}})
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")


def test_case_study_columns_and_bit_assertion(tmp_path):
    cfg = config_from_dict(TINY)
    rows = _rows(run_case_study(cfg, tmp_path))
    assert list(rows[0]) == METRICS_COLUMNS
    assert len(rows) == 3 * 3 * 3
    for r in rows:
        assert 0.0 <= float(r["iou_mean"]) <= 1.0
        assert np.isfinite(float(r["psnr_db"]))
    zero = [r for r in rows if r["offload_steps"] == "0" and r["user"] == "0"]
    assert len({(r["iou_mean"], r["psnr_db"]) for r in zero}) == 1


def test_case_study_without_models_and_training_disabled(tmp_path):
    cfg = replace(config_from_dict(TINY), train_if_missing=False)
    with pytest.raises(ConfigurationError):
        run_case_study(cfg, tmp_path)


def test_fl_zero_rounds_emits_initial_only(tmp_path):
    cfg = config_from_dict({**TINY, "fl": {**TINY["fl"], "rounds": 0}})
    rows = _rows(run_fl_experiment(cfg, tmp_path))
    assert {r["round"] for r in rows} == {"0"}
    assert [r["client_id"] for r in rows] == ["user0", "user1", "user2", "cluster"]


def test_scheduler_flags_instances_over_cap(tmp_path):
    cfg = config_from_dict({**TINY, "scheduler": {"instances": 3, "search_cap": 10}})
    rows = _rows(run_scheduler_experiment(cfg, tmp_path))
    assert all(r["flag"] == "sequential_only" and r["brute_utility"] == "" for r in rows)


def test_scheduler_single_user_and_zero_lambda_gap(tmp_path):
    for sched in ({"instances": 10, "num_users": 1}, {"instances": 10, "lam": 0.0}):
        cfg = config_from_dict({**TINY, "scheduler": sched})
        rows = _rows(run_scheduler_experiment(cfg, tmp_path))
        assert all(float(r["gap"]) == 0.0 for r in rows)


def test_scheduler_measured_instance(tmp_path):
    cs = tmp_path / "cs.csv"
    with open(cs, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for u in range(3):
            for k, q in ((0, 0.9), (350, 0.8), (650, 0.6)):
                w.writerow([0, u, 10.0, k, q, 20.0, 1.0])
    cfg = config_from_dict({**TINY, "scheduler": {"instances": 1, "quality_csv": str(cs)}})
    rows = _rows(run_scheduler_experiment(cfg, tmp_path / "o"))
    assert [r["kind"] for r in rows] == ["random", "measured"]


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown_key": 1}')
    assert main(["scheduler", "--config", str(bad), "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err
    noc = tmp_path / "nomodel.json"
    noc.write_text(json.dumps({**TINY, "train_if_missing": False}))
    assert main(["case-study", "--config", str(noc), "--out", str(tmp_path / "x")]) != 0
    good = tmp_path / "good.json"
    good.write_text(json.dumps(TINY))
    assert main(["scheduler", "--config", str(good), "--out", str(tmp_path / "s"), "--seed-override", "3"]) == 0
    assert {r["seed"] for r in _rows(tmp_path / "s" / "scheduler.csv")} == {"3"}
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_cli_plot(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(TINY))
    assert main(["fl", "--config", str(good), "--out", str(tmp_path)]) == 0
    assert main(["plot", "--out", str(tmp_path)]) == 0
    svg = (tmp_path / "fl_losses.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg
