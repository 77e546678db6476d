import json

import numpy as np
import pytest

from keyview.cli import main
from keyview.dataset_io import read_checkpoint, read_pfm, read_schedule, write_checkpoint
from keyview.field_model import init_params
from keyview.trainer import TrainConfig

TINY = {"depth": 2, "width": 8, "head_width": 4, "l_pos": 2, "l_dir": 1}


def test_synth_counts(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--views", "7", "--size", "12", "--test-views", "2"]) == 0
    assert len(list((tmp_path / "s" / "train").glob("*.png"))) == 7
    meta = json.loads((tmp_path / "s" / "transforms_train.json").read_text())
    assert len(meta["frames"]) == 7 and "camera_angle_x" in meta


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--views", "4", "--size", "10", "--seed", "5"]) == 0
    files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()]
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)


def test_synth_zero_views(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "s"), "--views", "0"]) == 2
    assert "views" in capsys.readouterr().err


def test_select_views(small_scene_dir, tmp_path, capsys):
    out = tmp_path / "sched.json"
    assert main(["select-views", "--scene", str(small_scene_dir), "--k", "5", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    k_min = doc["k_min"]
    assert f"K_min = {k_min}" in capsys.readouterr().out
    assert doc["selected"] == doc["order"][:5]
    assert sorted(doc["order"]) == list(range(12))
    sched = read_schedule(out)
    assert main(["select-views", "--scene", str(small_scene_dir), "--k", str(k_min),
                 "--out", str(tmp_path / "min.json")]) == 0
    assert json.loads((tmp_path / "min.json").read_text())["selected"] == list(sched.order[:k_min])


def test_select_views_k_below_minimum(small_scene_dir, tmp_path, capsys):
    code = main(["select-views", "--scene", str(small_scene_dir), "--k", "1", "--out", str(tmp_path / "s.json")])
    assert code == 2
    assert "K_min" in capsys.readouterr().err


def test_select_views_infeasible(small_scene_dir, tmp_path):
    scene = tmp_path / "wide"
    scene.mkdir()
    for f in small_scene_dir.rglob("*"):
        if f.is_file():
            dest = scene / f.relative_to(small_scene_dir)
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(f.read_bytes())
    side = json.loads((scene / "scene.json").read_text())
    side["bounds"] = [[-20, -20, -20], [20, 20, 20]]
    (scene / "scene.json").write_text(json.dumps(side))
    assert main(["select-views", "--scene", str(scene), "--k", "3", "--out", str(tmp_path / "s.json")]) == 3


def test_entropy(small_scene_dir, tmp_path):
    out = tmp_path / "e.pfm"
    assert main(["entropy", "--scene", str(small_scene_dir), "--view", "0", "--window", "5",
                 "--bins", "32", "--out", str(out)]) == 0
    em = read_pfm(out)
    assert em.shape == (16, 16) and em.min() >= 0
    assert out.with_suffix(".pgm").exists()


def test_entropy_even_window(small_scene_dir, tmp_path):
    assert main(["entropy", "--scene", str(small_scene_dir), "--view", "0", "--window", "8",
                 "--out", str(tmp_path / "e.pfm")]) == 2


def test_missing_scene(tmp_path):
    assert main(["entropy", "--scene", str(tmp_path / "nope"), "--view", "0", "--out", str(tmp_path / "e.pfm")]) == 4


def test_train_zero_iterations(small_scene_dir, tmp_path):
    cfg = {"scene": str(small_scene_dir), "out": str(tmp_path / "run"),
           "train": dict(TINY, n_iter=0, k=4, seed=3)}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    ck = read_checkpoint(tmp_path / "run" / "checkpoint.bin")
    init = init_params(TrainConfig(**TINY).arch, seed=3)
    assert np.array_equal(ck.flat(), init.flat())


def test_train_bad_config(small_scene_dir, tmp_path):
    (tmp_path / "cfg.json").write_text("{")
    assert main(["train", "--config", str(tmp_path / "cfg.json")]) == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"scene": str(small_scene_dir), "train": {"bogus": 1}}))
    assert main(["train", "--config", str(tmp_path / "cfg.json")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 4


def test_train_render_eval(small_scene_dir, tmp_path, capsys):
    cfg = {"scene": str(small_scene_dir), "out": str(tmp_path / "run"), "eval_split": "test",
           "train": dict(TINY, n_iter=4, k=4, batch_size=32, log_every=2, eval_every=4),
           "render": {"n_samples": 8}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,psnr" and len(lines) == 3
    ckpt = str(tmp_path / "run" / "checkpoint.bin")
    assert main(["render", "--ckpt", ckpt, "--scene", str(small_scene_dir), "--pose", "1",
                 "--samples", "8", "--out", str(tmp_path / "r.png")]) == 0
    assert (tmp_path / "r.png").exists()
    assert main(["eval", "--ckpt", ckpt, "--scene", str(small_scene_dir), "--views", "0,1",
                 "--samples", "8", "--lpips", "0.2", "--out-json", str(tmp_path / "e.json")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert rep["lpips"] == 0.2 and rep["avg"] is not None


def test_eval_identical_fixture(tmp_path):
    # a field that is empty everywhere renders pure background; so does the fixture
    from keyview.dataset_io import SyntheticSpec, generate_synthetic_scene
    spec = SyntheticSpec(sphere_radius=1e-9, disc_radius=0.0)
    generate_synthetic_scene(tmp_path / "s", n_views=2, size=12, seed=0, n_test=2, spec=spec)
    params = init_params(TrainConfig(**TINY).arch, seed=0)
    for k in params.arrays:
        params.arrays[k][:] = 0
    params.arrays["sigma.b"][:] = -200.0
    write_checkpoint(tmp_path / "c.bin", params)
    assert main(["eval", "--ckpt", str(tmp_path / "c.bin"), "--scene", str(tmp_path / "s"),
                 "--out-json", str(tmp_path / "e.json")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert rep["psnr"] == float("inf") and rep["ssim"] == pytest.approx(1.0)


def test_render_bad_pose(small_scene_dir, tmp_path):
    write_checkpoint(tmp_path / "c.bin", init_params(TrainConfig(**TINY).arch))
    assert main(["render", "--ckpt", str(tmp_path / "c.bin"), "--scene", str(small_scene_dir),
                 "--pose", "99", "--out", str(tmp_path / "r.png")]) == 2


def test_missing_checkpoint(small_scene_dir, tmp_path):
    assert main(["render", "--ckpt", str(tmp_path / "none.bin"), "--scene", str(small_scene_dir),
                 "--pose", "0", "--out", str(tmp_path / "r.png")]) == 4
