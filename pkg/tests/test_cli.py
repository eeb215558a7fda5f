import json

import numpy as np
import pytest

from microsplat.cli import build_parser, main, resolve_config
from microsplat.scene import Scene, load_scene, logit, save_scene

FAST = ["--phase1-iters", "12", "--phase2-iters", "12", "--phase3-iters", "6", "--window", "5",
        "--densify-interval", "4", "--prune-interval", "4", "--graph-refresh", "3",
        "--feature-dim", "8", "--hidden-dim", "8", "--knn-k", "3", "--neighborhood-size", "3"]


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen-scene", "--kind", "random-blobs", "--count", "40", "--views", "4",
                 "--size", "16", "--out", str(out)]) == 0
    return out


def test_metrics_identical(tmp_path, generated, capsys):
    img = generated / "images" / "view_000.png"
    assert main(["metrics", str(img), str(img), "--json", str(tmp_path / "m.json")]) == 0
    assert capsys.readouterr().out.strip() == "PSNR 100.00 SSIM 1.0000"
    assert json.loads((tmp_path / "m.json").read_text())["psnr"] == 100.0


def test_prune_example(tmp_path):
    scene = Scene(np.zeros((2, 3)), np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)),
                  logit(np.array([0.01, 0.5])), np.full((2, 3), 0.5))
    save_scene(scene, tmp_path / "in.ply")
    assert main(["prune", str(tmp_path / "in.ply"), "--threshold", "0.05", "-o", str(tmp_path / "out.ply")]) == 0
    assert len(load_scene(tmp_path / "out.ply")) == 1


def test_train_twice_is_byte_identical(tmp_path, generated):
    args = ["train", "--scene", str(generated / "initial.ply"), "--cameras", str(generated / "cameras.json"),
            "--images", str(generated / "images"), "--seed", "0", *FAST]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "trace.csv", "config.json", "scene.ply"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["phase1_iters"] == 12
    assert manifest["inputs"]["scene"].endswith("initial.ply")


def test_render_and_gsdo_post(tmp_path, generated):
    assert main(["render", str(generated / "teacher.ply"), "--cameras", str(generated / "cameras.json"),
                 "-o", str(tmp_path / "r")]) == 0
    assert main(["metrics", str(tmp_path / "r"), str(generated / "images")]) == 0
    assert main(["render", str(generated / "teacher.ply"), "--cameras", str(generated / "cameras.json"),
                 "--view", "2", "-o", str(tmp_path / "one.png")]) == 0
    assert (tmp_path / "one.png").exists()
    assert main(["gsdo-post", "--scene", str(generated / "initial.ply"), "--cameras",
                 str(generated / "cameras.json"), "--images", str(generated / "images"),
                 "--iters", "4", *FAST, "--out", str(tmp_path / "post")]) == 0
    report = json.loads((tmp_path / "post" / "report.json").read_text())
    assert report["phase_boundaries"] == [4]


def test_flag_beats_file_beats_default(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lambda_c": 0.5, "tau": 0.02, "threads": 3}))
    parser = build_parser()
    monkeypatch.delenv("MICROSPLAT_THREADS", raising=False)
    args = parser.parse_args(["train", "--config", str(cfg), "--lambda-c", "0.25", "--out", "x"])
    resolved = resolve_config(args)
    assert resolved.lambda_c == 0.25 and resolved.tau == 0.02 and resolved.window == 500
    assert resolved.threads == 3
    monkeypatch.setenv("MICROSPLAT_THREADS", "2")
    assert resolve_config(args).threads == 2
    args = parser.parse_args(["train", "--config", str(cfg), "--threads", "4", "--out", "x"])
    assert resolve_config(args).threads == 4


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", "x", "--no-such-flag"])
    assert exc.value.code == 2


def test_io_and_validation_errors_exit_1(tmp_path, generated, capsys):
    assert main(["prune", str(tmp_path / "missing.ply"), "-o", str(tmp_path / "o.ply")]) == 1
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"not_a_key": 1}')
    assert main(["train", "--synthetic", "box-room", "--config", str(bad), "--out", str(tmp_path / "t")]) == 1
    assert main(["train", "--scene", str(generated / "initial.ply"), "--out", str(tmp_path / "t")]) == 1
    a = generated / "images" / "view_000.png"
    small = tmp_path / "small.ppm"
    small.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    assert main(["metrics", str(a), str(small)]) == 1


def test_check_grad(capsys):
    assert main(["check-grad", "--points", "4", "--size", "8", "--seed", "3"]) == 0
    assert capsys.readouterr().out.startswith("seed 3: PASS")


def test_ablate_writes_table(tmp_path):
    assert main(["ablate", "--synthetic", "random-blobs", "--count", "30", "--views", "4", "--size", "16",
                 *FAST, "--out", str(tmp_path / "abl")]) == 0
    rows = json.loads((tmp_path / "abl" / "ablation.json").read_text())["rows"]
    assert len([r for r in rows if r["group"] == "ladder"]) == 6
    assert (tmp_path / "abl" / "ablation.csv").exists()
