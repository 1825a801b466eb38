import json
import subprocess
import sys

import numpy as np
import pytest

from synquad.cli import build_parser, run
from synquad.pose_prior import load_corpus, load_model

SUBCOMMANDS = ["gait-corpus", "train-prior", "calibrate-filter", "sample-poses", "generate",
               "stylize", "eval-pck", "compare", "overlay"]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_every_flag(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_usage_errors():
    assert run(["no-such-thing"]) == 1
    assert run(["gait-corpus", "--bogus", "1"]) == 1
    assert run(["train-prior"]) == 1  # missing --corpus
    assert run([]) == 1


def test_exit_codes_via_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "synquad.cli", "eval-pck", "--gt", str(tmp_path / "x"), "--pred", "y"],
                       capture_output=True, text=True)
    assert r.returncode == 1 and r.stdout == ""


def test_full_workflow(tmp_path, capsys):
    csv, model, filt = tmp_path / "poses.csv", tmp_path / "prior.npz", tmp_path / "filter.json"
    assert run(["gait-corpus", "--n", "200", "--seed", "2", "--out", str(csv)]) == 0
    assert load_corpus(csv).shape == (200, 36)
    hist = tmp_path / "hist.json"
    argv = ["train-prior", "--corpus", str(csv), "--epochs", "20", "--batch", "128", "--lr", "0.001",
            "--w-kl", "0.005", "--w-rec", "0.01", "--hidden", "64,32", "--history", str(hist), "--out", str(model)]
    assert run(argv) == 0
    assert load_model(model).hidden_dims == (64, 32)
    assert len(json.loads(hist.read_text())["rec"]) == 20
    png = tmp_path / "hist.png"
    assert run(["calibrate-filter", "--model", str(model), "--samples", "2000", "--histogram", str(png), "--out", str(filt)]) == 0
    assert png.stat().st_size > 0
    err = capsys.readouterr().err
    assert "N(0, 1I)" in err and "N(0, 2I)" in err
    sampled = tmp_path / "s.csv"
    assert run(["sample-poses", "--model", str(model), "--filter", str(filt), "--n", "20", "--out", str(sampled)]) == 0
    assert load_corpus(sampled).shape == (20, 36)


def test_train_prior_is_rerun_identical(tmp_path):
    csv = tmp_path / "p.csv"
    run(["gait-corpus", "--n", "50", "--out", str(csv)])
    for k in range(2):
        argv = ["train-prior", "--corpus", str(csv), "--epochs", "3", "--batch", "16", "--hidden", "16"]
        assert run(argv + ["--out", str(tmp_path / f"m{k}.npz")]) == 0
    assert (tmp_path / "m0.npz").read_bytes() == (tmp_path / "m1.npz").read_bytes()
    # oversized batch is a validation error
    assert run(["train-prior", "--corpus", str(csv), "--epochs", "1", "--out", str(tmp_path / "m.npz")]) == 1


@pytest.fixture(scope="module")
def generated(pipeline_files, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert run(["generate", "--config", str(pipeline_files / "gen.json"), "--seed", "7", "--out", str(out)]) == 0
    return out


def test_generate_twice_identical(generated, pipeline_files, tmp_path):
    out = tmp_path / "ds2"
    assert run(["generate", "--config", str(pipeline_files / "gen.json"), "--seed", "7", "--out", str(out)]) == 0
    for f in ("manifest.json", "annotations/train.json", "images/000003.png"):
        assert (out / f).read_bytes() == (generated / f).read_bytes()
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["master_seed"] == 7


def test_generate_env_output_dir(pipeline_files, tmp_path, monkeypatch):
    monkeypatch.setenv("SYNQUAD_OUTPUT_DIR", str(tmp_path / "env_out"))
    assert run(["generate", "--config", str(pipeline_files / "gen.json"), "--n-images", "2"]) == 0
    assert (tmp_path / "env_out" / "manifest.json").is_file()


def test_eval_pck_gt_equals_pred(generated, capsys):
    val = generated / "annotations" / "train.json"
    report = generated / "r.json"
    assert run(["eval-pck", "--gt", str(val), "--pred", str(val), "--json", str(report)]) == 0
    assert "mean PCK 1.000" in capsys.readouterr().out
    assert run(["compare", "--a", str(report), "--b", str(report)]) == 0
    assert "+0.0000" in capsys.readouterr().out


def test_overlay_and_stylize(generated, pipeline_files, tmp_path):
    ann = generated / "annotations" / "train.json"
    image_id = json.loads(ann.read_text())["images"][0]["id"]
    out = tmp_path / "ov.png"
    assert run(["overlay", "--annotations", str(ann), "--image-id", str(image_id), "--out", str(out)]) == 0
    assert out.stat().st_size > 0
    assert run(["overlay", "--annotations", str(ann), "--image-id", "99999", "--out", str(out)]) == 1

    from synquad.renderer import RasterImage, RenderConfig, render_pose
    from synquad.skeleton import Camera, load_skeleton

    cam = Camera((0.5, 5.0, -0.35), (0.5, 0.0, -0.35), 300.0, (256, 256))
    img, mask = render_pose(load_skeleton(), np.zeros(36), cam, RenderConfig())
    img.save(tmp_path / "c.png")
    mask.save(tmp_path / "c_mask.png")
    bg = sorted((pipeline_files / "backgrounds").glob("*.png"))[0]
    for k in range(2):
        assert run(["stylize", "--content", str(tmp_path / "c.png"), "--mask", str(tmp_path / "c_mask.png"),
                    "--background", str(bg), "--alpha", "0.5", "--out", str(tmp_path / f"s{k}.png")]) == 0
    assert (tmp_path / "s0.png").read_bytes() == (tmp_path / "s1.png").read_bytes()
    assert run(["stylize", "--content", str(tmp_path / "c.png"), "--background", str(bg), "--alpha", "0",
                "--out", str(tmp_path / "a0.png")]) == 0
    out0 = RasterImage.load(tmp_path / "a0.png").pixels
    assert np.array_equal(out0[mask.mask, :3], img.pixels[mask.mask, :3])
    assert run(["stylize", "--content", str(tmp_path / "c.png"), "--background", str(bg), "--alpha", "2"]) == 1
