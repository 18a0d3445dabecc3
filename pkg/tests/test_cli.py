import json
import subprocess
import sys

import numpy as np
import pytest

from gkcmn.cli import main
from gkcmn.io import read_gktn, write_gktn
from gkcmn.pipeline import GKCMNWeights, ModelConfig, forward, save_weights, synthetic_features


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def tube(t0, t1, box=(10, 20, 60, 90), **extra):
    return {"t_start": t0, "t_end": t1, "boxes": [dict(zip(("x1", "y1", "x2", "y2"), box), t=t) for t in range(t0, t1)], **extra}


def video(vid, t0, t1, T=10, box=(10, 20, 60, 90)):
    return {"id": vid, "num_frames": T, "frame_height": 112, "frame_width": 112, "tube": tube(t0, t1, box)}


def write(path, videos):
    path.write_text(json.dumps({"videos": videos}))
    return path


# -- encode-targets ---------------------------------------------------------------


def test_encode_targets_shapes_and_sigma(tmp_path, capsys):
    ann = write(tmp_path / "a.json", [video("v1", 2, 5)])
    code, out, _ = run(capsys, "encode-targets", "--annotations", ann, "--out", tmp_path / "o")
    assert code == 0 and json.loads(out)["videos"][0]["id"] == "v1"
    d = tmp_path / "o" / "v1"
    assert read_gktn(d / "heatmaps.gktn").shape == (10, 16, 16)
    assert read_gktn(d / "size_targets.gktn").shape == (10, 4, 16, 16)
    assert read_gktn(d / "mask.gktn").shape == (10, 16, 16)
    side = json.loads((d / "targets.json").read_text())
    assert side["sigma_mode"] == "adaptive" and len(side["frames"]) == 3
    run(capsys, "encode-targets", "--annotations", ann, "--sigma", "fixed:2.0", "--out", tmp_path / "f")
    side = json.loads((tmp_path / "f" / "v1" / "targets.json").read_text())
    assert side["sigma_mode"] == "fixed" and {f["sigma"] for f in side["frames"]} == {2.0}


def test_encode_targets_deterministic(tmp_path, capsys):
    ann = write(tmp_path / "a.json", [video("v1", 0, 4)])
    for name in ("x", "y"):
        run(capsys, "encode-targets", "--annotations", ann, "--out", tmp_path / name)
    for f in ("heatmaps.gktn", "size_targets.gktn", "mask.gktn", "targets.json"):
        assert (tmp_path / "x" / "v1" / f).read_bytes() == (tmp_path / "y" / "v1" / f).read_bytes()


def test_encode_targets_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"videos": [\n  {"id": "v1",}\n]}')
    code, out, err = run(capsys, "encode-targets", "--annotations", bad, "--out", tmp_path / "o")
    assert code == 2 and out == "" and "line 2" in err
    missing = write(tmp_path / "m.json", [{"id": "v9", "num_frames": 3}])
    code, _, err = run(capsys, "encode-targets", "--annotations", missing, "--out", tmp_path / "o")
    assert code == 2 and "frame_height" in err
    v = video("v7", 0, 3)
    v["tube"]["boxes"].pop()
    code, _, err = run(capsys, "encode-targets", "--annotations", write(tmp_path / "i.json", [v]), "--out", tmp_path / "o")
    assert code == 3 and "v7" in err
    code, _, err = run(capsys, "encode-targets", "--annotations", write(tmp_path / "j.json", [video("v8", 0, 2, box=(0, 0, 200, 10))]), "--out", tmp_path / "o")
    assert code == 3 and "v8" in err
    with pytest.raises(SystemExit) as e:
        main(["encode-targets", "--annotations", str(bad), "--sigma", "fixed:-1", "--out", "x"])
    assert e.value.code == 2


# -- eval ------------------------------------------------------------------------------


def test_eval_self_is_perfect(tmp_path, capsys):
    gt = write(tmp_path / "gt.json", [video("a", 0, 4), video("b", 3, 9)])
    code, out, _ = run(capsys, "eval", "--gt", gt, "--pred", gt)
    assert code == 0
    assert json.loads(out) == {"m_tiou": 1.0, "m_viou": 1.0, "viou_at": {"0.3": 1.0, "0.5": 1.0}, "n_videos": 2}


def test_eval_hand_built_corpus(tmp_path, capsys):
    gt = write(tmp_path / "gt.json", [video("a", 2, 6), video("b", 0, 3)])
    pred = write(tmp_path / "p.json", [video("a", 4, 8), video("b", 0, 3)])
    rep = json.loads(run(capsys, "eval", "--gt", gt, "--pred", pred)[1])
    assert rep["m_tiou"] == pytest.approx(2 / 3) and rep["m_viou"] == pytest.approx(2 / 3)
    assert rep["viou_at"] == {"0.3": 1.0, "0.5": 0.5}


def test_eval_temporal_gt_override(tmp_path, capsys):
    gt = write(tmp_path / "gt.json", [video("a", 2, 6)])
    p = video("a", 6, 9)
    # a prediction may carry boxes beyond its tube; the gt frames are covered here
    p["tube"]["boxes"] = [dict(x1=10, y1=20, x2=60, y2=90, t=t) for t in range(10)]
    pred = write(tmp_path / "p.json", [p])
    plain = json.loads(run(capsys, "eval", "--gt", gt, "--pred", pred)[1])
    assert plain["m_viou"] == 0.0
    rep = json.loads(run(capsys, "eval", "--gt", gt, "--pred", pred, "--temporal-gt")[1])
    assert rep["m_viou"] == 1.0 and rep["m_tiou"] == 0.0


def test_eval_id_mismatch(tmp_path, capsys):
    gt = write(tmp_path / "gt.json", [video("a", 0, 2), video("b", 0, 2)])
    pred = write(tmp_path / "p.json", [video("a", 0, 2)])
    code, out, err = run(capsys, "eval", "--gt", gt, "--pred", pred)
    assert code == 3 and out == "" and "'b'" in err


# -- fit-demo ----------------------------------------------------------------------------


def test_fit_demo_heatmap_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "fit-demo", "--demo", "heatmap", "--out", tmp_path / "h")
    s = json.loads(out)
    assert code == 0 and s["converged"] and s["final"] / s["initial"] <= 0.01
    assert json.loads((tmp_path / "h" / "summary.json").read_text()) == s
    rows = (tmp_path / "h" / "loss_curve.csv").read_text().splitlines()
    assert rows[0] == "step,loss" and len(rows) == 2002


def test_fit_demo_same_seed_same_csv(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "fit-demo", "--demo", "sizes", "--steps", "100", "--seed", "4", "--out", tmp_path / name)
    assert (tmp_path / "a" / "loss_curve.csv").read_bytes() == (tmp_path / "b" / "loss_curve.csv").read_bytes()


@pytest.mark.parametrize("demo", ["sizes", "temporal"])
def test_fit_demo_absurd_lr_diverges(tmp_path, capsys, demo):
    code, out, err = run(capsys, "fit-demo", "--demo", demo, "--lr", "1e6", "--out", tmp_path / demo)
    s = json.loads(out)
    assert code == 4 and s["diverged"] and s["step"] == 1 and "step 1" in err


def test_fit_demo_not_converged_exits_4(tmp_path, capsys):
    code, out, _ = run(capsys, "fit-demo", "--demo", "sizes", "--steps", "2", "--out", tmp_path / "s")
    assert code == 4 and json.loads(out)["converged"] is False


# -- gradcheck -------------------------------------------------------------------------


def test_gradcheck_commands(capsys):
    code, out, _ = run(capsys, "gradcheck", "--loss", "focal", "--trials", "100", "--tol", "1e-4")
    assert code == 0 and json.loads(out)["passed"]
    assert run(capsys, "gradcheck", "--loss", "smooth-l1", "--trials", "7")[0] == 0
    code, out, err = run(capsys, "gradcheck", "--loss", "boundary", "--trials", "3", "--tol", "1e-12")
    assert code == 5 and "worst" in err and not json.loads(out)["passed"]


# -- forward ---------------------------------------------------------------------------


def features(tmp_path, seed=0):
    v, s = synthetic_features(seed, T=6)
    d = tmp_path / "feats"
    d.mkdir(exist_ok=True)
    write_gktn(d / "visual.gktn", v)
    write_gktn(d / "sentence.gktn", s)
    return d, v, s


def test_forward_zero_weights(tmp_path, capsys):
    d, _, _ = features(tmp_path)
    manifest = save_weights(GKCMNWeights.zeros(32, 32), tmp_path / "w")
    code, _, _ = run(capsys, "forward", "--features", d, "--weights", manifest, "--out", tmp_path / "o")
    assert code == 0
    assert np.all(read_gktn(tmp_path / "o" / "heatmaps.gktn") == 0.5)
    assert not read_gktn(tmp_path / "o" / "size_raw.gktn").any()
    assert np.all(read_gktn(tmp_path / "o" / "scores.gktn") == 0.5)


def test_forward_matches_library(tmp_path, capsys):
    d, v, s = features(tmp_path, 1)
    cfg = {"c1": 8, "c2": 8, "candidate_scheme": {"scales": [2, 6], "stride_fraction": 0.5}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    run(capsys, "forward", "--features", d, "--config", tmp_path / "cfg.json", "--seed", "5", "--out", tmp_path / "o")
    config = ModelConfig.from_dict(cfg)
    ref = forward(read_gktn(d / "visual.gktn"), read_gktn(d / "sentence.gktn"), GKCMNWeights.random(32, 32, config, seed=5), config)
    assert np.array_equal(read_gktn(tmp_path / "o" / "heatmaps.gktn"), ref.spatial.heatmaps.astype(np.float32))
    pred = json.loads((tmp_path / "o" / "prediction.json").read_text())["videos"][0]["tube"]
    assert (pred["t_start"], pred["t_end"]) == (ref.tube.start, ref.tube.end)


def test_forward_shape_mismatch(tmp_path, capsys):
    d, _, _ = features(tmp_path)
    write_gktn(d / "sentence.gktn", np.ones((3, 4, 5), np.float32))
    code, _, err = run(capsys, "forward", "--features", d, "--out", tmp_path / "o")
    assert code == 3 and "sentence" in err
    d2, _, _ = features(tmp_path)
    manifest = save_weights(GKCMNWeights.zeros(16, 32), tmp_path / "w16")
    code, _, err = run(capsys, "forward", "--features", d2, "--weights", manifest, "--out", tmp_path / "o")
    assert code == 3 and "visual" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gkcmn", "gradcheck", "--loss", "smooth-l1", "--trials", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["passed"]
    proc = subprocess.run([sys.executable, "-m", "gkcmn", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == ""
