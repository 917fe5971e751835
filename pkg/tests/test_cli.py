"""End-to-end runs of every subcommand plus the exit-code contract."""

import filecmp
import hashlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from iterseg import netpbm
from iterseg.cli import main
from iterseg.config import parse_config, render_config

TINY_CFG = """\
# small everything: exercises the full pipeline in seconds
patch_size = 16
heatmap_size = 8
num_categories = 3
block_channels = 4, 6, 8
block_strides = 2, 2, 2
head_width = 8
num_stages = 2
stage_steps = 6, 6
batch_size = 4
num_scenes = 10
scene_size = 64
min_instances = 2
max_instances = 3
abut_rate = 0.5
val_fraction = 0.3
infer_iterations = 2
superpixel_count = 40
slic_iterations = 3
seed = 1
data_seed = 3
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One dataset -> train -> infer pipeline shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cliwork")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_CFG)
    cfg = ["--config", str(cfg_path)]

    ds = root / "ds"
    assert main(["generate-data", *cfg, "--out", str(ds)]) == 0
    run = root / "run"
    assert main(["train", *cfg, str(ds), "--out", str(run)]) == 0
    pred = root / "pred"
    assert main(["infer", *cfg, str(run / "final.ckpt"), str(ds),
                 "--out", str(pred)]) == 0
    return {"root": root, "cfg": cfg, "cfg_path": cfg_path,
            "ds": ds, "run": run, "pred": pred}


def test_generate_data_outputs(work):
    ds = work["ds"]
    index = json.loads((ds / "index.json").read_text())
    assert len(index["scenes"]) == 10
    manifest = json.loads((ds / "run_manifest.json").read_text())
    assert manifest["command"] == "generate-data"
    # the dataset id pins the exact index bytes
    index_digest = hashlib.sha256((ds / "index.json").read_bytes()).hexdigest()
    assert manifest["dataset_id"] == index_digest
    # the manifest embeds the effective config and its digest
    cfg = parse_config(manifest["config"])
    assert cfg.num_scenes == 10
    digest = hashlib.sha256(manifest["config"].encode()).hexdigest()
    assert manifest["config_sha256"] == digest
    assert render_config(cfg) == manifest["config"]


def test_refuses_nonempty_out_without_force(work, tmp_path):
    out = tmp_path / "again"
    out.mkdir()
    (out / "leftover.txt").write_text("x")
    rc = main(["generate-data", *work["cfg"], "--out", str(out)])
    assert rc == 2
    rc = main(["generate-data", *work["cfg"], "--out", str(out), "--force"])
    assert rc == 0


def test_train_outputs(work):
    run = work["run"]
    for name in ("stage1.ckpt", "stage2.ckpt", "final.ckpt", "loss.csv"):
        assert (run / name).exists()
    # final model is the last stage snapshot
    assert filecmp.cmp(run / "stage2.ckpt", run / "final.ckpt", shallow=False)
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,stage,loss"
    assert len(lines) == 1 + 12
    stages = [int(l.split(",")[1]) for l in lines[1:]]
    assert stages == [1] * 6 + [2] * 6
    manifest = json.loads((run / "run_manifest.json").read_text())
    assert manifest["checkpoints"] == ["stage1.ckpt", "stage2.ckpt",
                                       "final.ckpt"]


def test_train_is_deterministic(work, tmp_path):
    rc = main(["train", *work["cfg"], str(work["ds"]),
               "--out", str(tmp_path / "run2")])
    assert rc == 0
    assert filecmp.cmp(work["run"] / "final.ckpt",
                       tmp_path / "run2" / "final.ckpt", shallow=False)


def test_train_rejects_mismatched_dataset(work, tmp_path):
    other = work["root"] / "mismatch.cfg"
    other.write_text(TINY_CFG.replace("patch_size = 16", "patch_size = 32")
                     .replace("heatmap_size = 8", "heatmap_size = 16"))
    rc = main(["train", "--config", str(other), str(work["ds"]),
               "--out", str(tmp_path / "run3")])
    assert rc == 5


def test_infer_outputs(work):
    pred = work["pred"]
    index = json.loads((pred / "index.json").read_text())
    assert index["iterations"] == 2
    assert index["superpixels"] is True
    assert len(index["entries"]) > 0
    for entry in index["entries"]:
        region = netpbm.read_pgm(pred / entry["region"])
        assert set(np.unique(region)) <= {0, 255}
        heat = np.load(pred / entry["heat"])
        assert heat.shape == (8, 8)
        assert np.all((heat > 0) & (heat < 1))


def test_infer_is_deterministic(work, tmp_path):
    out = tmp_path / "pred2"
    rc = main(["infer", *work["cfg"], str(work["run"] / "final.ckpt"),
               str(work["ds"]), "--out", str(out)])
    assert rc == 0
    for sub in ("regions", "heat"):
        a = sorted((work["pred"] / sub).iterdir())
        b = sorted((out / sub).iterdir())
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()


def test_infer_trajectory_and_superpixel_toggle(work, tmp_path):
    out = tmp_path / "pred_traj"
    rc = main(["infer", *work["cfg"], str(work["run"] / "final.ckpt"),
               str(work["ds"]), "--out", str(out), "--emit-trajectory",
               "--superpixels", "off"])
    assert rc == 0
    index = json.loads((out / "index.json").read_text())
    assert index["superpixels"] is False
    entry = index["entries"][0]
    traj = np.load(out / entry["trajectory"])
    # flat prior plus one heatmap per refinement iteration
    assert traj.shape == (3, 8, 8)
    np.testing.assert_array_equal(traj[0], np.full((8, 8), 0.5))
    final = np.load(out / entry["heat"])
    np.testing.assert_array_equal(traj[-1], final)


def test_infer_rejects_corrupt_checkpoint(work, tmp_path):
    bad = tmp_path / "bad.ckpt"
    blob = bytearray((work["run"] / "final.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    bad.write_bytes(bytes(blob))
    rc = main(["infer", *work["cfg"], str(bad), str(work["ds"]),
               "--out", str(tmp_path / "p")])
    assert rc == 4
    rc = main(["infer", *work["cfg"], str(tmp_path / "missing.ckpt"),
               str(work["ds"]), "--out", str(tmp_path / "q")])
    assert rc == 4


def test_evaluate_outputs(work, tmp_path):
    out = tmp_path / "eval"
    rc = main(["evaluate", *work["cfg"], str(work["pred"]), str(work["ds"]),
               "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "eval_report.json").read_text())
    assert report["split"] == "val"
    assert set(report["mean_ap"]) == {"0.5", "0.7"}
    for t in ("50", "70"):
        assert any(p.name.startswith(f"pr_t{t}_") for p in out.iterdir())
    for val in report["mean_ap"].values():
        assert val is None or 0.0 <= val <= 1.0


def test_evaluate_scatter_against_baseline(work, tmp_path):
    base = tmp_path / "base_pred"
    rc = main(["infer", *work["cfg"], str(work["run"] / "stage1.ckpt"),
               str(work["ds"]), "--out", str(base)])
    assert rc == 0
    out = tmp_path / "eval_scatter"
    rc = main(["evaluate", *work["cfg"], str(work["pred"]), str(work["ds"]),
               "--out", str(out), "--baseline", str(base)])
    assert rc == 0
    report = json.loads((out / "eval_report.json").read_text())
    frac = report["scatter"]
    total = frac["improved"] + frac["degraded"] + frac["unchanged"]
    assert total == pytest.approx(1.0)
    lines = (out / "scatter.csv").read_text().splitlines()
    assert lines[0] == "det_id,iou_baseline,iou_refined"
    assert len(lines) - 1 == len(json.loads(
        (work["pred"] / "index.json").read_text())["entries"])


def test_evaluate_rejects_foreign_dataset(work, tmp_path):
    ds2 = tmp_path / "ds2"
    rc = main(["generate-data", *work["cfg"], "--seed", "99",
               "--out", str(ds2)])
    assert rc == 0
    rc = main(["evaluate", *work["cfg"], str(work["pred"]), str(ds2),
               "--out", str(tmp_path / "evalx")])
    assert rc == 5


def test_evaluate_rejects_non_prediction_dir(work, tmp_path):
    rc = main(["evaluate", *work["cfg"], str(tmp_path), str(work["ds"]),
               "--out", str(tmp_path / "evaly")])
    assert rc == 2


def test_gradcheck_passes(capsys):
    rc = main(["gradcheck", "--repeat", "2", "--self-test-corrupt"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2
    assert "caught" in out


def test_probe_report(work, tmp_path):
    out = tmp_path / "probe"
    rc = main(["probe", *work["cfg"], str(work["run"] / "final.ckpt"),
               str(work["ds"]), "--out", str(out), "--count", "4"])
    assert rc == 0
    report = json.loads((out / "probe_report.json").read_text())
    mat = np.array(report["mean_distance_matrix"])
    assert mat.shape == (3, 3)
    np.testing.assert_array_equal(np.diag(mat), 0.0)
    assert report["mean_offdiag_distance"] >= 0.0
    assert len(report["patches"]) == 4


def test_missing_config_file_refused(tmp_path):
    rc = main(["generate-data", "--config", str(tmp_path / "none.cfg"),
               "--out", str(tmp_path / "d")])
    assert rc == 2


def test_console_entry_point(tmp_path):
    exe = shutil.which("iterseg")
    cmd = [exe] if exe else [sys.executable, "-c",
                             "import sys; from iterseg.cli import main; "
                             "sys.exit(main())"]
    proc = subprocess.run([*cmd, "gradcheck", "--repeat", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "[PASS]" in proc.stdout
