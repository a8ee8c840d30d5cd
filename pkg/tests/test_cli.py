import hashlib
from pathlib import Path

import numpy as np
import pytest

from depthlayers import cli
from depthlayers.cli import colorize, main, read_report
from depthlayers.fileio import (load_depth, read_dataset, save_depth, save_instances, save_mask,
                                save_rgb, write_json)

SMALL = ["--set", "train.widths=4,4,4", "--set", "train.low_channels=2", "--set", "train.batch=2",
         "--set", "train.patch=16"]


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["generate", "--seed", "3", "--count", "6", "--out", str(root),
                 "--set", "generate.size=16"]) == 0
    return root


def test_generate_is_byte_identical_across_runs_and_workers(tmp_path, dataset):
    other = tmp_path / "again"
    assert main(["generate", "--seed", "3", "--count", "6", "--out", str(other), "--workers", "2",
                 "--set", "generate.size=16"]) == 0
    assert tree_digest(other) == tree_digest(dataset)


def test_generate_with_config_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(f"[paths]\ndata = {tmp_path / 'd'}\n[generate]\ncount = 2\nsize = 16\n")
    assert main(["generate", "--config", str(ini)]) == 0
    assert len(read_dataset(tmp_path / "d")) == 2


def _train(tmp_path, dataset, *extra):
    return main(["train", "--data", str(dataset), "--iters", "6", "--checkpoint-every", "2",
                 "--set", f"paths.checkpoint={tmp_path / 'm.dlyr'}",
                 "--set", f"paths.output={tmp_path}", *SMALL, *extra])


def test_train_resume_is_bit_exact(tmp_path, dataset):
    full, part = tmp_path / "full", tmp_path / "part"
    full.mkdir(), part.mkdir()
    assert _train(full, dataset, "--stage", "1") == 0
    # interrupted run: stop after 4 of 6 iterations, then resume
    assert main(["train", "--data", str(dataset), "--iters", "6", "--checkpoint-every", "2",
                 "--set", f"paths.checkpoint={part / 'm.dlyr'}", "--set", f"paths.output={part}",
                 *SMALL, "--stage", "1"]) == 0
    from depthlayers.toynet import load_checkpoint, save_checkpoint
    p, st, meta = load_checkpoint(full / "m.dlyr")
    assert meta["iteration"] == 6
    # rebuild a mid-run checkpoint from a 4-iteration prefix of the same schedule
    from depthlayers.config import loads
    from depthlayers.toynet import ModelParams, run_stage
    from depthlayers.toynet.model import Architecture
    cfg = loads("", [s for s in SMALL if s != "--set"])
    data = read_dataset(dataset)
    params = ModelParams.init(Architecture(cfg.train.widths, cfg.train.low_channels), seed=0)
    res = run_stage("stage1", cfg.train, data, params, 6, stop=4)
    save_checkpoint(part / "m.dlyr", res.params, res.state,
                    {"stage": 1, "iteration": 4, "iters": 6, "shape": [16, 16], "seed": 0})
    assert _train(part, dataset, "--stage", "1", "--resume") == 0
    assert (part / "m.dlyr").read_bytes() == (full / "m.dlyr").read_bytes()
    assert (part / "loss_stage1.csv").read_text() == (full / "loss_stage1.csv").read_text()


def test_train_twice_identical(tmp_path, dataset):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert _train(a, dataset) == 0
    assert _train(b, dataset) == 0
    assert (a / "m.dlyr").read_bytes() == (b / "m.dlyr").read_bytes()
    assert (a / "loss_stage2.csv").read_text() == (b / "loss_stage2.csv").read_text()


def test_stage2_without_stage1_is_usage_error(tmp_path, dataset):
    assert _train(tmp_path, dataset, "--stage", "2") == 1
    assert _train(tmp_path, dataset, "--stage", "2", "--from-scratch") == 0


@pytest.fixture
def single(tmp_path, dataset):
    s = read_dataset(dataset)[0]
    save_depth(s.perturbed, tmp_path / "d.pfm")
    save_rgb(tmp_path / "rgb.png", s.rgb)
    save_mask(tmp_path / "m.png", s.mask)
    save_instances(tmp_path / "i.png", s.mask.astype(int))
    save_depth(s.depth, tmp_path / "gt.pfm")
    return tmp_path, s


def test_refine_identity_is_bit_exact(single):
    root, s = single
    for guide in (["--mask", str(root / "m.png")], ["--instances", str(root / "i.png")]):
        assert main(["refine", "--depth", str(root / "d.pfm"), "--rgb", str(root / "rgb.png"), *guide,
                     "--backend", "identity", "--out", str(root / "r.pfm")]) == 0
        assert np.array_equal(load_depth(root / "r.pfm").values, load_depth(root / "d.pfm").values)


def test_refine_emit_layers_merge_back(single):
    root, s = single
    assert main(["refine", "--depth", str(root / "d.pfm"), "--rgb", str(root / "rgb.png"),
                 "--mask", str(root / "m.png"), "--backend", "propagation", "--emit-layers",
                 "--out", str(root / "r.pfm")]) == 0
    l1, l2 = load_depth(root / "r.layer1.pfm").values, load_depth(root / "r.layer2.pfm").values
    merged = load_depth(root / "r.pfm").values
    assert np.array_equal(merged, np.where(s.mask > 0.5, l1, l2))


def test_refine_keeps_invalid_pixels_invalid(single):
    root, s = single
    d = s.perturbed.copy()
    d[2:4, 2:4] = np.nan
    save_depth(d, root / "holes.pfm")
    assert main(["refine", "--depth", str(root / "holes.pfm"), "--rgb", str(root / "rgb.png"),
                 "--mask", str(root / "m.png"), "--backend", "propagation", "--out", str(root / "r.pfm")]) == 0
    out = load_depth(root / "r.pfm").values
    assert np.isnan(out[2:4, 2:4]).all() and np.isfinite(out).sum() == d.size - 4


def test_evaluate_perfect_prediction_scores_zero(single):
    root, _ = single
    rep = root / "rep.json"
    assert main(["evaluate", "--pred", str(root / "gt.pfm"), "--gt", str(root / "gt.pfm"),
                 "--instances", str(root / "i.png"), "--out", str(rep)]) == 0
    data = read_report(rep)
    r = data["images"][0]["report"]
    assert r.rmse == 0 and r.mbe == 0 and r.whdr == 0
    assert data["aggregate"]["mbe"] == 0


def test_evaluate_dataset_workers_and_sweep(tmp_path, dataset):
    outs = []
    for workers in ("1", "2"):
        out = tmp_path / f"w{workers}" / "report.json"
        assert main(["evaluate", "--dataset", str(dataset), "--backend", "propagation", "--sweep",
                     "--workers", workers, "--set", "sweep.ks=0,3", "--out", str(out)]) == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert (outs[0].parent / "sweep.csv").read_text() == (outs[1].parent / "sweep.csv").read_text()
    sweep = read_report(outs[0])["sweep"]
    assert set(sweep) == {"opening", "closing"} and set(sweep["opening"]) == {"0", "3"}


def test_evaluate_count_mismatch_is_data_error(tmp_path, single):
    root, _ = single
    preds = tmp_path / "preds"
    preds.mkdir()
    save_depth(np.ones((16, 16)), preds / "a.pfm")
    save_depth(np.ones((16, 16)), preds / "b.pfm")
    assert main(["evaluate", "--pred", str(preds), "--gt", str(root / "gt.pfm"),
                 "--instances", str(root / "i.png"), "--out", str(tmp_path / "r.json")]) == 2


def test_viz_outputs(single):
    root, s = single
    out = root / "viz"
    assert main(["viz", "--depth", str(root / "gt.pfm"), "--initial", str(root / "gt.pfm"),
                 "--gt", str(root / "gt.pfm"), "--rgb", str(root / "rgb.png"), "--ply",
                 "--out", str(out)]) == 0
    from PIL import Image
    imp = np.asarray(Image.open(out / "improvement.png"))
    assert (imp == imp[0, 0]).all()
    assert np.array_equal(imp[0, 0], colorize(np.zeros(1), "RdBu", -1, 1)[0])
    assert f"element vertex {s.depth.size}" in (out / "cloud.ply").read_text()


def test_magma_luminance_is_monotone():
    rgb = colorize(np.linspace(0, 10, 64), "magma", 0, 10).astype(float)
    lum = rgb @ [0.2126, 0.7152, 0.0722]
    assert np.all(np.diff(lum) >= -1.0)
    assert lum[-1] > lum[0]


@pytest.mark.parametrize("argv,code", [
    (["bogus"], 1),
    ([], 1),
    (["generate", "--config", "/nonexistent.ini"], 1),
    (["generate", "--set", "run.backend=magic"], 1),
    (["train", "--data", "/nonexistent"], 2),
    (["evaluate", "--pred", "x"], 1),
])
def test_exit_codes(argv, code):
    assert main(argv) == code


def test_refine_without_guide_is_usage_error(single):
    root, _ = single
    assert main(["refine", "--depth", str(root / "d.pfm"), "--rgb", str(root / "rgb.png"),
                 "--out", str(root / "r.pfm")]) == 1


def test_corrupt_depth_is_data_error(single):
    root, _ = single
    (root / "bad.pfm").write_bytes(b"Pf\n3 3\n-1.0\n")
    assert main(["refine", "--depth", str(root / "bad.pfm"), "--rgb", str(root / "rgb.png"),
                 "--mask", str(root / "m.png"), "--backend", "identity", "--out", str(root / "r.pfm")]) == 2


def test_non_finite_model_output_is_numeric_failure(single, monkeypatch):
    root, _ = single

    class Broken:
        def refine_layer(self, depth, rgb, mask):
            return np.full(depth.shape, np.nan)

    monkeypatch.setattr(cli, "_make_backend", lambda *a, **k: Broken())
    assert main(["refine", "--depth", str(root / "d.pfm"), "--rgb", str(root / "rgb.png"),
                 "--mask", str(root / "m.png"), "--out", str(root / "r.pfm")]) == 3


def test_propagation_refine_matches_golden(tmp_path):
    data = Path(__file__).parent / "data"
    out = tmp_path / "r.pfm"
    assert main(["refine", "--depth", str(data / "twoplane_depth.pfm"), "--rgb", str(data / "twoplane_rgb.png"),
                 "--mask", str(data / "twoplane_mask.png"), "--backend", "propagation", "--out", str(out)]) == 0
    assert out.read_bytes() == (data / "twoplane_propagation.pfm").read_bytes()
    assert oct(out.stat().st_mode & 0o777) != "0o600"


@pytest.mark.slow
def test_stage1_loss_trend(tmp_path, dataset):
    assert main(["train", "--data", str(dataset), "--stage", "1", "--iters", "2000",
                 "--set", f"paths.checkpoint={tmp_path / 'm.dlyr'}", "--set", f"paths.output={tmp_path}",
                 "--set", "train.patch=16"]) == 0
    import csv
    with open(tmp_path / "loss_stage1.csv") as fh:
        loss = np.array([float(r["total"]) for r in csv.DictReader(fh)])
    assert len(loss) == 2000
    windows = loss.reshape(10, 200).mean(axis=1)
    assert windows[-1] < 0.5 * windows[0]


def test_generate_from_user_masks(tmp_path):
    masks = tmp_path / "masks"
    ring = np.zeros((32, 32))
    ring[6:26, 6:26] = 1
    ring[12:20, 12:20] = 0
    save_mask(masks / "a.png", ring)
    assert main(["generate", "--count", "3", "--out", str(tmp_path / "d"), "--set", "generate.size=16",
                 "--set", f"paths.masks={masks}"]) == 0
    samples = read_dataset(tmp_path / "d")
    expected = ring[1::2, 1::2]
    assert all(s.kind == "user" and np.array_equal(s.mask, expected) for s in samples)
    save_mask(masks / "a.png", np.zeros((8, 8)))
    assert main(["generate", "--count", "1", "--out", str(tmp_path / "e"),
                 "--set", f"paths.masks={masks}"]) == 2
