import numpy as np
import pytest

from flowdepth import io
from flowdepth.cli import format_ablation, main, mask_ablation
from flowdepth.pipeline import OUTPUT_FILES


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def plane_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("plane")
    assert main(["synth", "plane", "--out", str(d)]) == 0
    return d


def _pipeline_args(d, out, *extra):
    return [
        "pipeline",
        "--image1", d / "image1.ppm",
        "--image2", d / "image2.ppm",
        "--features1", d / "features1.pfm",
        "--features2", d / "features2.pfm",
        "--hybrid", d / "hybrid.pfm",
        "--camera", d / "camera.txt",
        "--out", out,
        *extra,
    ]  # fmt: skip


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["pipeline"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1


def test_pipeline_help_documents_missing_attributes(capsys):
    with pytest.raises(SystemExit):
        main(["pipeline", "--help"])
    text = capsys.readouterr().out
    assert "Only Gaussian centers are produced" in text


def test_pipeline_writes_outputs_and_is_deterministic(plane_dir, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, *_pipeline_args(plane_dir, a, "--r-min", 6))[0] == 0
    assert _run(capsys, *_pipeline_args(plane_dir, b, "--r-min", 6))[0] == 0
    for name in OUTPUT_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    pts = io.read_points(a / "centers.txt")
    assert pts.shape == (64 * 64, 3)
    np.testing.assert_allclose(pts[:, 2], 2.0, rtol=1e-6)
    losses = io.parse_kv((a / "losses.txt").read_text())
    assert set(losses) >= {"census", "smooth1", "smooth2", "total"}


def test_pipeline_zero_baseline_passthrough(tmp_path, capsys):
    d = tmp_path / "scene"
    assert main(["synth", "plane", "--baseline", "0", "--out", str(d)]) == 0
    code, _, _ = _run(capsys, *_pipeline_args(d, tmp_path / "out"))
    assert code == 0
    assert not io.read_pfm(tmp_path / "out" / "dflow_valid.pfm").any()
    np.testing.assert_array_equal(io.read_pfm(tmp_path / "out" / "drefine.pfm"), io.read_pfm(d / "hybrid.pfm"))


def test_pipeline_missing_file_exit_2(plane_dir, tmp_path, capsys):
    args = _pipeline_args(plane_dir, tmp_path / "o")
    args[2] = tmp_path / "missing.ppm"
    code, _, err = _run(capsys, *args)
    assert code == 2 and "error" in err


def test_pipeline_shape_mismatch_exit_2(plane_dir, tmp_path, capsys):
    io.write_pfm(tmp_path / "small.pfm", np.ones((8, 8)))
    args = _pipeline_args(plane_dir, tmp_path / "o")
    args[args.index(plane_dir / "hybrid.pfm")] = tmp_path / "small.pfm"
    code, _, _ = _run(capsys, *args)
    assert code == 2


def test_eval_examples(tmp_path, capsys):
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    io.write_ppm(tmp_path / "a.ppm", img)
    code, out, _ = _run(capsys, "eval", "image", tmp_path / "a.ppm", tmp_path / "a.ppm")
    assert code == 0 and out.strip() == "psnr=inf ssim=1.0"

    io.write_pfm(tmp_path / "gt.pfm", np.ones((4, 4)))
    io.write_pfm(tmp_path / "pred.pfm", np.full((4, 4), 1.2))
    _, out, _ = _run(capsys, "eval", "depth", tmp_path / "pred.pfm", tmp_path / "gt.pfm")
    assert out.strip() == "abs_rel=0.2 delta1=1.0"
    _, out, _ = _run(capsys, "eval", "depth", tmp_path / "pred.pfm", tmp_path / "gt.pfm", "--percent")
    assert io.parse_kv(out)["abs_rel"] == "20.0"


def test_eval_shape_mismatch(tmp_path, capsys):
    io.write_pfm(tmp_path / "a.pfm", np.ones((4, 4)))
    io.write_pfm(tmp_path / "b.pfm", np.ones((4, 5)))
    assert _run(capsys, "eval", "depth", tmp_path / "a.pfm", tmp_path / "b.pfm")[0] == 2


def test_eval_validation_failure_exit_3(tmp_path, capsys):
    io.write_pfm(tmp_path / "a.pfm", np.zeros((4, 4)))
    assert _run(capsys, "eval", "depth", tmp_path / "a.pfm", tmp_path / "a.pfm")[0] == 3


def test_ablate_masks_table(capsys):
    code, out, _ = _run(capsys, "ablate-masks", "--seed", 0)
    assert code == 0
    for row in ("fb-consistency", "depth-flow", "feature-correlation"):
        assert row in out
    assert _run(capsys, "ablate-masks", "--seed", 0)[1] == out
    assert mask_ablation(0)["feature-correlation"]["agreement"] >= 0.95
    assert format_ablation(mask_ablation(0)).splitlines()[0].split() == ["method", "precision", "recall", "agreement"]


def test_gradcheck_command(capsys):
    code, out, _ = _run(capsys, "gradcheck", "--instances", 1, "--size", 7)
    assert code == 0
    lines = out.strip().splitlines()
    assert all(line.startswith("PASS ") and "max_dev=" in line for line in lines)
    assert len(lines) == 13
