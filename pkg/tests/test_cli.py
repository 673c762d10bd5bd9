import numpy as np
import pytest

from ppwarp.cli import main, read_config_file
from ppwarp.matches import CorrespondenceSet, save_correspondences
from ppwarp.raster import read_image, to_uint8, write_image
from ppwarp.synthetic import FIXTURES, format_scene_spec, texture


def _kv(path):
    out = {}
    for line in path.read_text().splitlines():
        k, v = line.split(" = ")
        out[k] = float(v)
    return out


@pytest.fixture(scope="module")
def two_plane(tmp_path_factory):
    d = tmp_path_factory.mktemp("two")
    assert main(["synth", "two-plane", "--out", str(d)]) == 0
    return d


def test_synth_writes_scene(two_plane):
    for name in ("target.png", "reference.png", "matches.txt", "labels.txt", "scene.txt"):
        assert (two_plane / name).is_file()
    assert read_image(two_plane / "target.png").shape == (300, 400, 3)


def test_identity_stitch(tmp_path):
    ys, xs = np.mgrid[0:120, 0:160].astype(float)
    img = texture(xs, ys)
    write_image(tmp_path / "a.png", img)
    pts = np.random.default_rng(0).uniform([0, 0], [160, 120], (60, 2))
    save_correspondences(CorrespondenceSet(np.arange(60), pts, pts, (160, 120), (160, 120)), tmp_path / "m.txt")
    out = tmp_path / "out.png"
    rc = main(["stitch", str(tmp_path / "a.png"), str(tmp_path / "a.png"), str(tmp_path / "m.txt"), "--out", str(out), "--grid", "10x10"])
    assert rc == 0
    assert np.array_equal(to_uint8(read_image(out)), to_uint8(img))


def test_stitch_diagnostics(two_plane, tmp_path):
    out = tmp_path / "s.png"
    args = [str(two_plane / n) for n in ("target.png", "reference.png", "matches.txt")]
    assert main(["stitch", *args, "--out", str(out), "--diagnostics", "--labels", str(two_plane / "labels.txt")]) == 0
    for suffix in ("_alpha.png", "_beta.png", "_mesh.png", "_groups.txt", "_eval.txt"):
        assert (tmp_path / f"s{suffix}").is_file()
    alpha = read_image(tmp_path / "s_alpha.png")
    beta = read_image(tmp_path / "s_beta.png")
    assert alpha.shape == (40, 40)
    assert np.all(np.abs(alpha + beta - 1.0) <= 1 / 255 + 1e-12)
    groups = (tmp_path / "s_groups.txt").read_text()
    assert "groups = 2" in groups and groups.count("selected=yes") == 1
    assert _kv(tmp_path / "s_eval.txt")["overlap_rmse"] < 1.0


def test_modes_compared_by_eval(two_plane, tmp_path):
    assert main(["eval", str(two_plane / "scene.txt"), "--out", str(tmp_path)]) == 0
    r = _kv(tmp_path / "report.kv")
    assert r["global-only.overlap_rmse"] > r["proposed.overlap_rmse"]
    assert r["proposed.nonoverlap_similarity_gap"] < r["mdlt-only.nonoverlap_similarity_gap"]
    assert (tmp_path / "report.txt").read_text().startswith(" ")


def test_eval_single_plane_within_noise(tmp_path):
    spec = tmp_path / "single.txt"
    spec.write_text(format_scene_spec(FIXTURES["single-plane"]()))
    assert main(["eval", str(spec), "--out", str(tmp_path / "r")]) == 0
    r = _kv(tmp_path / "r" / "report.kv")
    # reference-side noise of 0.5 px per axis alone gives 0.71 px per pair
    for mode in ("proposed", "mdlt-only", "global-only"):
        assert r[f"{mode}.overlap_rmse"] < 2 * 0.5 * np.sqrt(2)


def test_eval_is_deterministic(two_plane, tmp_path):
    for k in ("a", "b"):
        assert main(["eval", str(two_plane / "scene.txt"), "--out", str(tmp_path / k), "--grid", "20x20"]) == 0
    for name in ("report.kv", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_malformed_spec(tmp_path, capsys):
    spec = tmp_path / "bad.txt"
    spec.write_text("target_size = 400x300\nplane = 1 2 | 3\n")
    assert main(["eval", str(spec), "--out", str(tmp_path / "r")]) == 3
    assert "error [synthetic]: line 2" in capsys.readouterr().err


def test_exit_codes(two_plane, tmp_path, capsys):
    args = [str(two_plane / n) for n in ("target.png", "reference.png", "matches.txt")]
    out = ["--out", str(tmp_path / "x.png")]
    assert main(["stitch", *args, *out, "--sigma", "-1"]) == 2
    with pytest.raises(SystemExit) as e:
        main(["stitch", *args, "--grid", "forty"])
    assert e.value.code == 2
    assert main(["stitch", args[0], args[1], str(tmp_path / "missing.txt"), *out]) == 3
    assert main(["stitch", *args, *out, "--min-inliers", "100"]) == 4
    err = capsys.readouterr().err
    assert "error [matches]" in err and "error [similarity]" in err


def test_matches_file_must_match_images(two_plane, tmp_path, capsys):
    small = tmp_path / "small.png"
    write_image(small, np.zeros((10, 10, 3)))
    rc = main(["stitch", str(small), str(two_plane / "reference.png"), str(two_plane / "matches.txt"), "--out", str(tmp_path / "x.png")])
    assert rc == 3
    assert "error [cli]" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# run settings\nsigma = 12.0\ngrid = 20x30\nmode = mdlt-only\n")
    assert read_config_file(cfg) == {"sigma": "12.0", "grid_rows": "20", "grid_cols": "30", "mode": "mdlt-only"}

    from ppwarp.cli import build_parser, config_from_args

    args = build_parser().parse_args(["eval", "x", "--out", "y", "--config", str(cfg), "--sigma", "5"])
    c = config_from_args(args)
    assert (c.sigma, c.grid_rows, c.grid_cols, c.mode) == (5.0, 20, 30, "mdlt-only")
    cfg.write_text("bogus = 1\n")
    assert main(["eval", str(cfg), "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 3
