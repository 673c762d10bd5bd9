import numpy as np
import pytest

from ppwarp.combine import BlendWeights, combine_warps
from ppwarp.errors import DimensionMismatch, IoError, UnboundedCanvas, UnsupportedFormat
from ppwarp.geometry import Homography, SimilarityTransform
from ppwarp.mdlt import build_mesh, global_field
from ppwarp.raster import (
    EDGE_TOL,
    Canvas,
    blend_average,
    compute_canvas,
    fill_nearest,
    psnr,
    rasterize_cells,
    read_image,
    warp_homography,
    warp_reference,
    warp_target,
    write_image,
)
from ppwarp.synthetic import texture

from util import map_points


def _field(local, size=(100, 100), n=4, beta=0.0, sim=SimilarityTransform(1.0, 0.0)):
    mesh = build_mesh(size, n, n)
    return combine_warps(global_field(Homography.from_matrix(local), mesh), sim, BlendWeights.constant(n * n, beta))


def _smooth(h, w):
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return texture(xs * 1.7, ys * 1.7)


def test_identity_canvas():
    c = compute_canvas(_field(np.eye(3)), (100, 100), (100, 100))
    assert c.bounds == (0.0, 0.0, 100.0, 100.0)
    assert (c.width, c.height, c.offset) == (100, 100, (0, 0))


def test_translated_target_canvas():
    t = np.eye(3)
    t[0, 2] = 50.0
    c = compute_canvas(_field(t), (100, 100), (100, 100))
    assert c.bounds == (0.0, 0.0, 150.0, 100.0)


def test_scaled_canvas_matches_corner_mapping():
    sim = SimilarityTransform(2.0, 0.3, 7.0, -4.0)
    f = _field(np.eye(3), beta=1.0, sim=sim)
    c = compute_canvas(f, (100, 100), (100, 100))
    corners = np.array([[0, 0], [100, 0], [100, 100], [0, 100]], dtype=float)
    # with beta = 1 both images are mapped by the similarity
    q = map_points(sim.matrix, corners)
    np.testing.assert_allclose(c.bounds, [*q.min(0), *q.max(0)], atol=1e-9)
    assert c.width == int(np.ceil(q[:, 0].max()) - np.floor(q[:, 0].min()))


def test_canvas_rejects_points_at_infinity():
    h = np.eye(3)
    h[2, 0] = -0.02  # x = 50 goes to infinity
    with pytest.raises(UnboundedCanvas):
        compute_canvas(_field(h), (100, 100), (100, 100))


def test_canvas_size_cap():
    with pytest.raises(UnboundedCanvas):
        Canvas.from_bounds((0, 0, 1e6, 10))


def test_identity_warp_is_bit_exact():
    img = np.random.default_rng(0).uniform(size=(40, 50, 3))
    out, mask = warp_homography(img, np.eye(3), Canvas.from_bounds((0, 0, 50, 40)))
    assert mask[:40, :50].all()
    assert np.array_equal(out, img)


def test_half_pixel_translation_on_ramp():
    ramp = np.tile(np.arange(60, dtype=float) / 59.0, (20, 1))
    h = np.eye(3)
    h[0, 2] = 10.5
    out, mask = warp_homography(ramp, h, Canvas.from_bounds((0, 0, 80, 20)))
    cols = np.arange(80)
    valid = (cols - 10.5 >= 0) & (cols - 10.5 <= 59)
    assert np.array_equal(mask[0], valid)
    np.testing.assert_allclose(out[:, valid], np.tile((cols[valid] - 10.5) / 59.0, (20, 1)), atol=1e-12)


def test_mask_is_exact_preimage_test():
    img = np.full((30, 40), 0.5)
    h = np.array([[1.1, 0.2, 3.0], [-0.1, 0.9, 5.0], [1e-3, 5e-4, 1.0]])
    c = Canvas.from_bounds((-10, -10, 70, 60))
    _, mask = warp_homography(img, h, c)
    g = c.grid().reshape(-1, 2)
    pre = map_points(np.linalg.inv(h), g)
    t = EDGE_TOL
    inside = (pre[:, 0] >= -t) & (pre[:, 0] <= 39 + t) & (pre[:, 1] >= -t) & (pre[:, 1] <= 29 + t)
    np.testing.assert_array_equal(mask.ravel(), inside)


def test_round_trip_psnr():
    img = _smooth(160, 200)
    h = np.array([[1.05, 0.04, 12.0], [-0.03, 0.97, 6.0], [2e-4, -1e-4, 1.0]])
    corners = map_points(h, np.array([[0, 0], [199, 0], [199, 159], [0, 159]], float))
    c = Canvas.from_bounds((*corners.min(0), *corners.max(0)))
    fwd, fmask = warp_homography(img, h, c)
    # canvas pixels -> source pixels undoes (offset shift) . h
    shift = np.array([[1.0, 0, c.offset[0]], [0, 1.0, c.offset[1]], [0, 0, 1.0]])
    undo = np.linalg.inv(shift @ h)
    back_canvas = Canvas.from_bounds((0, 0, 200, 160))
    back, mask = warp_homography(fwd, undo, back_canvas)
    # only pixels whose four bilinear neighbours were forward-valid
    support, _ = warp_homography(fmask.astype(float), undo, back_canvas)
    sel = mask & (support == 1.0)
    sel[:2], sel[-2:], sel[:, :2], sel[:, -2:] = False, False, False, False
    assert sel.mean() > 0.9
    assert psnr(back[sel], img[sel]) > 40.0


def test_samples_stay_in_unit_range():
    img = np.random.default_rng(1).uniform(size=(30, 30))
    out, _ = warp_homography(img, [[0.9, 0.3, 2.0], [0.1, 1.2, -3.0], [1e-3, 0, 1.0]], Canvas.from_bounds((-5, -5, 50, 50)))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_rasterize_ties_to_lower_cell():
    f = _field(np.eye(3))
    owner = rasterize_cells(f.target_matrices, f.mesh, Canvas.from_bounds((0, 0, 101, 101)))
    assert owner[10, 25] == 0  # x = 25 is shared by cells 0 and 1
    assert owner[10, 26] == 1
    assert owner[100, 100] == 15
    assert (owner >= 0).all()


def test_fill_nearest():
    owner = np.full((5, 5), -1, dtype=np.int32)
    owner[0, 0], owner[4, 4] = 3, 7
    filled = fill_nearest(owner)
    assert filled[1, 0] == 3 and filled[3, 4] == 7
    assert (filled >= 0).all()


def test_field_warps_with_identity_local():
    img = _smooth(100, 100)
    f = _field(np.eye(3))
    c = compute_canvas(f, (100, 100), (100, 100))
    a, ma = warp_target(img, f, c)
    b, mb = warp_reference(img, f, c)
    assert np.array_equal(a, img) and np.array_equal(b, img)
    assert ma[:, :100].all() and mb[:, :100].all()


def test_blend_average():
    a = np.full((4, 4), 0.2)
    b = np.full((4, 4), 0.6)
    yes, no = np.ones((4, 4), bool), np.zeros((4, 4), bool)
    assert np.array_equal(blend_average(a, yes, b, no), a)
    np.testing.assert_allclose(blend_average(a, yes, b, yes), 0.4)
    assert np.all(blend_average(a, no, b, no) == 0)
    rgb = np.random.default_rng(2).uniform(size=(4, 4, 3))
    assert np.array_equal(blend_average(rgb, yes, rgb, yes), rgb)
    m = np.random.default_rng(3).uniform(size=(4, 4)) > 0.5
    assert np.array_equal(blend_average(a, m, b, ~m), blend_average(b, ~m, a, m))
    with pytest.raises(DimensionMismatch):
        blend_average(a, yes, np.zeros((4, 5)), np.ones((4, 5), bool))


@pytest.mark.parametrize("ext,shape", [(".png", (7, 9, 3)), (".png", (7, 9)), (".ppm", (5, 6, 3)), (".pgm", (5, 6))])
def test_image_round_trip(tmp_path, ext, shape):
    img = np.random.default_rng(4).uniform(size=shape)
    p = tmp_path / f"x{ext}"
    write_image(p, img)
    back = read_image(p)
    assert back.shape == shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_white_pixel(tmp_path):
    write_image(tmp_path / "w.png", np.ones((1, 1, 3)))
    assert read_image(tmp_path / "w.png")[0, 0, 0] == 1.0


def test_pgm_known_bytes(tmp_path):
    p = tmp_path / "k.pgm"
    p.write_bytes(b"P5\n3 1\n255\n" + bytes([0, 51, 255]))
    np.testing.assert_array_equal(read_image(p), [[0.0, 0.2, 1.0]])


def test_io_errors(tmp_path):
    with pytest.raises(UnsupportedFormat):
        write_image(tmp_path / "x.bmp", np.zeros((2, 2)))
    with pytest.raises(UnsupportedFormat):
        write_image(tmp_path / "x.pgm", np.zeros((2, 2, 3)))
    with pytest.raises(IoError):
        read_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(UnsupportedFormat):
        read_image(tmp_path / "junk.png")
