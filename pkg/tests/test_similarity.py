import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppwarp.errors import DegenerateConfiguration, EmptyInput, NoStructureFound
from ppwarp.geometry import Homography, SimilarityTransform
from ppwarp.matches import CorrespondenceSet
from ppwarp.similarity import (
    InlierGroup,
    RansacConfig,
    fit_similarity,
    segment_correspondences,
    select_index,
    select_optimal_similarity,
    transfer_residuals,
)
from ppwarp.synthetic import generate_scene, two_plane_spec

from util import map_points, random_homography


def _lstsq_similarity(src, dst):
    # independent oracle: linear parametrization x' = a x - b y + tx, y' = b x + a y + ty
    n = len(src)
    A = np.zeros((2 * n, 4))
    A[0::2] = np.column_stack([src[:, 0], -src[:, 1], np.ones(n), np.zeros(n)])
    A[1::2] = np.column_stack([src[:, 1], src[:, 0], np.zeros(n), np.ones(n)])
    a, b, tx, ty = np.linalg.lstsq(A, dst.reshape(-1), rcond=None)[0]
    return math.hypot(a, b), math.atan2(b, a), tx, ty


def test_identity_pairs():
    p = np.array([[0.0, 0.0], [3.0, 1.0], [5.0, 7.0]])
    s = fit_similarity(p, p)
    assert s.scale == pytest.approx(1.0, abs=1e-12)
    assert s.angle == pytest.approx(0.0, abs=1e-12)
    assert abs(s.tx) < 1e-12 and abs(s.ty) < 1e-12


def test_quarter_turn():
    src = np.array([[1.0, 0.0], [0.0, 2.0], [-3.0, 1.0], [2.0, -2.0], [4.0, 5.0]])
    dst = src @ np.array([[0.0, -1.0], [1.0, 0.0]]).T
    s = fit_similarity(src, dst)
    assert abs(s.angle - math.pi / 2) < 1e-12
    assert abs(s.scale - 1.0) < 1e-12


def test_scale_and_shift():
    src = np.random.default_rng(0).uniform(-50, 50, (12, 2))
    dst = 2.0 * src + [10.0, -3.0]
    s = fit_similarity(src, dst)
    np.testing.assert_allclose([s.scale, s.angle, s.tx, s.ty], [2.0, 0.0, 10.0, -3.0], atol=1e-10)


def test_matches_linear_least_squares_on_noisy_data():
    rng = np.random.default_rng(1)
    src = rng.uniform(0, 300, (40, 2))
    truth = SimilarityTransform(1.3, 0.4, 20.0, -7.0)
    dst = truth.apply(src) + rng.normal(0, 2.0, src.shape)
    s = fit_similarity(src, dst)
    np.testing.assert_allclose([s.scale, s.angle, s.tx, s.ty], _lstsq_similarity(src, dst), rtol=1e-9, atol=1e-9)


def test_beats_grid_search():
    rng = np.random.default_rng(2)
    src = rng.uniform(0, 10, (6, 2))
    dst = rng.uniform(0, 10, (6, 2))
    s = fit_similarity(src, dst)
    best = np.sum((s.apply(src) - dst) ** 2)
    for k in np.linspace(0.2, 2.0, 19):
        for a in np.linspace(-math.pi, math.pi, 37):
            cand = SimilarityTransform(k, a)
            # optimal translation for fixed k, a is the centroid difference
            t = dst.mean(0) - cand.apply(src).mean(0)
            r = np.sum((cand.apply(src) + t - dst) ** 2)
            assert best <= r + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 100, (10, 2))
    dst = rng.uniform(0, 100, (10, 2))
    perm = rng.permutation(10)
    a = fit_similarity(src, dst)
    b = fit_similarity(src[perm], dst[perm])
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)


def test_coincident_targets_rejected():
    with pytest.raises(DegenerateConfiguration):
        fit_similarity(np.ones((5, 2)), np.random.default_rng(0).uniform(size=(5, 2)))


def test_symmetric_transfer_error():
    src = np.array([[0.0, 0.0], [10.0, 10.0]])
    r = transfer_residuals(np.eye(3), src, src + [3.0, 4.0])
    np.testing.assert_allclose(r, math.sqrt(50.0))
    h = random_homography(np.random.default_rng(3))
    pts = np.random.default_rng(4).uniform(0, 400, (20, 2))
    assert np.max(transfer_residuals(h, pts, map_points(h, pts))) < 1e-8


def _cs(t, r, size=(400, 300)):
    return CorrespondenceSet(np.arange(len(t)), t, r, size, size)


def test_single_structure_gives_one_group():
    rng = np.random.default_rng(5)
    h = np.array([[1.0, 0.05, 30.0], [-0.02, 1.1, 5.0], [1e-4, -5e-5, 1.0]])
    t = rng.uniform(20, 250, (80, 2))
    groups = segment_correspondences(_cs(t, map_points(h, t)))
    assert len(groups) == 1
    assert groups[0].size == 80


def test_two_plane_fixture_segments():
    scene = generate_scene(two_plane_spec())
    groups = segment_correspondences(scene.correspondences)
    assert len(groups) == 2
    ids = [set(g.member_ids.tolist()) for g in groups]
    assert not ids[0] & ids[1]
    for g in groups:
        assert g.size >= 50
        lab = scene.labels[np.isin(scene.correspondences.ids, g.member_ids)]
        assert np.bincount(lab).max() / g.size >= 0.95


def test_random_pairs_give_no_structure():
    rng = np.random.default_rng(6)
    h = np.array([[1.0, 0.0, 20.0], [0.0, 1.0, 10.0], [0.0, 0.0, 1.0]])
    t = rng.uniform(0, 300, (30, 2))
    r = map_points(h, t)
    t = np.vstack([t, rng.uniform(0, 1, (200, 2)) * [400, 300]])
    r = np.vstack([r, rng.uniform(0, 1, (200, 2)) * [400, 300]])
    with pytest.raises(NoStructureFound):
        segment_correspondences(_cs(t, r), RansacConfig(min_inliers_delta=50))


def test_too_few_pairs():
    t = np.random.default_rng(7).uniform(0, 100, (20, 2))
    with pytest.raises(NoStructureFound):
        segment_correspondences(_cs(t, t))


def test_deterministic_under_seed():
    cs = generate_scene(two_plane_spec()).correspondences
    a = segment_correspondences(cs, RansacConfig(rng_seed=11))
    b = segment_correspondences(cs, RansacConfig(rng_seed=11))
    assert [g.member_ids.tolist() for g in a] == [g.member_ids.tolist() for g in b]
    assert all(np.array_equal(x.model.m, y.model.m) for x, y in zip(a, b))


def _group(rot, size):
    s = SimilarityTransform(1.0, rot)
    return InlierGroup(np.arange(size), Homography.identity(), s, s.rotation_magnitude)


def test_select_smallest_rotation():
    groups = [_group(0.30, 60), _group(-0.05, 60), _group(0.22, 60)]
    assert select_optimal_similarity(groups) is groups[1].similarity
    assert select_index([_group(0.4, 70)]) == 0


def test_select_tie_prefers_larger_then_earlier():
    assert select_index([_group(0.1, 55), _group(0.1, 80)]) == 1
    assert select_index([_group(0.1, 60), _group(0.1, 60)]) == 0


def test_select_empty():
    with pytest.raises(EmptyInput):
        select_optimal_similarity([])


def test_rotation_magnitude_folds():
    assert SimilarityTransform(1.0, -0.3).rotation_magnitude == pytest.approx(0.3)
    assert SimilarityTransform(1.0, 2 * math.pi + 0.2).rotation_magnitude == pytest.approx(0.2)
