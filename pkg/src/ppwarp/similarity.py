"""Multi-plane segmentation of correspondences and choice of the global similarity.

Homography RANSAC is run repeatedly: take the largest consensus set, drop
it, and continue on what is left until the consensus falls below
``min_inliers_delta``. Each group gets a least-squares similarity; the one
with the smallest rotation wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, EmptyInput, NoStructureFound
from .geometry import Homography, SimilarityTransform, fit_homography


@dataclass(frozen=True)
class RansacConfig:
    threshold_d: float = 0.01
    min_inliers_delta: int = 50
    max_iterations: int = 2000
    rng_seed: int = 0
    confidence: float = 0.99
    # residuals are divided by the largest side of either image; False = raw pixels
    normalized: bool = True
    refine_rounds: int = 10

    def __post_init__(self):
        if not self.threshold_d > 0:
            raise ValueError(f"threshold_d must be positive, got {self.threshold_d}")
        if self.min_inliers_delta < 4:
            raise ValueError(f"min_inliers_delta must be >= 4, got {self.min_inliers_delta}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True, eq=False)
class InlierGroup:
    member_ids: np.ndarray
    model: Homography
    similarity: SimilarityTransform
    rotation_magnitude: float

    @property
    def size(self):
        return len(self.member_ids)


def fit_similarity(src, dst) -> SimilarityTransform:
    """Closed-form least-squares similarity taking ``src`` onto ``dst``."""
    src = np.atleast_2d(np.asarray(src, dtype=float))
    dst = np.atleast_2d(np.asarray(dst, dtype=float))
    if len(src) < 2 or src.shape != dst.shape:
        raise DegenerateConfiguration("similarity fit needs at least 2 matched pairs", module="similarity")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    var = np.sum(a * a)
    if not var > 0:
        raise DegenerateConfiguration("all target points coincide", module="similarity")
    # 2x2 cross-covariance reduces to a complex product in the plane
    p = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    q = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    angle = math.atan2(q, p)
    scale = math.hypot(p, q) / var
    if not scale > 0:
        raise DegenerateConfiguration("similarity fit collapsed to zero scale", module="similarity")
    c, s = math.cos(angle), math.sin(angle)
    tx = mu_d[0] - scale * (c * mu_s[0] - s * mu_s[1])
    ty = mu_d[1] - scale * (s * mu_s[0] + c * mu_s[1])
    return SimilarityTransform(scale, angle, float(tx), float(ty))


def _project(m, pts):
    h = pts @ m[:2, :2].T + m[:2, 2]
    w = pts @ m[2, :2] + m[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = h / w[:, None]
    out[np.abs(w) < 1e-12] = np.inf
    return out


def transfer_residuals(m, src, dst):
    """Symmetric transfer error ``sqrt(|H s - d|^2 + |H^-1 d - s|^2)`` per pair."""
    minv = np.linalg.inv(m)
    fw = np.sum((_project(m, src) - dst) ** 2, axis=1)
    bw = np.sum((_project(minv, dst) - src) ** 2, axis=1)
    with np.errstate(invalid="ignore"):
        r = np.sqrt(fw + bw)
    return np.where(np.isfinite(r), r, np.inf)


def _collinear(pts, tol):
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        d1 = pts[j] - pts[i]
        d2 = pts[k] - pts[i]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) <= tol:
            return True
    return False


def _required_iterations(n_inliers, n, confidence):
    frac = n_inliers / n
    p_good = frac**4
    if p_good >= 1.0:
        return 1
    if p_good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - p_good)


def ransac_homography(src, dst, threshold, config: RansacConfig, rng):
    """Best consensus mask for one homography, or ``(None, mask)`` if no sample fits.

    ``threshold`` is in the same units as ``src``/``dst``.
    """
    n = len(src)
    best = np.zeros(n, dtype=bool)
    best_count = 0
    best_model = None
    span = np.ptp(np.vstack([src, dst]), axis=0).max() if n else 1.0
    tol = 1e-9 * span**2
    limit = config.max_iterations
    it = 0
    while it < min(limit, _required_iterations(best_count, n, config.confidence)):
        it += 1
        sample = rng.choice(n, 4, replace=False)
        if _collinear(src[sample], tol) or _collinear(dst[sample], tol):
            continue
        try:
            model = fit_homography(src[sample], dst[sample]).m
        except DegenerateConfiguration:
            continue
        inl = transfer_residuals(model, src, dst) < threshold
        count = int(inl.sum())
        # strict: ties keep the lowest hypothesis index
        if count > best_count:
            best, best_count, best_model = inl, count, model
    return best_model, best


def _refine(src, dst, mask, threshold, rounds):
    """Refit on the consensus and re-score until the inlier set stops changing."""
    model = fit_homography(src[mask], dst[mask])
    for _ in range(rounds):
        new = transfer_residuals(model.m, src, dst) < threshold
        if np.array_equal(new, mask) or new.sum() < 4:
            break
        try:
            refit = fit_homography(src[new], dst[new])
        except DegenerateConfiguration:
            break
        model, mask = refit, new
    return model, mask


def segment_correspondences(cs, config: RansacConfig | None = None):
    """Peel off homography consensus sets until fewer than ``min_inliers_delta`` remain."""
    config = config or RansacConfig()
    if len(cs) < config.min_inliers_delta:
        raise NoStructureFound(
            f"{len(cs)} correspondences, fewer than min_inliers_delta={config.min_inliers_delta}",
            "similarity",
        )
    rng = np.random.default_rng(config.rng_seed)
    scale = max(*cs.target_size, *cs.reference_size) if config.normalized else 1.0
    threshold = config.threshold_d * scale
    remaining = np.arange(len(cs))
    groups = []
    while len(remaining) >= config.min_inliers_delta:
        src = cs.target[remaining]
        dst = cs.reference[remaining]
        model, mask = ransac_homography(src, dst, threshold, config, rng)
        if model is None:
            break
        # refine before the size test: 4-point hypotheses from narrow regions undercount
        model, mask = _refine(src, dst, mask, threshold, config.refine_rounds)
        if mask.sum() < config.min_inliers_delta:
            break
        members = remaining[mask]
        sim = fit_similarity(cs.target[members], cs.reference[members])
        groups.append(InlierGroup(cs.ids[members], model, sim, sim.rotation_magnitude))
        remaining = remaining[~mask]
    if not groups:
        raise NoStructureFound(
            f"largest consensus set is below min_inliers_delta={config.min_inliers_delta}",
            "similarity",
        )
    return groups


def select_optimal_similarity(groups) -> SimilarityTransform:
    """Similarity of the group with the smallest rotation.

    Ties go to the larger group, then to the earlier-extracted one.
    """
    return groups[select_index(groups)].similarity


def select_index(groups) -> int:
    if not groups:
        raise EmptyInput("no inlier groups to choose from", "similarity")
    order = sorted(range(len(groups)), key=lambda k: (groups[k].rotation_magnitude, -groups[k].size, k))
    return order[0]
