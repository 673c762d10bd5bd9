"""Blending of local mesh homographies with the global similarity.

The distortion axis comes from rotating the global homography so that its
projective row has a single nonzero entry; along that axis the blend weight
of the similarity grows linearly from 0 (overlap side) to 1 (far side).
The reference image gets the compensating warp ``T' = H' H^-1`` so that
anything ``H`` aligned stays aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAxis, DegenerateConfiguration, SingularBlend
from .geometry import Homography, SimilarityTransform, decompose_homography
from .mdlt import GridMesh, LocalWarpField


@dataclass(frozen=True, eq=False)
class UAxisFrame:
    """Cell-center projections onto the distortion axis.

    ``p_min``/``p_max`` are the feet of the extreme projections on the axis
    itself, not the cell centers they come from.
    """

    origin: np.ndarray
    theta: float
    u_dir: np.ndarray
    projections: np.ndarray
    i_min: int
    i_max: int
    affine: bool = False

    @property
    def d_min(self):
        return float(self.projections[self.i_min])

    @property
    def d_max(self):
        return float(self.projections[self.i_max])

    @property
    def p_min(self):
        return self.origin + self.d_min * self.u_dir

    @property
    def p_max(self):
        return self.origin + self.d_max * self.u_dir


def build_u_axis(global_h: Homography, mesh: GridMesh, correspondences) -> UAxisFrame:
    """Distortion axis of ``global_h`` with the target-image center as origin.

    The sign of the axis is chosen so that the mean target match point sits
    nearer the low end; an affine ``global_h`` gives a frame flagged
    ``affine`` (no distortion to compensate).
    """
    w, h = mesh.size
    origin = np.array([w / 2.0, h / 2.0])
    shift = np.array([[1.0, 0.0, origin[0]], [0.0, 1.0, origin[1]], [0.0, 0.0, 1.0]])
    dec = decompose_homography(Homography.from_matrix(global_h.m @ shift))
    # c has units of 1/pixel; compare against the image extent
    affine = dec.c * max(w, h) < 1e-12
    theta = 0.0 if affine else dec.theta
    u_dir = np.array([np.cos(theta), np.sin(theta)])
    proj = (mesh.centers - origin) @ u_dir
    match_mean = float(np.mean((correspondences.target - origin) @ u_dir))
    i_min, i_max = int(np.argmin(proj)), int(np.argmax(proj))
    if abs(match_mean - proj[i_min]) > abs(match_mean - proj[i_max]):
        theta = float(np.arctan2(-u_dir[1], -u_dir[0]))
        u_dir = -u_dir
        proj = -proj
        i_min, i_max = int(np.argmin(proj)), int(np.argmax(proj))
    return UAxisFrame(origin, theta, u_dir, proj, i_min, i_max, affine)


@dataclass(frozen=True, eq=False)
class BlendWeights:
    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def from_beta(cls, beta):
        beta = np.asarray(beta, dtype=float)
        return cls(1.0 - beta, beta)

    @classmethod
    def constant(cls, n, beta=0.0):
        return cls.from_beta(np.full(n, float(beta)))

    def __len__(self):
        return len(self.beta)


def blend_weights(frame: UAxisFrame, mesh: GridMesh) -> BlendWeights:
    """Similarity weight = normalized position of each cell along ``[P_min, P_max]``.

    With both endpoints on the axis the projection of ``P_min P_i`` onto
    ``P_min P_max`` over ``|P_min P_max|^2`` reduces to
    ``(d_i - d_min) / (d_max - d_min)``, which is what is computed.
    """
    if frame.affine:
        return BlendWeights.constant(mesh.n_cells, 0.0)
    span = frame.d_max - frame.d_min
    if span < 1e-9:
        raise DegenerateAxis("all cell projections on the distortion axis coincide", "combine")
    beta = np.clip((frame.projections - frame.d_min) / span, 0.0, 1.0)
    return BlendWeights.from_beta(beta)


@dataclass(frozen=True, eq=False)
class CombinedWarpField:
    mesh: GridMesh
    local_warps: tuple
    target_warps: tuple
    reference_warps: tuple
    similarity: SimilarityTransform
    weights: BlendWeights

    @property
    def target_matrices(self):
        return np.stack([h.m for h in self.target_warps])

    @property
    def reference_matrices(self):
        return np.stack([h.m for h in self.reference_warps])

    @property
    def local_matrices(self):
        return np.stack([h.m for h in self.local_warps])


def combine_warps(local: LocalWarpField, similarity: SimilarityTransform, weights: BlendWeights) -> CombinedWarpField:
    """``H'_i = alpha_i H_i + beta_i S`` and ``T'_i = H'_i H_i^-1``, per cell."""
    if len(weights) != len(local):
        raise ValueError(f"{len(weights)} weights for {len(local)} cells")
    s = similarity.matrix
    targets, refs = [], []
    for i, h in enumerate(local.warps):
        a, b = weights.alpha[i], weights.beta[i]
        if b == 0.0:
            # H' = H exactly, so T' is exactly the identity
            targets.append(h)
            refs.append(Homography.identity())
            continue
        try:
            hp = Homography.from_matrix(a * h.m + b * s)
        except DegenerateConfiguration:
            raise SingularBlend(f"blended warp of cell {i} is singular", cell=i) from None
        targets.append(hp)
        refs.append(Homography.from_matrix(hp.m @ np.linalg.inv(h.m)))
    return CombinedWarpField(local.mesh, tuple(local.warps), tuple(targets), tuple(refs), similarity, weights)


def export_weight_maps(weights: BlendWeights, mesh: GridMesh):
    """``(alpha_map, beta_map)`` as ``uint8`` arrays, one pixel per cell, 255 = weight 1."""
    def to8(w):
        return np.rint(np.clip(w, 0.0, 1.0) * 255.0).astype(np.uint8).reshape(mesh.rows, mesh.cols)

    return to8(weights.alpha), to8(weights.beta)


def _rect_distance(pts, rects):
    """Euclidean distance from ``pts[k, i]`` to ``rects[k]`` (0 inside)."""
    x, y = pts[..., 0], pts[..., 1]
    dx = np.maximum(np.maximum(rects[:, None, 0] - x, x - rects[:, None, 2]), 0.0)
    dy = np.maximum(np.maximum(rects[:, None, 1] - y, y - rects[:, None, 3]), 0.0)
    d = np.hypot(dx, dy)
    return np.where(np.isfinite(d), d, np.inf)


def assign_reference_cells(field: CombinedWarpField, pts, chunk=512):
    """Cell whose compensating warp applies to each reference-image point.

    A reference point belongs to cell ``i`` when its pre-image under the
    local warp ``H_i`` falls inside cell ``i``; otherwise the cell whose
    pre-image lands nearest to it is used. Ties go to the lower index.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    inv = np.linalg.inv(field.local_matrices)
    rects = field.mesh.cell_rects()
    out = np.empty(len(pts), dtype=np.int64)
    for start in range(0, len(pts), chunk):
        p = pts[start : start + chunk]
        ph = np.column_stack([p, np.ones(len(p))])
        pre = np.einsum("kij,pj->kpi", inv, ph)
        with np.errstate(divide="ignore", invalid="ignore"):
            xy = pre[..., :2] / pre[..., 2:3]
        xy[np.abs(pre[..., 2]) < 1e-12] = np.inf
        out[start : start + chunk] = np.argmin(_rect_distance(xy, rects), axis=0)
    return out
