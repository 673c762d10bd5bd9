"""Grid mesh over the target image and moving-DLT local homographies.

Each cell gets its own homography from a DLT system whose rows are
re-weighted by a Gaussian of the distance between the cell center and each
target-image match point, floored at ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGrid
from .geometry import Homography, _check_gap, build_dlt_system

# batch size for stacked SVDs; bounds peak memory at a few tens of MB
_SVD_CHUNK = 256


@dataclass(frozen=True)
class MdltConfig:
    sigma: float = 8.5
    eta: float = 0.01
    grid_cols: int = 40
    grid_rows: int = 40

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.grid_cols < 1 or self.grid_rows < 1:
            raise InvalidGrid(f"grid must be at least 1x1, got {self.grid_rows}x{self.grid_cols}", "mdlt")


@dataclass(frozen=True, eq=False)
class GridMesh:
    """Uniform partition of a ``width x height`` image into cells.

    ``x_edges``/``y_edges`` hold the cell boundaries. Every cell has the
    nominal size ``cell_width x cell_height`` except the last column and row,
    which absorb the remainder. Cells are indexed row-major.
    """

    cols: int
    rows: int
    cell_width: float
    cell_height: float
    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def n_cells(self):
        return self.cols * self.rows

    @property
    def size(self):
        return float(self.x_edges[-1]), float(self.y_edges[-1])

    @property
    def centers(self):
        cx = 0.5 * (self.x_edges[:-1] + self.x_edges[1:])
        cy = 0.5 * (self.y_edges[:-1] + self.y_edges[1:])
        gx, gy = np.meshgrid(cx, cy)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def cell_rects(self):
        """``(n_cells, 4)`` array of ``x0, y0, x1, y1``."""
        x0, y0 = np.meshgrid(self.x_edges[:-1], self.y_edges[:-1])
        x1, y1 = np.meshgrid(self.x_edges[1:], self.y_edges[1:])
        return np.column_stack([x0.ravel(), y0.ravel(), x1.ravel(), y1.ravel()])

    def cell_corners(self):
        """``(n_cells, 4, 2)`` corners in order TL, TR, BR, BL."""
        r = self.cell_rects()
        return np.stack(
            [r[:, [0, 1]], r[:, [2, 1]], r[:, [2, 3]], r[:, [0, 3]]], axis=1
        )

    def cell_of(self, pts):
        """Owning cell index for each target-image point (clamped to the grid)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        c = np.searchsorted(self.x_edges, pts[:, 0], side="right") - 1
        r = np.searchsorted(self.y_edges, pts[:, 1], side="right") - 1
        c = np.clip(c, 0, self.cols - 1)
        r = np.clip(r, 0, self.rows - 1)
        return r * self.cols + c


def build_mesh(image_size, cols, rows) -> GridMesh:
    width, height = image_size
    if cols * rows == 0 or cols < 0 or rows < 0:
        raise InvalidGrid(f"invalid grid {rows}x{cols}", "mdlt")
    if width <= 0 or height <= 0:
        raise InvalidGrid(f"invalid image size {width}x{height}", "mdlt")
    cw = width // cols if width >= cols else width / cols
    ch = height // rows if height >= rows else height / rows
    xe = np.arange(cols + 1, dtype=float) * cw
    ye = np.arange(rows + 1, dtype=float) * ch
    xe[-1] = width
    ye[-1] = height
    xe.setflags(write=False)
    ye.setflags(write=False)
    return GridMesh(cols, rows, float(cw), float(ch), xe, ye)


def mdlt_weights(center, points, config: MdltConfig):
    """``max(exp(-|center - p|^2 / sigma^2), eta)`` for each target point ``p``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d2 = np.sum((points - np.asarray(center, dtype=float)) ** 2, axis=-1)
    return np.maximum(np.exp(-d2 / config.sigma**2), config.eta)


@dataclass(frozen=True, eq=False)
class LocalWarpField:
    mesh: GridMesh
    warps: tuple

    def matrices(self):
        return np.stack([h.m for h in self.warps])

    def __len__(self):
        return len(self.warps)


def estimate_local_warps(correspondences, mesh: GridMesh, config: MdltConfig) -> LocalWarpField:
    """One weighted-DLT homography per mesh cell.

    Weights are computed in pixel units on the target points; conditioning
    is applied only inside the linear solve and is shared by all cells.
    """
    src = correspondences.target
    dst = correspondences.reference
    system = build_dlt_system(src, dst, condition=True)
    A = system.rows
    centers = mesh.centers
    full = A.shape[0] < A.shape[1]
    warps = []
    for start in range(0, len(centers), _SVD_CHUNK):
        block = centers[start : start + _SVD_CHUNK]
        d2 = np.sum((block[:, None, :] - src[None, :, :]) ** 2, axis=-1)
        w = np.maximum(np.exp(-d2 / config.sigma**2), config.eta)
        wa = np.repeat(w, 2, axis=1)[:, :, None] * A[None]
        _, s, vt = np.linalg.svd(wa, full_matrices=full)
        for k in range(len(block)):
            sk = np.concatenate([s[k], np.zeros(9 - s.shape[1])])
            _check_gap(sk, cell=start + k, module="mdlt")
            hn = vt[k, -1].reshape(3, 3)
            warps.append(Homography.from_matrix(system.decondition(hn)))
    return LocalWarpField(mesh, tuple(warps))


def global_field(h: Homography, mesh: GridMesh) -> LocalWarpField:
    """Field with the same homography in every cell (the global-model baseline)."""
    return LocalWarpField(mesh, (h,) * mesh.n_cells)
