"""Image I/O, canvas sizing, per-cell inverse warping and average blending.

Images are float arrays in ``[0, 1]`` of shape ``(h, w)`` or ``(h, w, 3)``.
Pixel centers sit at integer coordinates; canvas pixel ``(row, col)`` is the
reference-frame point ``(col - ox, row - oy)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DimensionMismatch, IoError, UnboundedCanvas, UnsupportedFormat
from .combine import CombinedWarpField, assign_reference_cells

MAX_CANVAS_SIDE = 16384
# slack (pixels) absorbing rounding in numerically estimated warps
EDGE_TOL = 1e-9
_FORMATS = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in _FORMATS:
        raise UnsupportedFormat(f"unsupported image format {path.suffix!r}", "raster")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("L" if im.mode in ("1", "I", "I;16", "F") else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError as e:
        raise IoError(f"cannot read {path}: {e}", "raster") from e
    except UnidentifiedImageError as e:
        raise UnsupportedFormat(f"cannot decode {path}", "raster") from e
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", "raster") from e
    return arr.astype(float) / 255.0


def to_uint8(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img) -> None:
    path = Path(path)
    fmt = _FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedFormat(f"unsupported image format {path.suffix!r}", "raster")
    arr = to_uint8(img)
    if path.suffix.lower() == ".pgm" and arr.ndim == 3:
        raise UnsupportedFormat("PGM holds grayscale images only", "raster")
    if path.suffix.lower() == ".ppm" and arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    try:
        Image.fromarray(arr).save(path, format=fmt)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", "raster") from e


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(peak**2 / mse)


@dataclass(frozen=True)
class Canvas:
    bounds: tuple  # min_x, min_y, max_x, max_y in the reference frame
    offset: tuple  # (ox, oy): canvas col = x + ox, row = y + oy
    width: int
    height: int

    @classmethod
    def from_bounds(cls, bounds, max_side=MAX_CANVAS_SIDE):
        x0, y0, x1, y1 = (float(v) for v in bounds)
        if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
            raise UnboundedCanvas("canvas bounds are not finite", "raster")
        fx, fy = math.floor(x0 + EDGE_TOL), math.floor(y0 + EDGE_TOL)
        w = max(1, math.ceil(x1 - EDGE_TOL) - fx)
        h = max(1, math.ceil(y1 - EDGE_TOL) - fy)
        if w > max_side or h > max_side:
            raise UnboundedCanvas(f"canvas {w}x{h} exceeds {max_side} px per side", "raster")
        return cls((x0, y0, x1, y1), (-fx, -fy), w, h)

    def grid(self):
        """Reference-frame coordinates of every canvas pixel, ``(h, w, 2)``."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(float)
        return np.stack([xs - self.offset[0], ys - self.offset[1]], axis=-1)


def _map_forward(m, pts):
    q = pts @ m[:2, :2].T + m[:2, 2]
    w = pts @ m[2, :2] + m[2, 2]
    if np.any(w < 1e-12):
        raise UnboundedCanvas("a warped corner reaches the line at infinity", "raster")
    return q / w[:, None]


def _border(width, height, step=8.0):
    nx = max(2, int(math.ceil(width / step)) + 1)
    ny = max(2, int(math.ceil(height / step)) + 1)
    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, height, ny)
    return np.vstack(
        [
            np.column_stack([xs, np.zeros(nx)]),
            np.column_stack([xs, np.full(nx, float(height))]),
            np.column_stack([np.zeros(ny), ys]),
            np.column_stack([np.full(ny, float(width)), ys]),
        ]
    )


def compute_canvas(field: CombinedWarpField, target_size, reference_size, max_side=MAX_CANVAS_SIDE) -> Canvas:
    """Hull of the warped target cells and the warped reference border."""
    corners = field.mesh.cell_corners()
    mats = field.target_matrices
    pts = [_map_forward(mats[k], corners[k]) for k in range(len(mats))]
    rw, rh = reference_size
    rb = _border(rw, rh)
    owner = assign_reference_cells(field, rb)
    rmats = field.reference_matrices
    for k in np.unique(owner):
        pts.append(_map_forward(rmats[k], rb[owner == k]))
    allp = np.vstack(pts)
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    return Canvas.from_bounds((lo[0], lo[1], hi[0], hi[1]), max_side)


def rasterize_cells(matrices, mesh, canvas: Canvas) -> np.ndarray:
    """Index map of the cell whose warped quad covers each canvas pixel (-1 = none).

    A pixel belongs to cell ``k`` when its pre-image under ``matrices[k]``
    lies in the closed cell rectangle; earlier cells win ties.
    """
    owner = np.full((canvas.height, canvas.width), -1, dtype=np.int32)
    corners = mesh.cell_corners()
    rects = mesh.cell_rects()
    inv = np.linalg.inv(matrices)
    ox, oy = canvas.offset
    for k in range(len(matrices)):
        try:
            q = _map_forward(matrices[k], corners[k])
        except UnboundedCanvas:
            continue
        c0 = max(0, math.floor(q[:, 0].min() + ox))
        c1 = min(canvas.width - 1, math.ceil(q[:, 0].max() + ox))
        r0 = max(0, math.floor(q[:, 1].min() + oy))
        r1 = min(canvas.height - 1, math.ceil(q[:, 1].max() + oy))
        if c0 > c1 or r0 > r1:
            continue
        sub = owner[r0 : r1 + 1, c0 : c1 + 1]
        free = sub < 0
        if not free.any():
            continue
        rr, cc = np.nonzero(free)
        x = cc + c0 - ox
        y = rr + r0 - oy
        m = inv[k]
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        px = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
        py = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
        x0, y0, x1, y1 = rects[k]
        t = EDGE_TOL
        inside = (w > 0) & (px >= x0 - t) & (px <= x1 + t) & (py >= y0 - t) & (py <= y1 + t)
        sub[rr[inside], cc[inside]] = k
    return owner


def fill_nearest(owner) -> np.ndarray:
    """Give every uncovered pixel the cell of the nearest covered pixel."""
    missing = owner < 0
    if not missing.any():
        return owner
    if missing.all():
        raise UnboundedCanvas("no cell covers the canvas", "raster")
    _, (ri, ci) = ndimage.distance_transform_edt(missing, return_indices=True)
    return owner[ri, ci]


def warp_image(image, inverse_matrices, owner, canvas: Canvas):
    """Pull-warp ``image`` onto ``canvas`` with bilinear sampling.

    ``owner`` selects, per canvas pixel, which of ``inverse_matrices``
    (canvas frame -> source pixels) applies; ``-1`` leaves the pixel empty.
    Returns ``(warped, mask)``; ``mask`` is True where the pre-image lies in
    ``[0, w-1] x [0, h-1]`` of the source, up to ``EDGE_TOL``.
    """
    image = np.asarray(image, dtype=float)
    h, w = image.shape[:2]
    inv = np.asarray(inverse_matrices, dtype=float).reshape(-1, 3, 3)
    shape = (canvas.height, canvas.width)
    rows, cols = np.nonzero(owner >= 0)
    m = inv[owner[rows, cols]]
    x = cols - canvas.offset[0]
    y = rows - canvas.offset[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        wz = m[:, 2, 0] * x + m[:, 2, 1] * y + m[:, 2, 2]
        px = (m[:, 0, 0] * x + m[:, 0, 1] * y + m[:, 0, 2]) / wz
        py = (m[:, 1, 0] * x + m[:, 1, 1] * y + m[:, 1, 2]) / wz
    t = EDGE_TOL
    ok = np.isfinite(px) & np.isfinite(py) & (px >= -t) & (px <= w - 1 + t) & (py >= -t) & (py <= h - 1 + t)
    rows, cols, px, py = rows[ok], cols[ok], px[ok], py[ok]
    mask = np.zeros(shape, dtype=bool)
    mask[rows, cols] = True
    out = np.zeros(shape + image.shape[2:])
    coords = np.vstack([py, px])
    if image.ndim == 2:
        out[rows, cols] = ndimage.map_coordinates(image, coords, order=1, mode="nearest")
    else:
        for ch in range(image.shape[2]):
            out[rows, cols, ch] = ndimage.map_coordinates(image[:, :, ch], coords, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0), mask


def warp_homography(image, matrix, canvas: Canvas):
    """Warp with a single homography (source pixels -> reference frame)."""
    owner = np.zeros((canvas.height, canvas.width), dtype=np.int32)
    return warp_image(image, np.linalg.inv(np.asarray(matrix, dtype=float))[None], owner, canvas)


def warp_target(image, field: CombinedWarpField, canvas: Canvas, owner=None):
    """Apply ``H'`` per canvas pixel; seams between warped quads use the nearest cell."""
    if owner is None:
        owner = rasterize_cells(field.target_matrices, field.mesh, canvas)
    return warp_image(image, np.linalg.inv(field.target_matrices), fill_nearest(owner), canvas)


def warp_reference(image, field: CombinedWarpField, canvas: Canvas, owner=None):
    """Apply ``T'`` per canvas pixel, using the target-cell ownership.

    Inside a warped cell ``i`` the reference pre-image is ``H_i H'_i^-1 q``,
    whose local-warp pre-image lies in cell ``i``; elsewhere the nearest
    warped cell's ``T'`` is used.
    """
    if owner is None:
        owner = rasterize_cells(field.target_matrices, field.mesh, canvas)
    inv = field.local_matrices @ np.linalg.inv(field.target_matrices)
    return warp_image(image, inv, fill_nearest(owner), canvas)


def blend_average(a, mask_a, b, mask_b):
    """Mean where both are valid, the valid one where only one is, 0 elsewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or np.shape(mask_a) != a.shape[:2] or np.shape(mask_b) != b.shape[:2]:
        raise DimensionMismatch(f"cannot blend {a.shape} with {b.shape}", "raster")
    ma = np.asarray(mask_a, dtype=bool)
    mb = np.asarray(mask_b, dtype=bool)
    if a.ndim == 3:
        ma3, mb3 = ma[:, :, None], mb[:, :, None]
    else:
        ma3, mb3 = ma, mb
    both = ma3 & mb3
    out = np.where(both, 0.5 * (a + b), np.where(ma3, a, np.where(mb3, b, 0.0)))
    return out
