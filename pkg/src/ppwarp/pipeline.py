"""End-to-end warp construction and stitching for the three supported modes.

``proposed``     local mesh warps blended with the selected similarity.
``mdlt-only``    local mesh warps, no blending.
``global-only``  one DLT homography for every cell, no blending.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .combine import BlendWeights, CombinedWarpField, UAxisFrame, blend_weights, build_u_axis, combine_warps
from .errors import DimensionMismatch, InvalidSpec, NoStructureFound
from .geometry import Homography, fit_homography
from .mdlt import MdltConfig, build_mesh, estimate_local_warps, global_field
from .raster import Canvas, blend_average, compute_canvas, fill_nearest, rasterize_cells, warp_image
from .similarity import RansacConfig, fit_similarity, segment_correspondences, select_index

MODES = ("proposed", "mdlt-only", "global-only")


@dataclass(frozen=True)
class StitchConfig:
    sigma: float = 8.5
    eta: float = 0.01
    grid_cols: int = 40
    grid_rows: int = 40
    ransac_threshold: float = 0.01
    min_inliers: int = 50
    max_iterations: int = 2000
    rng_seed: int = 0
    mode: str = "proposed"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        # delegate range checks to the owning configs
        self.mdlt_config()
        self.ransac_config()

    def mdlt_config(self):
        return MdltConfig(self.sigma, self.eta, self.grid_cols, self.grid_rows)

    def ransac_config(self):
        return RansacConfig(
            threshold_d=self.ransac_threshold,
            min_inliers_delta=self.min_inliers,
            max_iterations=self.max_iterations,
            rng_seed=self.rng_seed,
        )

    def with_mode(self, mode):
        return replace(self, mode=mode)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, values):
        """Build from string values (config file / CLI); unknown keys raise InvalidSpec."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            k = key.replace("-", "_")
            if k not in known:
                raise InvalidSpec(f"unknown config key {key!r}", "cli")
            conv = {"float": float, "int": int, "str": str}[known[k]]
            try:
                kwargs[k] = conv(raw)
            except ValueError:
                raise InvalidSpec(f"config key {key!r}: cannot parse {raw!r}", "cli") from None
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class WarpResult:
    config: StitchConfig
    field: CombinedWarpField
    global_h: Homography
    groups: tuple
    selected: int | None
    frame: UAxisFrame | None


def _choose_similarity(cs, config, strict):
    try:
        groups = segment_correspondences(cs, config.ransac_config())
    except NoStructureFound:
        if strict:
            raise
        # baselines only use S for reporting; fall back to all pairs
        return (), None, fit_similarity(cs.target, cs.reference)
    k = select_index(groups)
    return tuple(groups), k, groups[k].similarity


def build_warp(cs, config: StitchConfig | None = None) -> WarpResult:
    config = config or StitchConfig()
    mesh = build_mesh(cs.target_size, config.grid_cols, config.grid_rows)
    global_h = fit_homography(cs.target, cs.reference)
    groups, selected, sim = _choose_similarity(cs, config, strict=config.mode == "proposed")
    if config.mode == "global-only":
        local = global_field(global_h, mesh)
    else:
        local = estimate_local_warps(cs, mesh, config.mdlt_config())
    frame = build_u_axis(global_h, mesh, cs)
    if config.mode == "proposed":
        weights = blend_weights(frame, mesh)
    else:
        weights = BlendWeights.constant(mesh.n_cells, 0.0)
    field = combine_warps(local, sim, weights)
    return WarpResult(config, field, global_h, groups, selected, frame)


@dataclass(frozen=True, eq=False)
class Composite:
    image: np.ndarray
    coverage: np.ndarray  # 0, 1 or 2 contributing sources
    canvas: Canvas
    owner: np.ndarray  # target-cell index per canvas pixel, -1 outside


def render_composite(target_img, reference_img, field: CombinedWarpField) -> Composite:
    th, tw = target_img.shape[:2]
    rh, rw = reference_img.shape[:2]
    if target_img.ndim != reference_img.ndim:
        # promote gray to RGB so both share a channel layout
        if target_img.ndim == 2:
            target_img = np.repeat(target_img[:, :, None], 3, axis=2)
        else:
            reference_img = np.repeat(reference_img[:, :, None], 3, axis=2)
    canvas = compute_canvas(field, (tw, th), (rw, rh))
    owner = rasterize_cells(field.target_matrices, field.mesh, canvas)
    # seams between neighbouring quads take the nearest cell's warp
    filled = fill_nearest(owner)
    a, ma = warp_image(target_img, np.linalg.inv(field.target_matrices), filled, canvas)
    ref_inv = field.local_matrices @ np.linalg.inv(field.target_matrices)
    b, mb = warp_image(reference_img, ref_inv, filled, canvas)
    out = blend_average(a, ma, b, mb)
    return Composite(out, ma.astype(np.uint8) + mb.astype(np.uint8), canvas, owner)


def stitch(target_img, reference_img, cs, config: StitchConfig | None = None):
    """Return ``(composite, warp_result)``."""
    th, tw = target_img.shape[:2]
    rh, rw = reference_img.shape[:2]
    if tuple(cs.target_size) != (tw, th) or tuple(cs.reference_size) != (rw, rh):
        raise DimensionMismatch(
            f"images are {tw}x{th} and {rw}x{rh} but the matches file declares "
            f"{cs.target_size[0]}x{cs.target_size[1]} and {cs.reference_size[0]}x{cs.reference_size[1]}",
            "cli",
        )
    result = build_warp(cs, config)
    return render_composite(target_img, reference_img, result.field), result
