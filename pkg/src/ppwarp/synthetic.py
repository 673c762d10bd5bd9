"""Synthetic multi-plane scenes with ground truth, and warp-quality metrics.

A scene is a set of planes, each a homography from target to reference
pixels restricted to a rectangle of the target image. Correspondences are
sampled per plane, perturbed by Gaussian noise, and optionally mixed with
uniform outliers (label ``-1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .combine import CombinedWarpField, UAxisFrame, assign_reference_cells, build_u_axis
from .errors import InvalidSpec
from .geometry import apply_homography, decompose_homography, fit_homography, local_scale_change
from .matches import CorrespondenceSet


@dataclass(frozen=True, eq=False)
class Plane:
    homography: np.ndarray
    region: tuple  # x0, y0, x1, y1 in target pixels

    def __post_init__(self):
        m = np.asarray(self.homography, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise InvalidSpec("plane homography must be a finite 3x3 matrix", "synthetic")
        object.__setattr__(self, "homography", m / m[2, 2])
        x0, y0, x1, y1 = (float(v) for v in self.region)
        if not (x1 > x0 and y1 > y0):
            raise InvalidSpec(f"empty plane region {self.region}", "synthetic")
        object.__setattr__(self, "region", (x0, y0, x1, y1))

    def __eq__(self, other):
        return (
            isinstance(other, Plane)
            and self.region == other.region
            and np.array_equal(self.homography, other.homography)
        )


@dataclass(frozen=True)
class SceneSpec:
    planes: tuple
    points_per_plane: int
    target_size: tuple
    reference_size: tuple
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    rng_seed: int = 0
    # 0 = uniform; g > 0 packs points toward each region's left edge (x ~ U^(1+g))
    density_gradient: float = 0.0

    def __post_init__(self):
        if not self.planes:
            raise InvalidSpec("scene needs at least one plane", "synthetic")
        if self.points_per_plane < 1:
            raise InvalidSpec("points_per_plane must be positive", "synthetic")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be nonnegative", "synthetic")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise InvalidSpec("outlier_fraction must lie in [0, 1)", "synthetic")
        if self.density_gradient < 0:
            raise InvalidSpec("density_gradient must be nonnegative", "synthetic")
        for name in ("target_size", "reference_size"):
            w, h = getattr(self, name)
            if w <= 0 or h <= 0:
                raise InvalidSpec(f"{name} must be positive", "synthetic")
        tw, th = self.target_size
        rects = [p.region for p in self.planes]
        for k, (x0, y0, x1, y1) in enumerate(rects):
            if x0 < 0 or y0 < 0 or x1 > tw or y1 > th:
                raise InvalidSpec(f"plane {k} region lies outside the target image", "synthetic")
            for a0, b0, a1, b1 in rects[:k]:
                if x0 < a1 and a0 < x1 and y0 < b1 and b0 < y1:
                    raise InvalidSpec(f"plane {k} region overlaps an earlier plane", "synthetic")


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    correspondences: CorrespondenceSet
    labels: np.ndarray  # plane index per pair, -1 for outliers


def generate_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.rng_seed)
    rw, rh = spec.reference_size
    tw, th = spec.target_size
    tgt, ref, lab = [], [], []
    for k, plane in enumerate(spec.planes):
        x0, y0, x1, y1 = plane.region
        got = 0
        for _ in range(1000):
            n = 2 * (spec.points_per_plane - got) + 8
            ux = rng.uniform(0.0, 1.0, n) ** (1.0 + spec.density_gradient)
            p = np.column_stack([x0 + (x1 - x0) * ux, rng.uniform(y0, y1, n)])
            q = apply_homography(plane.homography, p) + rng.normal(0.0, spec.noise_sigma, (n, 2))
            ok = (q[:, 0] >= 0) & (q[:, 0] <= rw) & (q[:, 1] >= 0) & (q[:, 1] <= rh)
            take = np.flatnonzero(ok)[: spec.points_per_plane - got]
            tgt.append(p[take])
            ref.append(q[take])
            lab.append(np.full(len(take), k))
            got += len(take)
            if got == spec.points_per_plane:
                break
        else:
            raise InvalidSpec(f"plane {k} maps too few points inside the reference image", "synthetic")
    n_in = len(spec.planes) * spec.points_per_plane
    n_out = int(round(spec.outlier_fraction * n_in / (1.0 - spec.outlier_fraction)))
    if n_out:
        tgt.append(rng.uniform(0.0, 1.0, (n_out, 2)) * [tw, th])
        ref.append(rng.uniform(0.0, 1.0, (n_out, 2)) * [rw, rh])
        lab.append(np.full(n_out, -1))
    t = np.vstack(tgt)
    r = np.vstack(ref)
    labels = np.concatenate(lab)
    cs = CorrespondenceSet(np.arange(len(t)), t, r, spec.target_size, spec.reference_size)
    return Scene(spec, cs, labels)


# ---------------------------------------------------------------------------
# rendering


def texture(x, y):
    """Smooth RGB test pattern defined over the whole plane, values in [0, 1]."""
    r = 0.5 + 0.22 * np.sin(x / 9.0) * np.cos(y / 13.0) + 0.2 * np.sin((x + 2.0 * y) / 31.0)
    g = 0.5 + 0.25 * np.cos(x / 17.0 - y / 7.0) + 0.15 * np.sin(y / 23.0)
    b = 0.5 + 0.2 * np.sin((x - y) / 11.0) + 0.2 * np.cos(np.hypot(x, y) / 19.0)
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def plane_index_map(spec: SceneSpec):
    """Plane index for each target pixel; pixels outside every region take the nearest one."""
    tw, th = spec.target_size
    ys, xs = np.mgrid[0:th, 0:tw].astype(float)
    best = np.full((th, tw), np.inf)
    idx = np.zeros((th, tw), dtype=np.int64)
    for k, p in enumerate(spec.planes):
        x0, y0, x1, y1 = p.region
        d = np.hypot(np.maximum(np.maximum(x0 - xs, xs - x1), 0.0), np.maximum(np.maximum(y0 - ys, ys - y1), 0.0))
        closer = d < best
        best[closer] = d[closer]
        idx[closer] = k
    return idx


def render_scene(spec: SceneSpec):
    """Target and reference images consistent with the scene's planes."""
    rw, rh = spec.reference_size
    ys, xs = np.mgrid[0:rh, 0:rw].astype(float)
    reference = texture(xs, ys)
    tw, th = spec.target_size
    ys, xs = np.mgrid[0:th, 0:tw].astype(float)
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    owner = plane_index_map(spec).ravel()
    mapped = np.empty_like(pts)
    for k, p in enumerate(spec.planes):
        sel = owner == k
        mapped[sel] = apply_homography(p.homography, pts[sel])
    target = texture(mapped[:, 0], mapped[:, 1]).reshape(th, tw, 3)
    return target, reference


# ---------------------------------------------------------------------------
# standard fixtures


def _about(m, cx, cy):
    t = np.array([[1.0, 0, cx], [0, 1.0, cy], [0, 0, 1.0]])
    return t @ m @ np.linalg.inv(t)


def _rot(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _shift(tx, ty):
    return np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]])


def _persp(h7, h8=0.0):
    m = np.eye(3)
    m[2, :2] = [h7, h8]
    return m


def base_projective(size=(400, 300), offset=240.0, h7=-6e-4):
    """Target's left strip overlaps the reference's right strip; the far side is stretched."""
    _, th = size
    return _shift(offset, 0.0) @ _about(_persp(h7), 0.0, th / 2.0)


def single_plane_spec(seed=1, noise_sigma=0.5):
    size = (400, 300)
    h = base_projective(size)
    return SceneSpec(
        planes=(Plane(h, (0.0, 0.0, 130.0, 300.0)),),
        points_per_plane=120,
        target_size=size,
        reference_size=size,
        noise_sigma=noise_sigma,
        rng_seed=seed,
    )


def two_plane_spec(seed=3, noise_sigma=0.5):
    """Left/right planes in the overlap strip; the right one is rotated 0.1 rad and lifted 15 px."""
    size = (400, 300)
    ha = base_projective(size)
    hb = ha @ _about(_rot(0.1), 110.0, 150.0) @ _shift(0.0, 15.0)
    return SceneSpec(
        planes=(Plane(ha, (0.0, 0.0, 60.0, 300.0)), Plane(hb, (60.0, 0.0, 130.0, 300.0))),
        points_per_plane=60,
        target_size=size,
        reference_size=size,
        noise_sigma=noise_sigma,
        rng_seed=seed,
    )


def railtracks_spec(seed=5, noise_sigma=0.5):
    """Ground/background split top-bottom with match density falling off across the overlap."""
    size = (400, 300)
    ha = base_projective(size, h7=-5e-4)
    hb = ha @ _about(_rot(-0.04), 60.0, 220.0) @ _shift(8.0, -10.0)
    return SceneSpec(
        planes=(Plane(ha, (0.0, 0.0, 130.0, 150.0)), Plane(hb, (0.0, 150.0, 130.0, 300.0))),
        points_per_plane=80,
        target_size=size,
        reference_size=size,
        noise_sigma=noise_sigma,
        rng_seed=seed,
        density_gradient=1.5,
    )


FIXTURES = {
    "single-plane": single_plane_spec,
    "two-plane": two_plane_spec,
    "railtracks": railtracks_spec,
}


# ---------------------------------------------------------------------------
# spec files


def format_scene_spec(spec: SceneSpec) -> str:
    lines = [
        f"target_size = {spec.target_size[0]}x{spec.target_size[1]}",
        f"reference_size = {spec.reference_size[0]}x{spec.reference_size[1]}",
        f"points_per_plane = {spec.points_per_plane}",
        f"noise_sigma = {spec.noise_sigma!r}",
        f"outlier_fraction = {spec.outlier_fraction!r}",
        f"seed = {spec.rng_seed}",
        f"density_gradient = {spec.density_gradient!r}",
    ]
    for p in spec.planes:
        h = " ".join(repr(v) for v in p.homography.ravel().tolist())
        r = " ".join(repr(v) for v in p.region)
        lines.append(f"plane = {h} | {r}")
    return "\n".join(lines) + "\n"


def _size(v, lineno):
    try:
        w, h = v.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise InvalidSpec(f"line {lineno}: expected WxH, got {v!r}", "synthetic") from None


def parse_scene_spec(text: str) -> SceneSpec:
    kv = {}
    planes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"line {lineno}: expected key = value", "synthetic")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key == "plane":
                hpart, rpart = val.split("|")
                h = [float(t) for t in hpart.split()]
                r = [float(t) for t in rpart.split()]
                if len(h) != 9 or len(r) != 4:
                    raise ValueError
                planes.append(Plane(np.array(h).reshape(3, 3), tuple(r)))
            elif key in ("target_size", "reference_size"):
                kv[key] = _size(val, lineno)
            elif key in ("points_per_plane", "seed"):
                kv[key] = int(val)
            elif key in ("noise_sigma", "outlier_fraction", "density_gradient"):
                kv[key] = float(val)
            else:
                raise InvalidSpec(f"line {lineno}: unknown key {key!r}", "synthetic")
        except ValueError:
            raise InvalidSpec(f"line {lineno}: malformed value for {key!r}", "synthetic") from None
    missing = {"target_size", "reference_size", "points_per_plane"} - kv.keys()
    if missing:
        raise InvalidSpec(f"missing keys: {', '.join(sorted(missing))}", "synthetic")
    return SceneSpec(
        planes=tuple(planes),
        points_per_plane=kv["points_per_plane"],
        target_size=kv["target_size"],
        reference_size=kv["reference_size"],
        noise_sigma=kv.get("noise_sigma", 0.0),
        outlier_fraction=kv.get("outlier_fraction", 0.0),
        rng_seed=kv.get("seed", 0),
        density_gradient=kv.get("density_gradient", 0.0),
    )


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalReport:
    overlap_rmse: float
    overlap_max_error: float
    nonoverlap_scale_spread: float
    nonoverlap_similarity_gap: float

    def as_dict(self):
        return {
            "overlap_rmse": self.overlap_rmse,
            "overlap_max_error": self.overlap_max_error,
            "nonoverlap_scale_spread": self.nonoverlap_scale_spread,
            "nonoverlap_similarity_gap": self.nonoverlap_similarity_gap,
        }


FAR_FRACTION = 0.2


def far_cells(frame: UAxisFrame, fraction=FAR_FRACTION):
    """Indices of the cells with the largest axis projections."""
    n = len(frame.projections)
    k = max(1, math.ceil(fraction * n))
    order = np.argsort(-frame.projections, kind="stable")
    return order[:k]


def alignment_errors(field: CombinedWarpField, target_pts, reference_pts):
    """``|H'_i(p) - T'_j(p')|`` with ``i`` owning ``p`` and ``j`` assigned to ``p'``."""
    i = field.mesh.cell_of(target_pts)
    j = assign_reference_cells(field, reference_pts)
    hp = field.target_matrices[i]
    tp = field.reference_matrices[j]
    a = np.einsum("kij,kj->ki", hp, np.column_stack([target_pts, np.ones(len(i))]))
    b = np.einsum("kij,kj->ki", tp, np.column_stack([reference_pts, np.ones(len(j))]))
    return np.hypot(*(a[:, :2] / a[:, 2:3] - b[:, :2] / b[:, 2:3]).T)


def overlap_cells(field: CombinedWarpField, reference_size):
    """Cells whose center lands inside the reference image under the local warp."""
    rw, rh = reference_size
    c = field.mesh.centers
    m = field.local_matrices
    q = np.einsum("kij,kj->ki", m, np.column_stack([c, np.ones(len(c))]))
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = q[:, :2] / q[:, 2:3]
    return (q[:, 2] > 0) & (xy[:, 0] >= 0) & (xy[:, 0] <= rw) & (xy[:, 1] >= 0) & (xy[:, 1] <= rh)


def evaluate_warp(field: CombinedWarpField, cs: CorrespondenceSet, labels, frame: UAxisFrame | None = None) -> EvalReport:
    labels = np.asarray(labels)
    inl = labels >= 0
    err = alignment_errors(field, cs.target[inl], cs.reference[inl])
    if frame is None:
        frame = build_u_axis(fit_homography(cs.target, cs.reference), field.mesh, cs)
    s = field.similarity.matrix
    hp = field.target_matrices
    far = far_cells(frame)
    gap = float(np.max(np.linalg.norm(hp[far] - s, axis=(1, 2))))
    centers = field.mesh.centers
    scales = []
    for k in np.flatnonzero(~overlap_cells(field, cs.reference_size)):
        d = decompose_homography(field.target_warps[k])
        scales.append(abs(float(local_scale_change(d, d.to_rotated(centers[k])))))
    spread = max(scales) / min(scales) if scales else 1.0
    return EvalReport(
        overlap_rmse=float(np.sqrt(np.mean(err**2))) if len(err) else 0.0,
        overlap_max_error=float(err.max()) if len(err) else 0.0,
        nonoverlap_scale_spread=float(spread),
        nonoverlap_similarity_gap=gap,
    )
