"""Projective and similarity transforms, the DLT solver, and the rotated-frame
decomposition of a homography used to find its distortion axis.

Points are passed around as numpy arrays of shape ``(2,)`` or ``(N, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AtInfinity,
    DegenerateConfiguration,
    NonFiniteInput,
    TooFewCorrespondences,
)

SINGULARITY_FLOOR = 1e-12
DEGENERACY_RATIO = 1.0 + 1e-8
# relative rank floor: second-smallest singular value vs the largest
RANK_FLOOR = 1e-13


def canonicalize(m):
    """Scale ``m`` so its lower-right entry is 1.

    Returns ``(matrix, canonical)``. When the lower-right entry is too small
    to divide by, the matrix is scaled to unit Frobenius norm and
    ``canonical`` is False.
    """
    m = np.asarray(m, dtype=float)
    if abs(m[2, 2]) >= SINGULARITY_FLOOR:
        return m / m[2, 2], True
    return m / np.linalg.norm(m), False


def _is_singular(m):
    # relative to the largest singular value so pixel-scale translations are fine
    s = np.linalg.svd(m, compute_uv=False)
    return not s[-1] > 1e-14 * s[0]


@dataclass(frozen=True, eq=False)
class Homography:
    """Invertible 3x3 projective map ``Y' ~ m @ Y``, stored canonicalized."""

    m: np.ndarray
    canonical: bool = True

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonFiniteInput("homography has non-finite entries", "geometry")
        if _is_singular(m):
            raise DegenerateConfiguration("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_matrix(cls, m) -> Homography:
        mc, canonical = canonicalize(m)
        return cls(mc, canonical)

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty) -> Homography:
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def inverse(self) -> Homography:
        return Homography.from_matrix(np.linalg.inv(self.m))

    def __matmul__(self, other) -> Homography:
        if isinstance(other, (Homography, SimilarityTransform)):
            other = other.matrix
        return Homography.from_matrix(self.m @ np.asarray(other, dtype=float))

    @property
    def matrix(self):
        return self.m

    def apply(self, pts):
        return apply_homography(self, pts)

    def __repr__(self):
        return f"Homography({np.array2string(self.m, precision=6)})"


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(angle) p + (tx, ty)``."""

    scale: float
    angle: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        for name in ("scale", "angle", "tx", "ty"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.scale > 0:
            raise ValueError(f"similarity scale must be positive, got {self.scale}")

    @property
    def matrix(self):
        c, s = np.cos(self.angle), np.sin(self.angle)
        k = self.scale
        return np.array([[k * c, -k * s, self.tx], [k * s, k * c, self.ty], [0.0, 0.0, 1.0]])

    @property
    def rotation_magnitude(self) -> float:
        # principal angle folded onto [0, pi]
        return abs(float(np.arctan2(np.sin(self.angle), np.cos(self.angle))))

    def as_homography(self) -> Homography:
        return Homography(self.matrix)

    def apply(self, pts):
        pts = np.asarray(pts, dtype=float)
        m = self.matrix
        return pts @ m[:2, :2].T + m[:2, 2]


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_homography(h, pts):
    """Map points through ``h``. Accepts ``(2,)`` or ``(N, 2)`` input."""
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=float)
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    p = np.atleast_2d(pts)
    num = p @ m[:2, :2].T + m[:2, 2]
    w = p @ m[2, :2] + m[2, 2]
    if np.any(np.abs(w) < SINGULARITY_FLOOR):
        raise AtInfinity("point maps to the line at infinity", "geometry")
    out = num / w[:, None]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# DLT


def conditioning_transform(pts):
    """Similarity moving ``pts`` to zero mean and RMS distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    mean = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - mean) ** 2, axis=1)))
    if not rms > 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])


def dlt_rows(src, dst):
    """The two independent cross-product rows per correspondence, ``(2N, 9)``.

    Row ``2i`` is ``[0, -Y, y'Y]`` and row ``2i+1`` is ``[Y, 0, -x'Y]`` with
    ``Y = (x, y, 1)``.
    """
    src = np.atleast_2d(np.asarray(src, dtype=float))
    dst = np.atleast_2d(np.asarray(dst, dtype=float))
    n = len(src)
    Y = np.column_stack([src, np.ones(n)])
    xp, yp = dst[:, 0:1], dst[:, 1:2]
    A = np.zeros((2 * n, 9))
    A[0::2, 3:6] = -Y
    A[0::2, 6:9] = yp * Y
    A[1::2, 0:3] = Y
    A[1::2, 6:9] = -xp * Y
    return A


@dataclass(frozen=True, eq=False)
class DltSystem:
    """Stacked DLT rows plus the conditioning used to build them.

    ``t_src`` and ``t_dst`` are identity when conditioning is disabled.
    """

    rows: np.ndarray
    t_src: np.ndarray
    t_dst: np.ndarray

    @property
    def n(self):
        return self.rows.shape[0] // 2

    def decondition(self, hn):
        return np.linalg.solve(self.t_dst, hn @ self.t_src)


def _check_pairs(src, dst):
    src = np.atleast_2d(np.asarray(src, dtype=float))
    dst = np.atleast_2d(np.asarray(dst, dtype=float))
    if src.shape != dst.shape or src.shape[1] != 2:
        raise ValueError(f"point arrays must both be (N, 2), got {src.shape} and {dst.shape}")
    if len(src) < 4:
        raise TooFewCorrespondences(
            f"need at least 4 correspondences, got {len(src)}", "geometry"
        )
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise NonFiniteInput("correspondence coordinates must be finite", "geometry")
    return src, dst


def build_dlt_system(src, dst, condition=True) -> DltSystem:
    """Assemble the ``2N x 9`` DLT matrix for ``src -> dst``."""
    src, dst = _check_pairs(src, dst)
    if condition:
        t_src = conditioning_transform(src)
        t_dst = conditioning_transform(dst)
        src = src @ t_src[:2, :2].T + t_src[:2, 2]
        dst = dst @ t_dst[:2, :2].T + t_dst[:2, 2]
    else:
        t_src = t_dst = np.eye(3)
    return DltSystem(dlt_rows(src, dst), t_src, t_dst)


def null_vector(A, cell=None, module="geometry"):
    """Least significant right singular vector of ``A``.

    Raises DegenerateConfiguration when the minimizer is not unique.
    """
    full = A.shape[0] < A.shape[1]
    _, s, vt = np.linalg.svd(A, full_matrices=full)
    s = np.concatenate([s, np.zeros(vt.shape[0] - len(s))])
    _check_gap(s, cell, module)
    return vt[-1]


def _check_gap(s, cell=None, module="geometry"):
    where = f" in cell {cell}" if cell is not None else ""
    if not s[-2] > RANK_FLOOR * s[0] or not s[-2] > DEGENERACY_RATIO * s[-1]:
        raise DegenerateConfiguration(
            f"DLT solution is not unique{where} (singular values {s[-2]:.3g}, {s[-1]:.3g})",
            cell=cell,
            module=module,
        )


def solve_dlt(system: DltSystem) -> Homography:
    """Minimize ``|A h|`` subject to ``|h| = 1`` and return the de-conditioned homography."""
    h = null_vector(system.rows)
    return Homography.from_matrix(system.decondition(h.reshape(3, 3)))


def fit_homography(src, dst, condition=True) -> Homography:
    return solve_dlt(build_dlt_system(src, dst, condition))


# ---------------------------------------------------------------------------
# rotated-frame decomposition


@dataclass(frozen=True, eq=False)
class ProjectiveDecomposition:
    """``H R(theta) = Q = Qa Qp`` with ``Q`` having a zero (3, 2) entry.

    ``Qp`` is the identity with ``-c`` in its (3, 1) entry, so the projective
    part only depends on the rotated coordinate ``u``.
    """

    theta: float
    c: float
    q: np.ndarray
    qa: np.ndarray
    qp: np.ndarray
    ka: float

    @property
    def is_affine(self):
        return self.c == 0.0

    def to_rotated(self, pts):
        """Express target-frame ``(x, y)`` points as ``(u, v)``."""
        r = rotation(self.theta)[:2, :2]
        return np.asarray(pts, dtype=float) @ r


def decompose_homography(h) -> ProjectiveDecomposition:
    """Rotate the source frame so the projective row of ``h`` lies along ``u``.

    ``theta`` is chosen so that ``q7 = -c`` with ``c >= 0``; the parameter
    ``u`` then increases toward the line mapped to infinity.
    """
    m = h.m if isinstance(h, Homography) else canonicalize(h)[0]
    h7, h8 = m[2, 0], m[2, 1]
    c = float(np.hypot(h7, h8))
    theta = float(np.arctan2(-h8, -h7)) if c > 0 else 0.0
    q = m @ rotation(theta)
    qa = np.array(
        [
            [q[0, 0] + c * q[0, 2], q[0, 1], q[0, 2]],
            [q[1, 0] + c * q[1, 2], q[1, 1], q[1, 2]],
            [0.0, 0.0, 1.0],
        ]
    )
    qp = np.eye(3)
    qp[2, 0] = -c
    ka = float(qa[0, 0] * qa[1, 1] - qa[0, 1] * qa[1, 0])
    return ProjectiveDecomposition(theta, c, q, qa, qp, ka)


def local_scale_change(d: ProjectiveDecomposition, p):
    """Jacobian determinant ``ka / (1 - c u)^3`` at rotated-frame point(s) ``p``."""
    p = np.asarray(p, dtype=float)
    u = p[..., 0]
    w = 1.0 - d.c * u
    if np.any(np.abs(w) < SINGULARITY_FLOOR):
        raise AtInfinity("point lies on the line mapped to infinity", "geometry")
    return d.ka / w**3
