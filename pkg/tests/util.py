import numpy as np


def random_homography(rng, size=500.0, persp=4e-4):
    """Well-conditioned projective map keeping [0, size]^2 far from infinity."""
    a = np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2))
    t = rng.uniform(-0.2 * size, 0.2 * size, 2)
    m = np.eye(3)
    m[:2, :2] = a
    m[:2, 2] = t
    m[2, :2] = rng.uniform(-persp, persp, 2)
    return m


def canon(m):
    return np.asarray(m) / m[2, 2]


def rel_fro(a, b):
    return np.linalg.norm(canon(a) - canon(b)) / np.linalg.norm(canon(b))


def map_points(m, pts):
    h = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(m).T
    return h[:, :2] / h[:, 2:3]


def fd_jacobian_det(m, p, step=1e-3):
    """Central-difference Jacobian determinant of the projective map ``m`` at ``p``."""
    p = np.asarray(p, dtype=float)
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    dx = (map_points(m, [p + ex])[0] - map_points(m, [p - ex])[0]) / (2 * step)
    dy = (map_points(m, [p + ey])[0] - map_points(m, [p - ey])[0]) / (2 * step)
    return dx[0] * dy[1] - dx[1] * dy[0]
