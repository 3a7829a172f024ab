"""SE(3) helpers on 4x4 homogeneous matrices.

Tangent vectors are ordered rotation first: xi = (phi, rho).
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

_EPS = 1e-10


def hat(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def hat_batch(w: np.ndarray) -> np.ndarray:
    """Skew matrices for an (N, 3) array of vectors."""
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def exp_so3(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < _EPS:
        return np.eye(3) + K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def _left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    b = (1.0 - np.cos(theta)) / theta**2
    c = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + b * K + c * (K @ K)


def exp_se3(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    T = np.eye(4)
    T[:3, :3] = exp_so3(xi[:3])
    T[:3, 3] = _left_jacobian(xi[:3]) @ xi[3:]
    return T


def log_se3(T: np.ndarray) -> np.ndarray:
    phi = log_so3(T[:3, :3])
    rho = np.linalg.solve(_left_jacobian(phi), T[:3, 3])
    return np.concatenate([phi, rho])


def exp_so3_batch(phi: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(phi).as_matrix().reshape(phi.shape[:-1] + (3, 3))


def exp_se3_batch(xi: np.ndarray) -> np.ndarray:
    """Row-wise exp_se3 of an (n, 6) array."""
    xi = np.asarray(xi, dtype=float).reshape(-1, 6)
    phi, rho = xi[:, :3], xi[:, 3:]
    th = np.linalg.norm(phi, axis=1)
    small = th < 1e-6
    ts = np.where(small, 1.0, th)
    b = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(ts)) / ts**2)
    c = np.where(small, 1.0 / 6.0 - th**2 / 120.0, (ts - np.sin(ts)) / ts**3)
    K = hat_batch(phi)
    V = np.eye(3) + b[:, None, None] * K + c[:, None, None] * (K @ K)
    T = np.broadcast_to(np.eye(4), (len(xi), 4, 4)).copy()
    T[:, :3, :3] = exp_so3_batch(phi)
    T[:, :3, 3] = np.einsum("nij,nj->ni", V, rho)
    return T


def inv(T: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    R = T[:3, :3]
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def make(R: np.ndarray | None = None, t=None) -> np.ndarray:
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def transform_points(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ T[:3, :3].T + T[:3, 3]


def yaw_pose(x: float, y: float, z: float, yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return make(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), [x, y, z])


def random_pose(rng: np.random.Generator, trans_scale: float = 1.0) -> np.ndarray:
    R = Rotation.random(random_state=rng).as_matrix()
    return make(R, rng.normal(scale=trans_scale, size=3))


def rotation_angle(R: np.ndarray) -> float:
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def pose_to_tum(T: np.ndarray) -> list[float]:
    q = Rotation.from_matrix(T[:3, :3]).as_quat()  # x, y, z, w
    return [*T[:3, 3].tolist(), *q.tolist()]


def tum_to_pose(vals) -> np.ndarray:
    vals = np.asarray(vals, dtype=float)
    return make(Rotation.from_quat(vals[3:7]).as_matrix(), vals[:3])
