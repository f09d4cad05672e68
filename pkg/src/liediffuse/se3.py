"""Global SE(3) action on an N-point cloud.

Rotations are parametrized by three angles (phi1, theta1, phi2) with the
composition R = Rz(phi1) Ry(theta1) Rz(phi2): theta1 and phi1 orient the
first point, phi2 spins the cloud about the first point's direction.  All
rotations are computed and applied about the cloud's center of mass, so
they commute with the three center-of-mass translation coordinates.  The
chart is degenerate when the centered first point lies on the z-axis
(phi1 undefined) or the second point lies along the first point's axis in
the rotated frame (phi2 undefined).
"""

from __future__ import annotations

import numpy as np

from .errors import GimbalDegeneracy, InvalidParams
from .groups import (
    ANGULAR,
    EPS_SING,
    UNBOUNDED,
    A_X,
    A_Y,
    A_Z,
    FlowCoords,
    GroupAction,
    _as_batch,
    _unbatch,
)


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _euler_rotation(phi1: float, theta1: float, phi2: float) -> np.ndarray:
    return rot_z(phi1) @ rot_y(theta1) @ rot_z(phi2)


def _template_cloud(n: int) -> np.ndarray:
    """Deterministic centered reference cloud with x1 on +z, x2 in the
    x > 0 half of the xz-plane."""
    pts = np.zeros((n, 3))
    pts[0] = (0.0, 0.0, 1.0)
    if n >= 2:
        pts[1] = (1.0, 0.0, 0.25)
    for mu in range(2, n - 1):
        a = 1.7 * (mu + 1)
        pts[mu] = (0.8 * np.cos(a), 0.8 * np.sin(a), 0.4 * (-1.0) ** mu)
    if n >= 3:
        pts[n - 1] = -pts[: n - 1].sum(axis=0)  # center of mass at the origin
    return pts


class GlobalSe3Group(GroupAction):
    """SE(3) acting globally on N points: 3 rotation angles + 3 translations.

    Flow coordinates are (phi1, theta1, phi2, tx, ty, tz) where the
    translations are the center-of-mass position.  The group is constrained
    (dim_g = 6 < 3N); from_flow rebuilds poses of the stored reference
    cloud, so the chart round-trips on that orbit.
    """

    constrained = True

    def __init__(self, n_points: int, reference: np.ndarray | None = None):
        if n_points < 2:
            raise InvalidParams(f"GlobalSE3 requires N >= 2 points, got {n_points}")
        self.group_id = f"GlobalSE3(N={n_points})"
        self.n_points = n_points
        self.dim_x = 3 * n_points
        self.dim_g = 6
        self.domains = (ANGULAR, ANGULAR, ANGULAR) + (UNBOUNDED,) * 3
        if reference is None:
            reference = _template_cloud(n_points)
        else:
            reference = np.asarray(reference, dtype=float)
            if reference.shape != (n_points, 3):
                raise InvalidParams("reference cloud shape must be (N, 3)")
            reference = reference - reference.mean(axis=0)
        self.reference = reference

    # -- chart ------------------------------------------------------------

    def _angles_one(self, pos: np.ndarray) -> np.ndarray:
        c = pos.mean(axis=0)
        x1 = pos[0] - c
        r1 = np.linalg.norm(x1)
        rho1 = np.hypot(x1[0], x1[1])
        if r1 < EPS_SING:
            raise GimbalDegeneracy("first point at the center of mass", point_index=0)
        if rho1 < EPS_SING * max(1.0, r1):
            raise GimbalDegeneracy(
                "first point on the z-axis: phi1 undefined", point_index=0
            )
        theta1 = np.arctan2(rho1, x1[2])
        phi1 = np.arctan2(x1[1], x1[0])
        if self.n_points < 2:
            return np.array([phi1, theta1, 0.0])
        x2t = rot_y(-theta1) @ rot_z(-phi1) @ (pos[1] - c)
        if np.hypot(x2t[0], x2t[1]) < EPS_SING * max(1.0, np.linalg.norm(x2t)):
            raise GimbalDegeneracy(
                "second point along the first point's axis: phi2 undefined",
                point_index=1,
            )
        phi2 = np.arctan2(x2t[1], x2t[0])
        return np.array([phi1, theta1, phi2])

    def check_nonsingular(self, x):
        xb, _ = _as_batch(x, self.dim_x)
        for b in range(xb.shape[0]):
            self._angles_one(xb[b].reshape(self.n_points, 3))

    def to_flow(self, x):
        xb, single = _as_batch(x, self.dim_x)
        out = np.empty((xb.shape[0], 6))
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            out[b, :3] = self._angles_one(pos)
            out[b, 3:] = pos.mean(axis=0)
        return _unbatch(out, single)

    def from_flow(self, tau):
        tb, single = _as_batch(tau, 6)
        out = np.empty((tb.shape[0], self.dim_x))
        for b in range(tb.shape[0]):
            rot = _euler_rotation(tb[b, 0], tb[b, 1], tb[b, 2])
            out[b] = (self.reference @ rot.T + tb[b, 3:]).reshape(-1)
        return _unbatch(out, single)

    def reference_point(self):
        return self.reference.reshape(-1).copy()

    # -- generators ---------------------------------------------------------

    def _rotation_axes(self, pos: np.ndarray) -> np.ndarray:
        """Unit axes of the three rotation generators at this pose."""
        phi1, theta1, _ = self._angles_one(pos)
        ax1 = np.array([0.0, 0.0, 1.0])
        ax2 = np.array([-np.sin(phi1), np.cos(phi1), 0.0])
        ax3 = np.array(
            [np.sin(theta1) * np.cos(phi1), np.sin(theta1) * np.sin(phi1), np.cos(theta1)]
        )
        return np.stack([ax1, ax2, ax3])

    def fundamental_matrix(self, x):
        xb, single = _as_batch(x, self.dim_x)
        out = np.zeros((xb.shape[0], self.dim_x, 6))
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            centered = pos - pos.mean(axis=0)
            for k, axis in enumerate(self._rotation_axes(pos)):
                mat = axis[0] * A_X + axis[1] * A_Y + axis[2] * A_Z
                out[b, :, k] = (centered @ mat.T).reshape(-1)
            for k in range(3):  # translations move every point equally
                out[b, k::3, 3 + k] = 1.0
        return _unbatch(out, single)

    def generator_matrix(self, x, i):
        if i >= 3:
            return None  # translation generators are affine
        xb, _ = _as_batch(x, self.dim_x)
        pos = xb[0].reshape(self.n_points, 3)
        axis = self._rotation_axes(pos)[i]
        k = axis[0] * A_X + axis[1] * A_Y + axis[2] * A_Z
        n = self.n_points
        centering = np.eye(3 * n) - np.tile(np.eye(3), (n, n)) / n
        blocks = np.kron(np.eye(n), k)
        return blocks @ centering

    def casimir_terms(self, x):
        xb, single = _as_batch(x, self.dim_x)
        out = np.zeros((xb.shape[0], 6, self.dim_x))
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            centered = pos - pos.mean(axis=0)
            for k, axis in enumerate(self._rotation_axes(pos)):
                mat = axis[0] * A_X + axis[1] * A_Y + axis[2] * A_Z
                out[b, k] = (centered @ (mat @ mat).T).reshape(-1)
        return _unbatch(out, single)

    def exp_apply(self, tau, x):
        tb, _ = _as_batch(tau, 6)
        xb, single = _as_batch(x, self.dim_x)
        tb = np.broadcast_to(tb, (xb.shape[0], 6))
        out = np.empty_like(xb)
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            c = pos.mean(axis=0)
            rot = _euler_rotation(tb[b, 0], tb[b, 1], tb[b, 2])
            out[b] = ((pos - c) @ rot.T + c + tb[b, 3:]).reshape(-1)
        return _unbatch(out, single)


def global_se3_group(n_points: int, reference: np.ndarray | None = None) -> GlobalSe3Group:
    """GroupAction for global rigid motions of an N-point cloud."""
    return GlobalSe3Group(n_points, reference)


def angles_from_positions(g: GlobalSe3Group, positions: np.ndarray) -> FlowCoords:
    """Rotation angles and center of mass of a pose (the full SE(3) chart).

    Raises GimbalDegeneracy with the offending point index when the first
    point sits on the z-axis of the centered frame or the second point lies
    along the first point's axis.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 2:
        pos = pos.reshape(-1)
    return FlowCoords(g.to_flow(pos), g.domains)
