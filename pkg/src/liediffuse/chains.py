"""Internal-coordinate operators for point chains: torsions and bond angles.

A torsion generator rotates every point past a bond about that bond's axis;
a bond-angle generator rotates every point past a vertex about the axis
perpendicular to the two bonds meeting there.  Both are block-diagonal
3x3 operators gated by a Heaviside step over the point index, evaluated in
O(N) without materializing the 3N x 3N matrix.

Point indices are 0-based.  The `centered` variant rotates about the gating
point (bond point x_{i+1} for torsions, vertex x_i for angles), which
preserves bond lengths exactly; `paper_literal` rotates about the origin
with the same axis.  Axes are normalized (and sign-fixed) so the flow
parameter equals the angle increment; bond-angle operators accept
``normalized=False`` for the raw cross-product axis, whose angular velocity
is -||u x v||.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAngle, DegenerateBond, InvalidParams, TooLarge
from .groups import ANGULAR, EPS_SING, A_X, A_Y, A_Z, GroupAction, _as_batch, _unbatch

DENSE_CAP = 64  # largest N for dense materialization (test oracle only)


def _axis_matrix(axis: np.ndarray) -> np.ndarray:
    return axis[0] * A_X + axis[1] * A_Y + axis[2] * A_Z


def dihedral_angle(p0, p1, p2, p3) -> float:
    """Dihedral about the p1-p2 bond, atan2 convention, range (-pi, pi]."""
    b1 = np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)
    b2 = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    b3 = np.asarray(p3, dtype=float) - np.asarray(p2, dtype=float)
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    nb2 = np.linalg.norm(b2)
    if min(np.linalg.norm(n1), np.linalg.norm(n2), nb2) < EPS_SING:
        raise DegenerateAngle("dihedral undefined: collinear points")
    return float(np.arctan2(np.dot(np.cross(n1, n2), b2 / nb2), np.dot(n1, n2)))


def bond_angle(p0, p1, p2) -> float:
    """Angle at vertex p1 between the bonds to p0 and p2, in [0, pi]."""
    u = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    v = np.asarray(p0, dtype=float) - np.asarray(p1, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if min(nu, nv) < EPS_SING:
        raise DegenerateAngle("bond angle undefined: coincident points")
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


@dataclass(frozen=True)
class StructuredOperator:
    """Gated block-diagonal so(3) operator on an N-point cloud.

    Acts as axis.A on every point with index >= gate_start and as zero
    below; `center` shifts the rotation axis line (None = through origin).
    `rate` is the rotation angle per unit flow parameter.
    """

    n_points: int
    gate_start: int
    axis: np.ndarray
    center: np.ndarray | None = None
    rate: float = 1.0

    def apply(self, vecs: np.ndarray) -> np.ndarray:
        """Linear part: gated (axis.A) applied blockwise to (N, 3) vectors."""
        vecs = np.asarray(vecs, dtype=float)
        out = np.zeros_like(vecs)
        k = self.rate * _axis_matrix(self.axis)
        out[self.gate_start :] = vecs[self.gate_start :] @ k.T
        return out

    def field(self, positions: np.ndarray) -> np.ndarray:
        """Fundamental field at the given positions, shape (N, 3)."""
        positions = np.asarray(positions, dtype=float)
        if self.center is None:
            return self.apply(positions)
        return self.apply(positions - self.center)

    def flow(self, tau: float, positions: np.ndarray) -> np.ndarray:
        """Exact finite flow: rotate the gated points by angle rate * tau."""
        positions = np.asarray(positions, dtype=float).copy()
        ang = self.rate * tau
        k = _axis_matrix(self.axis)
        rot = np.eye(3) + np.sin(ang) * k + (1.0 - np.cos(ang)) * (k @ k)
        c = np.zeros(3) if self.center is None else self.center
        moved = positions[self.gate_start :]
        positions[self.gate_start :] = (moved - c) @ rot.T + c
        return positions

    def dense(self) -> np.ndarray:
        """Dense 3N x 3N matrix of the linear part (N <= 64 only)."""
        if self.n_points > DENSE_CAP:
            raise TooLarge(f"dense materialization capped at N = {DENSE_CAP}")
        k = self.rate * _axis_matrix(self.axis)
        out = np.zeros((3 * self.n_points, 3 * self.n_points))
        for j in range(self.gate_start, self.n_points):
            out[3 * j : 3 * j + 3, 3 * j : 3 * j + 3] = k
        return out


def torsion_operator(
    positions: np.ndarray, i: int, variant: str = "centered"
) -> StructuredOperator:
    """Generator of the dihedral angle about bond (i, i+1), 1 <= i <= N-3.

    The dihedral gamma_i is defined by points (i-1, i, i+1, i+2); flowing by
    tau increases it by tau (centered variant exactly; the literal variant
    matches only when the bond line passes through the origin).
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if positions.ndim != 2 or positions.shape[1] != 3 or n < 4:
        raise InvalidParams(f"need an (N, 3) chain with N >= 4, got {positions.shape}")
    if not 1 <= i <= n - 3:
        raise InvalidParams(f"torsion index must satisfy 1 <= i <= N-3, got {i}")
    if variant not in ("centered", "paper_literal"):
        raise InvalidParams(f"unknown torsion variant {variant!r}")
    bond = positions[i + 1] - positions[i]
    nb = np.linalg.norm(bond)
    if nb < EPS_SING:
        raise DegenerateBond(f"points {i} and {i + 1} coincide")
    center = positions[i + 1].copy() if variant == "centered" else None
    return StructuredOperator(
        n_points=n, gate_start=i + 2, axis=bond / nb, center=center
    )


def bond_angle_operator(
    positions: np.ndarray,
    i: int,
    variant: str = "centered",
    normalized: bool = True,
) -> StructuredOperator:
    """Generator of the bond angle at vertex i, 1 <= i <= N-2.

    With ``normalized=True`` the axis is the unit cross product of the two
    bond vectors with the sign chosen so d(beta_i)/d(tau) = +1; with
    ``normalized=False`` the raw cross product is used and the angle shrinks
    at rate ||u x v||.
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if positions.ndim != 2 or positions.shape[1] != 3 or n < 3:
        raise InvalidParams(f"need an (N, 3) chain with N >= 3, got {positions.shape}")
    if not 1 <= i <= n - 2:
        raise InvalidParams(f"vertex index must satisfy 1 <= i <= N-2, got {i}")
    if variant not in ("centered", "paper_literal"):
        raise InvalidParams(f"unknown bond-angle variant {variant!r}")
    u = positions[i + 1] - positions[i]
    v = positions[i - 1] - positions[i]
    cross = np.cross(u, v)
    nc = np.linalg.norm(cross)
    if nc < EPS_SING:
        raise DegenerateAngle(f"bonds at vertex {i} are parallel")
    center = positions[i].copy() if variant == "centered" else None
    if normalized:
        axis, rate = -cross / nc, 1.0  # unit angle velocity
    else:
        axis, rate = cross / nc, nc  # raw paper form: d(beta)/d(tau) = -nc
    return StructuredOperator(
        n_points=n, gate_start=i + 1, axis=axis, center=center, rate=rate
    )


# ---------------------------------------------------------------------------
# Chain groups: torsion / bond-angle flows as constrained GroupActions
# ---------------------------------------------------------------------------


class _ChainGroup(GroupAction):
    """Shared machinery for torsion and bond-angle chain groups."""

    constrained = True

    def __init__(self, reference: np.ndarray, indices, variant: str):
        reference = np.asarray(reference, dtype=float)
        if reference.ndim != 2 or reference.shape[1] != 3:
            raise InvalidParams("chain reference must be an (N, 3) array")
        n = reference.shape[0]
        if n < self._min_points():
            raise InvalidParams(
                f"chain length >= {self._min_points()} required, got {n}"
            )
        lo, hi = self._index_range(n)
        indices = list(range(lo, hi + 1)) if indices is None else [int(j) for j in indices]
        for j in indices:
            if not lo <= j <= hi:
                raise InvalidParams(f"index {j} outside [{lo}, {hi}] for N = {n}")
        self.reference = reference
        self.indices = tuple(indices)
        self.variant = variant
        self.n_points = n
        self.dim_x = 3 * n
        self.dim_g = len(indices)
        self.domains = (ANGULAR,) * self.dim_g

    def _operators(self, positions: np.ndarray) -> list[StructuredOperator]:
        return [self._operator(positions, j) for j in self.indices]

    def to_flow(self, x):
        xb, single = _as_batch(x, self.dim_x)
        out = np.empty((xb.shape[0], self.dim_g))
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            out[b] = [self._measure(pos, j) for j in self.indices]
        return _unbatch(out, single)

    def from_flow(self, tau):
        tb, single = _as_batch(tau, self.dim_g)
        out = np.empty((tb.shape[0], self.dim_x))
        for b in range(tb.shape[0]):
            pos = self.reference.copy()
            for k, j in enumerate(self.indices):  # ascending: earlier set stay put
                op = self._operator(pos, j)
                pos = op.flow(tb[b, k] - self._measure(pos, j), pos)
            out[b] = pos.reshape(-1)
        return _unbatch(out, single)

    def reference_point(self):
        return self.from_flow(self.to_flow(self.reference.reshape(-1)))

    def fundamental_matrix(self, x):
        xb, single = _as_batch(x, self.dim_x)
        out = np.empty((xb.shape[0], self.dim_x, self.dim_g))
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            for k, op in enumerate(self._operators(pos)):
                out[b, :, k] = op.field(pos).reshape(-1)
        return _unbatch(out, single)

    def generator_matrix(self, x, i):
        xb, _ = _as_batch(x, self.dim_x)
        pos = xb[0].reshape(self.n_points, 3)
        op = self._operator(pos, self.indices[i])
        dense = op.dense()
        if op.center is not None:
            # centered field K(x_j - x_c) is linear: subtract the K column of
            # the center point from every gated row block
            c_idx = self._center_index(self.indices[i])
            k = op.rate * _axis_matrix(op.axis)
            for j in range(op.gate_start, self.n_points):
                dense[3 * j : 3 * j + 3, 3 * c_idx : 3 * c_idx + 3] -= k
        return dense

    def casimir_terms(self, x):
        xb, single = _as_batch(x, self.dim_x)
        out = np.empty((xb.shape[0], self.dim_g, self.dim_x))
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            for k, op in enumerate(self._operators(pos)):
                out[b, k] = op.apply(op.field(pos)).reshape(-1)
        return _unbatch(out, single)

    def exp_apply(self, tau, x):
        # sequential exact flows, each operator rebuilt at the current
        # intermediate positions so every rotation is an isometry about the
        # live bond/vertex (stale axes would tear bonds)
        tb, _ = _as_batch(tau, self.dim_g)
        xb, single = _as_batch(x, self.dim_x)
        tb = np.broadcast_to(tb, (xb.shape[0], self.dim_g))
        out = np.empty_like(xb)
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(self.n_points, 3)
            for k, j in enumerate(self.indices):
                pos = self._operator(pos, j).flow(tb[b, k], pos)
            out[b] = pos.reshape(-1)
        return _unbatch(out, single)

    # subclass hooks ---------------------------------------------------------

    def _min_points(self) -> int:
        raise NotImplementedError

    def _index_range(self, n: int) -> tuple[int, int]:
        raise NotImplementedError

    def _operator(self, positions, j) -> StructuredOperator:
        raise NotImplementedError

    def _measure(self, positions, j) -> float:
        raise NotImplementedError

    def _center_index(self, j) -> int:
        raise NotImplementedError


class TorsionChainGroup(_ChainGroup):
    """Dihedral-angle flows of an N-point chain (constrained group)."""

    def __init__(self, reference, bonds=None, variant: str = "centered"):
        super().__init__(reference, bonds, variant)
        self.group_id = f"Torsion(N={self.n_points})"

    def _min_points(self):
        return 4

    def _index_range(self, n):
        return 1, n - 3

    def _operator(self, positions, j):
        return torsion_operator(positions, j, self.variant)

    def _measure(self, positions, j):
        return dihedral_angle(
            positions[j - 1], positions[j], positions[j + 1], positions[j + 2]
        )

    def _center_index(self, j):
        return j + 1


class BondAngleChainGroup(_ChainGroup):
    """Bond-angle flows of an N-point chain (constrained group)."""

    def __init__(self, reference, vertices=None, variant: str = "centered"):
        super().__init__(reference, vertices, variant)
        self.group_id = f"BondAngle(N={self.n_points})"

    def _min_points(self):
        return 3

    def _index_range(self, n):
        return 1, n - 2

    def _operator(self, positions, j):
        return bond_angle_operator(positions, j, self.variant)

    def _measure(self, positions, j):
        return bond_angle(positions[j - 1], positions[j], positions[j + 1])

    def _center_index(self, j):
        return j
