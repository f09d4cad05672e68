"""Lie group actions on R^n: generators, fundamental fields, flow coordinates.

Each group is described by an ordered basis of infinitesimal generators
acting on the data space.  For a basis element A_i the fundamental field at
x is the velocity A_i(x) x of the one-parameter flow exp(tau A_i) through x,
and the flow coordinates tau are the parameters that carry a fixed reference
point to x.  Groups with point-dependent generators (the polar directions of
the spherical charts) freeze the generator matrix at the current state; the
frozen matrices are what enter the Casimir field sum_i A_i(x)^2 x and the
noise term of the reverse sampler.

Conventions:
  * the radial flow coordinate is log ||x|| by default (`log_radius`); the
    raw radius is available behind `radius_convention="raw_radius"`,
  * angular coordinates are reported in the principal branch (atan2 range)
    and treated as unbounded reals everywhere else,
  * points within EPS_SING of a chart's singular set are rejected with
    SingularPoint; samplers use clamp_nonsingular instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, SingularPoint

EPS_SING = 1e-8

UNBOUNDED = "unbounded"
ANGULAR = "angular"


@dataclass(frozen=True)
class FlowCoords:
    """Flow-coordinate vector plus per-coordinate domain tags."""

    values: np.ndarray
    domains: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape[-1] != len(self.domains):
            raise InvalidParams(
                f"flow coords have {values.shape[-1]} entries, "
                f"expected {len(self.domains)}"
            )


def _as_batch(x, dim: int):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise InvalidParams(f"expected vectors of length {dim}, got {x.shape}")
        return x[None, :], True
    if x.shape[-1] != dim:
        raise InvalidParams(f"expected trailing dimension {dim}, got {x.shape}")
    return x.reshape(-1, dim), False


def _unbatch(out, single: bool, shape=None):
    if single:
        return out[0]
    if shape is not None:
        return out.reshape(shape)
    return out


class GroupAction:
    """Base class: a Lie group representation with flow coordinates.

    Subclasses fill in the chart-specific pieces; everything here is pure
    and safe for concurrent use (instances are immutable after init).
    """

    group_id: str = "abstract"
    dim_x: int = 0
    dim_g: int = 0
    constrained: bool = False
    domains: tuple[str, ...] = ()
    radius_convention: str = "log_radius"

    # -- chart ------------------------------------------------------------

    def to_flow(self, x: np.ndarray) -> np.ndarray:
        """Flow coordinates of x (principal branch); raises SingularPoint."""
        raise NotImplementedError

    def from_flow(self, tau: np.ndarray) -> np.ndarray:
        """Inverse chart; total on finite inputs."""
        raise NotImplementedError

    def reference_point(self) -> np.ndarray:
        """Point mapped to by tau = 0."""
        raise NotImplementedError

    # -- generators --------------------------------------------------------

    def fundamental_matrix(self, x: np.ndarray) -> np.ndarray:
        """Matrix of fundamental fields, shape (..., dim_x, dim_g)."""
        raise NotImplementedError

    def generator_matrix(self, x: np.ndarray, i: int) -> np.ndarray | None:
        """Frozen generator matrix A_i(x), or None for affine generators."""
        raise NotImplementedError

    def casimir_terms(self, x: np.ndarray) -> np.ndarray:
        """Per-generator A_i(x)^2 x, shape (..., dim_g, dim_x)."""
        raise NotImplementedError

    def casimir_field(self, x: np.ndarray) -> np.ndarray:
        """Quadratic Casimir field sum_i A_i(x)^2 x."""
        return self.casimir_terms(x).sum(axis=-2)

    def divergence_scalars(self, x: np.ndarray) -> np.ndarray:
        """Per-generator divergence div(A_i x), shape (..., dim_g).

        Default is a central finite difference of the fundamental fields
        with step h = 1e-6 (1 + ||x||); subclasses override with closed
        forms where available.
        """
        xb, single = _as_batch(x, self.dim_x)
        out = np.zeros((xb.shape[0], self.dim_g))
        h = 1e-6 * (1.0 + np.linalg.norm(xb, axis=-1))
        for k in range(self.dim_x):
            step = np.zeros_like(xb)
            step[:, k] = h
            fp = self.fundamental_matrix(xb + step)
            fm = self.fundamental_matrix(xb - step)
            out += (fp[:, k, :] - fm[:, k, :]) / (2.0 * h)[:, None]
        return _unbatch(out, single)

    def divergence_field(self, x: np.ndarray) -> np.ndarray:
        """Divergence-induced velocity sum_i div(A_i x) A_i x."""
        fund = self.fundamental_matrix(x)
        div = self.divergence_scalars(x)
        return np.einsum("...ij,...j->...i", fund, div)

    def exp_apply(self, tau: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Apply the product of exponentials prod_i exp(tau_i A_i(x)) to x.

        Point-dependent generator matrices are frozen at the input x.
        """
        raise NotImplementedError

    # -- singular set -------------------------------------------------------

    def check_nonsingular(self, x: np.ndarray) -> None:
        """Raise SingularPoint if any point lies in the singular set."""
        return None

    def clamp_nonsingular(self, x: np.ndarray) -> np.ndarray:
        """Deterministically push points out of the singular set."""
        return np.asarray(x, dtype=float)

    # -- derived ------------------------------------------------------------

    def subset(self, indices) -> "SubsetGroup":
        """Constrained group using only the listed generator indices."""
        return SubsetGroup(self, tuple(int(i) for i in indices))

    def __repr__(self):
        return f"{type(self).__name__}(dim_x={self.dim_x}, dim_g={self.dim_g})"


# ---------------------------------------------------------------------------
# T(n): translations; standard score matching
# ---------------------------------------------------------------------------


class TranslationGroup(GroupAction):
    """T(n) acting by x -> x + v.  The fundamental matrix is the identity."""

    def __init__(self, n: int):
        if n < 1:
            raise InvalidParams(f"TranslationN requires n >= 1, got {n}")
        self.group_id = f"TranslationN({n})"
        self.dim_x = n
        self.dim_g = n
        self.domains = (UNBOUNDED,) * n

    def to_flow(self, x):
        return np.asarray(x, dtype=float).copy()

    def from_flow(self, tau):
        return np.asarray(tau, dtype=float).copy()

    def reference_point(self):
        return np.zeros(self.dim_x)

    def fundamental_matrix(self, x):
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.dim_x)
        return np.broadcast_to(eye, x.shape[:-1] + eye.shape).copy()

    def generator_matrix(self, x, i):
        return None  # translation generators are affine, not matrices

    def casimir_terms(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim_g, self.dim_x))

    def divergence_scalars(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim_g,))

    def exp_apply(self, tau, x):
        return np.asarray(x, dtype=float) + np.asarray(tau, dtype=float)


# ---------------------------------------------------------------------------
# SO(2) x R+: rotations and dilations of the plane
# ---------------------------------------------------------------------------

A_THETA_2D = np.array([[0.0, -1.0], [1.0, 0.0]])


class So2DilationGroup(GroupAction):
    """SO(2) x R+ on R^2 with basis A_r = I, A_theta = [[0,-1],[1,0]]."""

    def __init__(self, radius_convention: str = "log_radius"):
        if radius_convention not in ("log_radius", "raw_radius"):
            raise InvalidParams(f"unknown radius convention {radius_convention!r}")
        self.group_id = "SO2Dilation"
        self.dim_x = 2
        self.dim_g = 2
        self.domains = (UNBOUNDED, ANGULAR)
        self.radius_convention = radius_convention

    def check_nonsingular(self, x):
        xb, _ = _as_batch(x, 2)
        if np.any(np.linalg.norm(xb, axis=-1) < EPS_SING):
            raise SingularPoint("point within EPS_SING of the origin")

    def clamp_nonsingular(self, x):
        xb, single = _as_batch(x, 2)
        xb = xb.copy()
        floor = 2.0 * EPS_SING  # margin keeps clamped points off the test
        r = np.linalg.norm(xb, axis=-1)
        bad = r < EPS_SING
        xb[bad & (r > 0)] *= (floor / r[bad & (r > 0), None])
        xb[bad & (r == 0)] = np.array([floor, 0.0])
        return _unbatch(xb, single)

    def to_flow(self, x):
        xb, single = _as_batch(x, 2)
        self.check_nonsingular(xb)
        r = np.linalg.norm(xb, axis=-1)
        theta = np.arctan2(xb[:, 1], xb[:, 0])
        rad = np.log(r) if self.radius_convention == "log_radius" else r
        return _unbatch(np.stack([rad, theta], axis=-1), single)

    def from_flow(self, tau):
        tb, single = _as_batch(tau, 2)
        r = np.exp(tb[:, 0]) if self.radius_convention == "log_radius" else tb[:, 0]
        out = np.stack([r * np.cos(tb[:, 1]), r * np.sin(tb[:, 1])], axis=-1)
        return _unbatch(out, single)

    def reference_point(self):
        return np.array([1.0, 0.0])

    def fundamental_matrix(self, x):
        xb, single = _as_batch(x, 2)
        out = np.empty((xb.shape[0], 2, 2))
        out[:, 0, 0] = xb[:, 0]
        out[:, 1, 0] = xb[:, 1]
        out[:, 0, 1] = -xb[:, 1]
        out[:, 1, 1] = xb[:, 0]
        return _unbatch(out, single)

    def generator_matrix(self, x, i):
        return np.eye(2) if i == 0 else A_THETA_2D.copy()

    def casimir_terms(self, x):
        xb, single = _as_batch(x, 2)
        out = np.stack([xb, -xb], axis=-2)  # A_r^2 x = x, A_theta^2 x = -x
        return _unbatch(out, single)

    def divergence_scalars(self, x):
        xb, single = _as_batch(x, 2)
        out = np.zeros((xb.shape[0], 2))
        out[:, 0] = 2.0
        return _unbatch(out, single)

    def exp_apply(self, tau, x):
        tb, _ = _as_batch(tau, 2)
        xb, single = _as_batch(x, 2)
        tb = np.broadcast_to(tb, xb.shape)
        c, s = np.cos(tb[:, 1]), np.sin(tb[:, 1])
        scale = np.exp(tb[:, 0])
        out = np.stack(
            [
                scale * (c * xb[:, 0] - s * xb[:, 1]),
                scale * (s * xb[:, 0] + c * xb[:, 1]),
            ],
            axis=-1,
        )
        return _unbatch(out, single)


# ---------------------------------------------------------------------------
# SO(3) x R+: spherical chart (r, theta, phi), theta polar from +z
# ---------------------------------------------------------------------------

A_X = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
A_Y = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
A_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    k = axis[0] * A_X + axis[1] * A_Y + axis[2] * A_Z
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


class So3DilationGroup(GroupAction):
    """SO(3) x R+ on R^3 in the spherical chart.

    Basis order (r, theta, phi): A_r = I, A_theta(x) = cos(phi) A_y -
    sin(phi) A_x frozen at the azimuth of x, A_phi = A_z.  The theta
    generator rotates about the horizontal axis perpendicular to the
    meridian plane of x, so its frozen exponential is the exact flow
    along that meridian.
    """

    def __init__(self):
        self.group_id = "SO3Dilation"
        self.dim_x = 3
        self.dim_g = 3
        self.domains = (UNBOUNDED, ANGULAR, ANGULAR)

    def _rho(self, xb):
        return np.hypot(xb[:, 0], xb[:, 1])

    def check_nonsingular(self, x):
        xb, _ = _as_batch(x, 3)
        if np.any(np.linalg.norm(xb, axis=-1) < EPS_SING):
            raise SingularPoint("point within EPS_SING of the origin")
        if np.any(self._rho(xb) < EPS_SING):
            raise SingularPoint("point within EPS_SING of the z-axis (phi undefined)")

    def clamp_nonsingular(self, x):
        xb, single = _as_batch(x, 3)
        xb = xb.copy()
        floor = 2.0 * EPS_SING
        r = np.linalg.norm(xb, axis=-1)
        xb[r < EPS_SING] = np.array([floor, 0.0, 0.0])
        rho = self._rho(xb)
        bad = rho < EPS_SING
        xb[bad, 0] = np.where(xb[bad, 0] >= 0, floor, -floor)
        return _unbatch(xb, single)

    def to_flow(self, x):
        xb, single = _as_batch(x, 3)
        self.check_nonsingular(xb)
        r = np.linalg.norm(xb, axis=-1)
        rho = self._rho(xb)
        theta = np.arctan2(rho, xb[:, 2])
        phi = np.arctan2(xb[:, 1], xb[:, 0])
        return _unbatch(np.stack([np.log(r), theta, phi], axis=-1), single)

    def from_flow(self, tau):
        tb, single = _as_batch(tau, 3)
        r = np.exp(tb[:, 0])
        st, ct = np.sin(tb[:, 1]), np.cos(tb[:, 1])
        sp, cp = np.sin(tb[:, 2]), np.cos(tb[:, 2])
        out = np.stack([r * st * cp, r * st * sp, r * ct], axis=-1)
        return _unbatch(out, single)

    def reference_point(self):
        return np.array([0.0, 0.0, 1.0])

    def _phi_axis(self, xb):
        """Unit axis of the frozen theta generator: (-sin phi, cos phi, 0)."""
        rho = self._rho(xb)
        safe = np.maximum(rho, EPS_SING)
        return np.stack([-xb[:, 1] / safe, xb[:, 0] / safe, np.zeros_like(safe)], axis=-1)

    def fundamental_matrix(self, x):
        xb, single = _as_batch(x, 3)
        rho = np.maximum(self._rho(xb), EPS_SING)
        out = np.empty((xb.shape[0], 3, 3))
        out[:, :, 0] = xb
        out[:, 0, 1] = xb[:, 2] * xb[:, 0] / rho
        out[:, 1, 1] = xb[:, 2] * xb[:, 1] / rho
        out[:, 2, 1] = -rho
        out[:, 0, 2] = -xb[:, 1]
        out[:, 1, 2] = xb[:, 0]
        out[:, 2, 2] = 0.0
        return _unbatch(out, single)

    def generator_matrix(self, x, i):
        if i == 0:
            return np.eye(3)
        if i == 2:
            return A_Z.copy()
        xb, _ = _as_batch(x, 3)
        rho = self._rho(xb)
        if np.any(rho < EPS_SING):
            raise SingularPoint("theta generator undefined on the z-axis")
        cp, sp = xb[0, 0] / rho[0], xb[0, 1] / rho[0]
        return cp * A_Y - sp * A_X

    def casimir_terms(self, x):
        xb, single = _as_batch(x, 3)
        horiz = xb.copy()
        horiz[:, 2] = 0.0
        # A_r^2 x = x, A_theta^2 x = -x, A_phi^2 x = -(x1, x2, 0)
        out = np.stack([xb, -xb, -horiz], axis=-2)
        return _unbatch(out, single)

    def divergence_scalars(self, x):
        xb, single = _as_batch(x, 3)
        rho = np.maximum(self._rho(xb), EPS_SING)
        out = np.zeros((xb.shape[0], 3))
        out[:, 0] = 3.0
        out[:, 1] = xb[:, 2] / rho
        return _unbatch(out, single)

    def exp_apply(self, tau, x):
        tb, _ = _as_batch(tau, 3)
        xb, single = _as_batch(x, 3)
        tb = np.broadcast_to(tb, (xb.shape[0], 3))
        axes = self._phi_axis(xb)
        out = np.empty_like(xb)
        for b in range(xb.shape[0]):
            v = rotation_about_axis(np.array([0.0, 0.0, 1.0]), tb[b, 2]) @ xb[b]
            v = rotation_about_axis(axes[b], tb[b, 1]) @ v
            out[b] = np.exp(tb[b, 0]) * v
        return _unbatch(out, single)


# ---------------------------------------------------------------------------
# SO(n) x R+ for n >= 4: hyperspherical chart (r, phi_1, ..., phi_{n-1})
# ---------------------------------------------------------------------------


class HypersphericalDilationGroup(GroupAction):
    """SO(n) x R+ on R^n, n >= 4, in the hyperspherical chart.

    x_1 = e^r cos phi_1, x_j = e^r sin phi_1 ... sin phi_{j-1} cos phi_j,
    x_n = e^r sin phi_1 ... sin phi_{n-1}.  Generator j <= n-2 is the
    normalized plane rotation between e_j and the unit tail direction; the
    last generator is the constant rotation in the (n-1, n) plane.
    """

    def __init__(self, n: int):
        if n < 4:
            raise InvalidParams(f"SONDilation requires n >= 4, got {n}")
        self.group_id = f"SONDilation({n})"
        self.dim_x = n
        self.dim_g = n
        self.domains = (UNBOUNDED,) + (ANGULAR,) * (n - 1)

    def _tail_norms(self, xb):
        """t_j = ||(x_{j+1}, ..., x_n)|| for j = 1..n-1, shape (B, n-1)."""
        sq = np.cumsum(xb[:, ::-1] ** 2, axis=1)[:, ::-1]
        return np.sqrt(sq[:, 1:])

    def check_nonsingular(self, x):
        xb, _ = _as_batch(x, self.dim_x)
        if np.any(np.linalg.norm(xb, axis=-1) < EPS_SING):
            raise SingularPoint("point within EPS_SING of the origin")
        tails = self._tail_norms(xb)
        if np.any(tails[:, : self.dim_x - 2] < EPS_SING):
            raise SingularPoint("point within EPS_SING of a chart axis")

    def clamp_nonsingular(self, x):
        xb, single = _as_batch(x, self.dim_x)
        xb = xb.copy()
        floor = 2.0 * EPS_SING
        r = np.linalg.norm(xb, axis=-1)
        xb[r < EPS_SING] = 0.0
        xb[r < EPS_SING, -1] = floor
        tails = self._tail_norms(xb)
        for j in range(self.dim_x - 2):
            bad = tails[:, j] < EPS_SING
            if np.any(bad):
                xb[bad, -1] = np.where(xb[bad, -1] >= 0, floor, -floor)
                tails = self._tail_norms(xb)
        return _unbatch(xb, single)

    def to_flow(self, x):
        xb, single = _as_batch(x, self.dim_x)
        self.check_nonsingular(xb)
        n = self.dim_x
        r = np.linalg.norm(xb, axis=-1)
        tau = np.empty((xb.shape[0], n))
        tau[:, 0] = np.log(r)
        tails = self._tail_norms(xb)
        for j in range(1, n - 1):
            tau[:, j] = np.arctan2(tails[:, j - 1], xb[:, j - 1])
        tau[:, n - 1] = np.arctan2(xb[:, n - 1], xb[:, n - 2])
        return _unbatch(tau, single)

    def from_flow(self, tau):
        tb, single = _as_batch(tau, self.dim_g)
        n = self.dim_x
        r = np.exp(tb[:, 0])
        out = np.empty((tb.shape[0], n))
        sin_prod = np.ones(tb.shape[0])
        for j in range(1, n):
            out[:, j - 1] = r * sin_prod * np.cos(tb[:, j])
            sin_prod = sin_prod * np.sin(tb[:, j])
        out[:, n - 1] = r * sin_prod
        return _unbatch(out, single)

    def reference_point(self):
        ref = np.zeros(self.dim_x)
        ref[0] = 1.0
        return ref

    def fundamental_matrix(self, x):
        xb, single = _as_batch(x, self.dim_x)
        n = self.dim_x
        tails = np.maximum(self._tail_norms(xb), EPS_SING)
        out = np.zeros((xb.shape[0], n, n))
        out[:, :, 0] = xb
        for j in range(1, n - 1):  # plane rotation e_j <-> tail direction
            t = tails[:, j - 1]
            out[:, j - 1, j] = -t
            out[:, j:, j] = xb[:, j:] * (xb[:, j - 1] / t)[:, None]
        out[:, n - 2, n - 1] = -xb[:, n - 1]
        out[:, n - 1, n - 1] = xb[:, n - 2]
        return _unbatch(out, single)

    def generator_matrix(self, x, i):
        n = self.dim_x
        if i == 0:
            return np.eye(n)
        mat = np.zeros((n, n))
        if i == n - 1:
            mat[n - 2, n - 1] = -1.0
            mat[n - 1, n - 2] = 1.0
            return mat
        xb, _ = _as_batch(x, n)
        t = self._tail_norms(xb)[0, i - 1]
        if t < EPS_SING:
            raise SingularPoint(f"generator {i} undefined where the tail norm vanishes")
        u = xb[0, i:] / t
        mat[i - 1, i:] = -u
        mat[i:, i - 1] = u
        return mat

    def casimir_terms(self, x):
        xb, single = _as_batch(x, self.dim_x)
        n = self.dim_x
        out = np.zeros((xb.shape[0], n, n))
        out[:, 0, :] = xb
        for j in range(1, n - 1):  # A_j^2 x = -(0,...,0,x_j,...,x_n)
            out[:, j, j - 1 :] = -xb[:, j - 1 :]
        out[:, n - 1, n - 2 :] = -xb[:, n - 2 :]
        return _unbatch(out, single)

    def divergence_scalars(self, x):
        xb, single = _as_batch(x, self.dim_x)
        n = self.dim_x
        tails = np.maximum(self._tail_norms(xb), EPS_SING)
        out = np.zeros((xb.shape[0], n))
        out[:, 0] = float(n)
        for j in range(1, n - 1):  # (n-1-j) cot(phi_j)
            out[:, j] = (n - 1 - j) * xb[:, j - 1] / tails[:, j - 1]
        return _unbatch(out, single)

    def exp_apply(self, tau, x):
        tb, _ = _as_batch(tau, self.dim_g)
        xb, single = _as_batch(x, self.dim_x)
        tb = np.broadcast_to(tb, (xb.shape[0], self.dim_g))
        n = self.dim_x
        out = np.empty_like(xb)
        for b in range(xb.shape[0]):
            v = xb[b].copy()
            for i in range(n - 1, 0, -1):  # rightmost factor first
                k = self.generator_matrix(xb[b], i)
                ang = tb[b, i]
                v = v + np.sin(ang) * (k @ v) + (1.0 - np.cos(ang)) * (k @ (k @ v))
            out[b] = np.exp(tb[b, 0]) * v
        return _unbatch(out, single)


# ---------------------------------------------------------------------------
# Generator subsets (constrained dynamics along chosen flow directions)
# ---------------------------------------------------------------------------


class SubsetGroup(GroupAction):
    """Restriction of a group to a subset of its generators.

    Used for rotation-only dynamics (bridges) and for the pure-SO(2)
    Casimir cancellation: the Casimir and divergence fields are those of
    the active generators only.
    """

    def __init__(self, base: GroupAction, indices: tuple[int, ...]):
        if len(indices) == 0 or any(i < 0 or i >= base.dim_g for i in indices):
            raise InvalidParams(f"bad generator subset {indices} for {base.group_id}")
        self.base = base
        self.indices = indices
        self.group_id = f"{base.group_id}[{','.join(map(str, indices))}]"
        self.dim_x = base.dim_x
        self.dim_g = len(indices)
        self.constrained = True
        self.domains = tuple(base.domains[i] for i in indices)
        self.radius_convention = base.radius_convention

    def check_nonsingular(self, x):
        self.base.check_nonsingular(x)

    def clamp_nonsingular(self, x):
        return self.base.clamp_nonsingular(x)

    def to_flow(self, x):
        return self.base.to_flow(x)[..., list(self.indices)]

    def from_flow(self, tau):
        raise InvalidParams("constrained subset groups have no inverse chart")

    def reference_point(self):
        return self.base.reference_point()

    def fundamental_matrix(self, x):
        return self.base.fundamental_matrix(x)[..., list(self.indices)]

    def generator_matrix(self, x, i):
        return self.base.generator_matrix(x, self.indices[i])

    def casimir_terms(self, x):
        return self.base.casimir_terms(x)[..., list(self.indices), :]

    def divergence_scalars(self, x):
        return self.base.divergence_scalars(x)[..., list(self.indices)]

    def _embed(self, tau):
        tb = np.asarray(tau, dtype=float)
        full = np.zeros(tb.shape[:-1] + (self.base.dim_g,))
        full[..., list(self.indices)] = tb
        return full

    def exp_apply(self, tau, x):
        return self.base.exp_apply(self._embed(tau), x)


# ---------------------------------------------------------------------------
# Factory and FlowCoords wrappers
# ---------------------------------------------------------------------------


def make_group(group_id: str, params: dict | None = None) -> GroupAction:
    """Build a GroupAction from an identifier and parameters.

    Recognized ids: TranslationN, SO2Dilation, SO3Dilation, SO4Dilation,
    SONDilation, Torsion, BondAngle, GlobalSE3.
    """
    params = dict(params or {})
    gid = group_id.strip()
    if gid == "TranslationN":
        return TranslationGroup(int(params.pop("n", params.pop("N", 0)) or 0))
    if gid == "SO2Dilation":
        return So2DilationGroup(params.pop("radius_convention", "log_radius"))
    if gid == "SO3Dilation":
        return So3DilationGroup()
    if gid == "SO4Dilation":
        return HypersphericalDilationGroup(4)
    if gid == "SONDilation":
        return HypersphericalDilationGroup(int(params.pop("n", params.pop("N", 0)) or 0))
    if gid == "GlobalSE3":
        from .se3 import GlobalSe3Group

        return GlobalSe3Group(int(params.pop("n_points", params.pop("N", 0)) or 0))
    if gid == "Torsion":
        from .chains import TorsionChainGroup

        return TorsionChainGroup(
            np.asarray(params.pop("positions"), dtype=float),
            params.pop("bonds", None),
            variant=params.pop("variant", "centered"),
        )
    if gid == "BondAngle":
        from .chains import BondAngleChainGroup

        return BondAngleChainGroup(
            np.asarray(params.pop("positions"), dtype=float),
            params.pop("vertices", None),
            variant=params.pop("variant", "centered"),
        )
    raise InvalidParams(f"unknown group id {group_id!r}")


def to_flow_coords(g: GroupAction, x: np.ndarray) -> FlowCoords:
    """Flow coordinates of x as a tagged FlowCoords value."""
    return FlowCoords(g.to_flow(x), g.domains)


def from_flow_coords(g: GroupAction, tau) -> np.ndarray:
    """Inverse chart; accepts a FlowCoords or a raw array."""
    values = tau.values if isinstance(tau, FlowCoords) else tau
    return g.from_flow(values)


def fundamental_matrix(g: GroupAction, x: np.ndarray) -> np.ndarray:
    return g.fundamental_matrix(x)


def casimir_field(g: GroupAction, x: np.ndarray) -> np.ndarray:
    return g.casimir_field(x)


def divergence_field(g: GroupAction, x: np.ndarray) -> np.ndarray:
    return g.divergence_field(x)


def group_exp_apply(g: GroupAction, tau, x: np.ndarray) -> np.ndarray:
    values = tau.values if isinstance(tau, FlowCoords) else tau
    return g.exp_apply(values, x)
