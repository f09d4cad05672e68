import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liediffuse.errors import InvalidParams, SingularPoint
from liediffuse.groups import (
    EPS_SING,
    FlowCoords,
    from_flow_coords,
    make_group,
    rotation_about_axis,
    to_flow_coords,
)

DENSITY_GROUPS = [
    ("TranslationN", {"n": 2}),
    ("TranslationN", {"n": 3}),
    ("SO2Dilation", {}),
    ("SO3Dilation", {}),
    ("SO4Dilation", {}),
    ("SONDilation", {"n": 5}),
]


def group_of(gid, params=None):
    return make_group(gid, params or {})


def nonsingular_points(g, n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, g.dim_x))
    # keep clear of chart axes so finite differences are well conditioned
    for _ in range(50):
        bad = np.zeros(n, dtype=bool)
        try:
            g.check_nonsingular(pts)
        except SingularPoint:
            bad[:] = True
        norms = np.linalg.norm(pts, axis=1)
        bad |= norms < 0.3
        if g.group_id.startswith("SO3"):
            bad |= np.hypot(pts[:, 0], pts[:, 1]) < 0.3
        if g.group_id.startswith("SON"):
            sq = np.cumsum(pts[:, ::-1] ** 2, axis=1)[:, ::-1]
            bad |= np.any(np.sqrt(sq[:, 1:-1]) < 0.3, axis=1)
        if not bad.any():
            break
        pts[bad] = rng.standard_normal((bad.sum(), g.dim_x))
    return pts


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------


def test_so2_basis_matrices():
    g = group_of("SO2Dilation")
    assert np.array_equal(g.generator_matrix(np.array([1.0, 0.0]), 0), np.eye(2))
    assert np.array_equal(
        g.generator_matrix(np.array([1.0, 0.0]), 1), np.array([[0.0, -1.0], [1.0, 0.0]])
    )


def test_translation_fundamental_is_identity():
    g = group_of("TranslationN", {"n": 3})
    x = np.array([7.0, -1.0, 2.0])
    assert np.array_equal(g.fundamental_matrix(x), np.eye(3))


def test_son4_last_generator_constant_block():
    g = group_of("SONDilation", {"n": 4})
    mat = g.generator_matrix(np.array([1.0, 0.5, 0.3, 0.2]), 3)
    expected = np.zeros((4, 4))
    expected[2, 3] = -1.0
    expected[3, 2] = 1.0
    assert np.array_equal(mat, expected)


@pytest.mark.parametrize(
    "gid,params",
    [("TranslationN", {"n": 0}), ("SONDilation", {"n": 3}), ("BadGroup", {})],
)
def test_make_group_rejects_bad_params(gid, params):
    with pytest.raises(InvalidParams):
        make_group(gid, params)


# ---------------------------------------------------------------------------
# fundamental matrices, Casimir, divergence: worked values
# ---------------------------------------------------------------------------


def test_so2_fundamental_at_3_4():
    g = group_of("SO2Dilation")
    fund = g.fundamental_matrix(np.array([3.0, 4.0]))
    assert np.allclose(fund, [[3.0, -4.0], [4.0, 3.0]])


def test_so3_theta_column_at_x_axis():
    g = group_of("SO3Dilation")
    fund = g.fundamental_matrix(np.array([1.0, 0.0, 0.0]))
    assert np.allclose(fund[:, 1], [0.0, 0.0, -1.0])


def test_casimir_values():
    assert np.allclose(
        group_of("SO2Dilation").casimir_field(np.array([1.5, -2.0])), 0.0
    )
    assert np.allclose(
        group_of("SO3Dilation").casimir_field(np.array([1.0, 2.0, 3.0])),
        [-1.0, -2.0, 0.0],
    )
    assert np.allclose(
        group_of("TranslationN", {"n": 4}).casimir_field(np.ones(4)), 0.0
    )


def test_divergence_values():
    assert np.allclose(
        group_of("SO2Dilation").divergence_field(np.array([1.0, 1.0])), [2.0, 2.0]
    )
    scalars = group_of("SO3Dilation").divergence_scalars(np.array([1.0, 0.0, 5.0]))
    assert np.allclose(scalars, [3.0, 5.0, 0.0])
    assert np.allclose(
        group_of("TranslationN", {"n": 3}).divergence_field(np.ones(3)), 0.0
    )


def test_divergence_scalars_match_fd_fallback():
    # closed forms against the generic finite-difference fallback
    from liediffuse.groups import GroupAction

    for gid, params in [("SO2Dilation", {}), ("SO3Dilation", {}), ("SO4Dilation", {})]:
        g = group_of(gid, params)
        pts = nonsingular_points(g, 50, seed=3)
        closed = g.divergence_scalars(pts)
        fallback = GroupAction.divergence_scalars(g, pts)
        assert np.max(np.abs(closed - fallback)) < 1e-5, gid


# ---------------------------------------------------------------------------
# flow coordinates
# ---------------------------------------------------------------------------


def test_so2_to_flow_log_and_raw():
    x = np.array([3.0, 4.0])
    g_log = make_group("SO2Dilation", {"radius_convention": "log_radius"})
    tau = g_log.to_flow(x)
    assert np.allclose(tau, [np.log(5.0), np.arctan2(4.0, 3.0)])
    g_raw = make_group("SO2Dilation", {"radius_convention": "raw_radius"})
    tau_raw = g_raw.to_flow(x)
    assert np.allclose(tau_raw, [5.0, 0.9272952180016122])
    assert np.allclose(g_raw.from_flow(tau_raw), x)


def test_so2_from_flow_values():
    g = group_of("SO2Dilation")
    assert np.allclose(g.from_flow(np.array([0.0, np.pi / 2])), [0.0, 1.0], atol=1e-15)
    assert np.allclose(g.from_flow(np.array([np.log(2.0), 0.0])), [2.0, 0.0])


def test_so3_from_flow_equator():
    g = group_of("SO3Dilation")
    assert np.allclose(
        g.from_flow(np.array([0.0, np.pi / 2, 0.0])), [1.0, 0.0, 0.0], atol=1e-15
    )


def test_so3_singular_on_z_axis():
    g = group_of("SO3Dilation")
    with pytest.raises(SingularPoint):
        g.to_flow(np.array([0.0, 0.0, 2.0]))


def test_origin_singular():
    for gid in ("SO2Dilation", "SO3Dilation", "SO4Dilation"):
        with pytest.raises(SingularPoint):
            group_of(gid).to_flow(np.zeros(group_of(gid).dim_x))


def test_clamp_makes_points_admissible():
    for gid in ("SO2Dilation", "SO3Dilation", "SO4Dilation"):
        g = group_of(gid)
        bad = np.zeros((3, g.dim_x))
        bad[1, -1] = 1e-12
        clamped = g.clamp_nonsingular(bad)
        g.check_nonsingular(clamped)  # must not raise


@pytest.mark.parametrize("gid,params", DENSITY_GROUPS)
def test_round_trip(gid, params):
    g = group_of(gid, params)
    pts = nonsingular_points(g, 2000, seed=1)
    rec = g.from_flow(g.to_flow(pts))
    rel = np.linalg.norm(rec - pts, axis=1) / np.linalg.norm(pts, axis=1)
    assert rel.max() < 1e-9


@pytest.mark.parametrize("gid,params", DENSITY_GROUPS)
def test_from_flow_equals_reference_exponential(gid, params):
    # Eq.-of-motion form: from_flow(tau) is the product of exponentials of
    # the generators frozen at the target point, applied to the reference.
    g = group_of(gid, params)
    rng = np.random.default_rng(4)
    for _ in range(20):
        pts = nonsingular_points(g, 1, seed=rng.integers(1 << 31))[0]
        tau = g.to_flow(pts)
        v = g.reference_point().copy()
        for i in range(g.dim_g - 1, 0, -1):
            mat = g.generator_matrix(pts, i)
            if mat is None:
                continue
            ang = tau[i]
            v = (
                v
                + np.sin(ang) * (mat @ v)
                + (1.0 - np.cos(ang)) * (mat @ (mat @ v))
            )
        if gid == "TranslationN":
            v = v + tau
        else:
            v = np.exp(tau[0]) * v
        assert np.allclose(v, pts, atol=1e-9), gid


# ---------------------------------------------------------------------------
# group exponential application
# ---------------------------------------------------------------------------


def test_exp_apply_identity_everywhere():
    for gid, params in DENSITY_GROUPS:
        g = group_of(gid, params)
        pts = nonsingular_points(g, 10, seed=2)
        assert np.allclose(g.exp_apply(np.zeros(g.dim_g), pts), pts)


def test_exp_apply_so2_closed_form():
    g = group_of("SO2Dilation")
    lam, phi = 0.4, 1.1
    out = g.exp_apply(np.array([lam, phi]), np.array([1.0, 0.0]))
    assert np.allclose(out, np.exp(lam) * np.array([np.cos(phi), np.sin(phi)]))


def test_exp_apply_translation():
    g = group_of("TranslationN", {"n": 2})
    out = g.exp_apply(np.array([1.0, -2.0]), np.array([7.0, -1.0]))
    assert np.array_equal(out, [8.0, -3.0])


@pytest.mark.parametrize("gid,params", [("SO3Dilation", {}), ("SO4Dilation", {})])
def test_exp_apply_single_coordinate_exact(gid, params):
    # single-generator flows advance exactly one flow coordinate (compared
    # inside the principal domain: polar targets restricted to (0, pi),
    # azimuthal differences taken modulo 2 pi)
    g = group_of(gid, params)
    pts = nonsingular_points(g, 30, seed=5)
    tau0 = g.to_flow(pts)
    for i in range(g.dim_g):
        step = np.zeros(g.dim_g)
        step[i] = 0.2
        target = tau0 + step
        polar = 0 < i < g.dim_g - 1
        keep = (
            (target[:, i] > 0.05) & (target[:, i] < np.pi - 0.05)
            if polar
            else np.ones(len(pts), dtype=bool)
        )
        moved = g.exp_apply(step, pts[keep])
        diff = g.to_flow(moved) - target[keep]
        ang = [k for k, d in enumerate(g.domains) if d == "angular"]
        diff[:, ang] = (diff[:, ang] + np.pi) % (2 * np.pi) - np.pi
        assert np.max(np.abs(diff)) < 1e-12, (gid, i)


# ---------------------------------------------------------------------------
# linearity and directional derivatives
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("gid,params", DENSITY_GROUPS)
def test_generator_matrices_linear_and_consistent(gid, params):
    g = group_of(gid, params)
    rng = np.random.default_rng(6)
    pts = nonsingular_points(g, 5, seed=6)
    for x in pts:
        fund = g.fundamental_matrix(x)
        for i in range(g.dim_g):
            mat = g.generator_matrix(x, i)
            if mat is None:
                continue
            # frozen matrix reproduces the field column at its base point
            assert np.allclose(mat @ x, fund[:, i], atol=1e-12)
            # linearity of the operator application
            u = rng.standard_normal(g.dim_x)
            v = rng.standard_normal(g.dim_x)
            a, b = rng.standard_normal(2)
            lhs = mat @ (a * u + b * v)
            rhs = a * (mat @ u) + b * (mat @ v)
            scale = max(np.abs(rhs).max(), 1.0)
            assert np.abs(lhs - rhs).max() / scale < 1e-12


@pytest.mark.parametrize("gid,params", DENSITY_GROUPS)
def test_directional_derivative_matches_fields(gid, params):
    # d/dtau f(exp(tau A_i) x)|_0 = Pi_i(x) . grad f(x)
    g = group_of(gid, params)
    rng = np.random.default_rng(7)
    a = rng.standard_normal(g.dim_x)
    q = rng.standard_normal((g.dim_x, g.dim_x))

    def f(y):
        y = np.atleast_2d(y)
        return np.tanh(y @ a) + 0.1 * np.einsum("bi,ij,bj->b", y, q, y)

    pts = nonsingular_points(g, 40, seed=7)
    fund = g.fundamental_matrix(pts)
    h = 1e-6
    for i in range(g.dim_g):
        step = np.zeros(g.dim_g)
        step[i] = h
        num = (f(g.exp_apply(step, pts)) - f(g.exp_apply(-step, pts))) / (2 * h)
        grad = np.zeros(pts.shape)
        for k in range(g.dim_x):
            dx = np.zeros(g.dim_x)
            dx[k] = 1e-6
            grad[:, k] = (f(pts + dx) - f(pts - dx)) / 2e-6
        ana = np.einsum("bi,bi->b", fund[:, :, i], grad)
        assert np.max(np.abs(num - ana)) < 1e-5, (gid, i)


@pytest.mark.parametrize("gid,params", DENSITY_GROUPS)
def test_completeness_rank(gid, params):
    g = group_of(gid, params)
    rng = np.random.default_rng(8)
    pts = rng.standard_normal((2000, g.dim_x))
    sv = np.linalg.svd(g.fundamental_matrix(pts), compute_uv=False)
    full = np.sum(sv > 1e-8 * sv[:, :1], axis=1) >= g.dim_x
    assert np.mean(full) >= 0.999


# ---------------------------------------------------------------------------
# subsets and FlowCoords
# ---------------------------------------------------------------------------


def test_rotation_only_subset_casimir():
    g = group_of("SO2Dilation").subset([1])
    x = np.array([0.6, -0.8])
    assert np.allclose(g.casimir_field(x), -x)
    assert np.allclose(g.divergence_scalars(x), [0.0])
    assert g.constrained and g.dim_g == 1


def test_subset_exp_apply_rotates_exactly():
    g = group_of("SO2Dilation").subset([1])
    x = np.array([2.0, 1.0])
    out = g.exp_apply(np.array([np.pi / 2]), x)
    assert np.allclose(out, [-1.0, 2.0])
    with pytest.raises(InvalidParams):
        g.from_flow(np.array([0.1]))


def test_flow_coords_wrappers():
    g = group_of("SO2Dilation")
    x = np.array([3.0, 4.0])
    fc = to_flow_coords(g, x)
    assert isinstance(fc, FlowCoords)
    assert fc.domains == g.domains
    assert np.allclose(from_flow_coords(g, fc), x)
    with pytest.raises(InvalidParams):
        FlowCoords(np.zeros(3), ("unbounded",))


@settings(max_examples=30, deadline=None)
@given(
    st.floats(min_value=-2.0, max_value=2.0),
    st.floats(min_value=-3.0, max_value=3.0),
)
def test_so2_round_trip_property(logr, theta):
    g = group_of("SO2Dilation")
    x = g.from_flow(np.array([logr, theta]))
    tau = g.to_flow(x)
    assert np.allclose(g.from_flow(tau), x, rtol=1e-9, atol=1e-12)


def test_rotation_about_axis_is_orthogonal():
    rng = np.random.default_rng(9)
    for _ in range(10):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        rot = rotation_about_axis(axis, rng.uniform(-3, 3))
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(rot), 1.0)
