"""Numerical certification of the operator identities behind the sampler.

Each check compares a closed-form quantity against an independent
finite-difference or Monte-Carlo oracle and records the worst error, the
tolerance, and the verdict.  Negative controls (a rank-deficient frame and
the non-commuting normalized fields) are REQUIRED to fail; their records
carry ``negative_control: True`` and pass exactly when the raw error
exceeds the tolerance -- a suite that cannot fail certifies nothing.

Checks:
  * completeness   -- rank of the fundamental matrix equals dim X a.e.
  * commutators    -- finite-difference [L_i, L_j] f vanishes on random
                      smooth test functions tanh(a.x + b) * quadratic
  * divergence     -- div(Pi Pi^T) = Pi (div Pi) + Casimir
  * jacobian       -- |det d(tau)/dx| = 1 / |det Pi(x)|
  * forward_equiv  -- closed-form forward marginals match Euler-Maruyama
  * so2_closed_form-- the 2-d OU system reconstructs through the rotation/
                      dilation exponential pathwise, with the stated limit
  * exp_product    -- frozen-matrix exponential products deviate from the
                      exact chart flow at second order in tau
  * reverse_consistency -- the literal reverse-time SDE discretization and
                      the sampler update coincide
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad

from .groups import (
    ANGULAR,
    GroupAction,
    HypersphericalDilationGroup,
    So2DilationGroup,
    So3DilationGroup,
    TranslationGroup,
    make_group,
)
from .schedule import NoiseSchedule, continuous_beta, continuous_interpolant, make_schedule, ou_solution
from .sde import em_forward_terminal, reverse_step
from .se3 import GlobalSe3Group
from .metrics import w2_sliced

DEFAULT_TOLERANCES = {
    "completeness": 0.999,  # minimum full-rank fraction
    "commutators": 1e-3,
    "divergence": 1e-4,
    "jacobian": 1e-4,
    "forward_equiv": 0.05,
    "so2_pathwise": 1e-6,
    "so2_terminal": 0.05,
    "exp_product": 0.35,  # second-order scaling ratio bound
    "reverse_consistency": 1e-12,
}


@dataclass
class CheckRecord:
    check_id: str
    group_id: str
    n_points: int
    max_error: float
    tolerance: float
    passed: bool
    negative_control: bool = False
    detail: dict = field(default_factory=dict)


@dataclass
class VerifyReport:
    records: list
    seed: int
    float_width: int = 64
    passed: bool = False

    def finalize(self):
        self.passed = all(r.passed for r in self.records)
        return self

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "float_width": self.float_width,
            "passed": self.passed,
            "records": [asdict(r) for r in self.records],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# point sampling helpers
# ---------------------------------------------------------------------------


def _chart_margin(g: GroupAction, xb: np.ndarray) -> np.ndarray:
    """Distance-like margin from the chart's singular set (inf if none)."""
    if isinstance(g, TranslationGroup):
        return np.full(xb.shape[0], np.inf)
    if isinstance(g, So2DilationGroup):
        return np.linalg.norm(xb, axis=-1)
    if isinstance(g, So3DilationGroup):
        return np.minimum(
            np.linalg.norm(xb, axis=-1), np.hypot(xb[:, 0], xb[:, 1])
        )
    if isinstance(g, HypersphericalDilationGroup):
        tails = g._tail_norms(xb)
        return np.minimum(
            np.linalg.norm(xb, axis=-1), tails[:, : g.dim_x - 2].min(axis=1)
        )
    if isinstance(g, GlobalSe3Group):
        out = np.empty(xb.shape[0])
        for b in range(xb.shape[0]):
            pos = xb[b].reshape(g.n_points, 3)
            c = pos.mean(axis=0)
            x1 = pos[0] - c
            m = min(np.linalg.norm(x1), np.hypot(x1[0], x1[1]))
            from .se3 import rot_y, rot_z

            th = np.arctan2(np.hypot(x1[0], x1[1]), x1[2])
            ph = np.arctan2(x1[1], x1[0])
            x2t = rot_y(-th) @ rot_z(-ph) @ (pos[1] - c)
            out[b] = min(m, np.hypot(x2t[0], x2t[1]))
        return out
    return np.full(xb.shape[0], np.inf)


def sample_points(g: GroupAction, n: int, rng, margin: float = 0.0) -> np.ndarray:
    """Standard-normal points, optionally redrawn away from singular sets."""
    pts = rng.standard_normal((n, g.dim_x))
    if margin <= 0:
        return pts
    for _ in range(200):
        bad = _chart_margin(g, pts) < margin
        if not np.any(bad):
            break
        pts[bad] = rng.standard_normal((int(bad.sum()), g.dim_x))
    return pts


def _random_test_function(rng, dim: int):
    """f(x) = tanh(a.x + b) * (quadratic); bounded derivatives."""
    a = rng.standard_normal(dim)
    b = rng.standard_normal()
    q = rng.standard_normal((dim, dim))
    q = 0.5 * (q + q.T) / dim
    c = rng.standard_normal(dim) / np.sqrt(dim)
    d0 = rng.standard_normal()

    def f(x):
        x = np.atleast_2d(x)
        quad_part = 0.5 * np.einsum("bi,ij,bj->b", x, q, x) + x @ c + d0
        return np.tanh(x @ a + b) * quad_part

    return f


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_completeness(
    g: GroupAction, n_points: int, rng, tolerance: float | None = None
) -> CheckRecord:
    """Fraction of standard-normal points where rank(Pi(x)) = dim X."""
    tol = DEFAULT_TOLERANCES["completeness"] if tolerance is None else tolerance
    pts = sample_points(g, n_points, rng)
    fund = g.fundamental_matrix(pts)
    sv = np.linalg.svd(fund, compute_uv=False)
    full = np.sum(sv > 1e-8 * sv[:, :1], axis=1) >= g.dim_x
    fraction = float(np.mean(full))
    return CheckRecord(
        check_id="completeness",
        group_id=g.group_id,
        n_points=n_points,
        max_error=1.0 - fraction,
        tolerance=1.0 - tol,
        passed=fraction >= tol,
        detail={"full_rank_fraction": fraction},
    )


def _directional(g_fields, i, func, h):
    def lf(y):
        u = g_fields(y)[..., :, i]
        return (func(y + h * u) - func(y - h * u)) / (2.0 * h)

    return lf


def check_commutators(
    g: GroupAction,
    n_points: int = 1000,
    h: float = 1e-4,
    rng=None,
    tolerance: float | None = None,
    n_functions: int = 4,
    fields_fn=None,
    check_id: str = "commutators",
    negative_control: bool = False,
) -> CheckRecord:
    """Finite-difference commutators of the frame on random test functions.

    Errors are normalized by 1 + the local 1-norm of first and second
    frame derivatives of the test function.
    """
    tol = DEFAULT_TOLERANCES["commutators"] if tolerance is None else tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    fields = fields_fn or g.fundamental_matrix
    pts = sample_points(g, n_points, rng, margin=0.3)
    dim_g = fields(pts[:1]).shape[-1]
    worst = 0.0
    for _ in range(n_functions):
        f = _random_test_function(rng, g.dim_x)
        lf = [_directional(fields, i, f, h) for i in range(dim_g)]
        first = np.stack([lf[i](pts) for i in range(dim_g)], axis=1)
        scale = 1.0 + np.abs(first).sum(axis=1)
        for i in range(dim_g):
            lif = _directional(fields, i, lf[i], h)
            scale = scale + np.abs(lif(pts))
        for i in range(dim_g):
            for j in range(i + 1, dim_g):
                lij = _directional(fields, i, lf[j], h)(pts)
                lji = _directional(fields, j, lf[i], h)(pts)
                err = np.abs(lij - lji) / scale
                worst = max(worst, float(err.max()))
    passed = worst <= tol if not negative_control else worst > tol
    return CheckRecord(
        check_id=check_id,
        group_id=g.group_id,
        n_points=n_points,
        max_error=worst,
        tolerance=tol,
        passed=passed,
        negative_control=negative_control,
    )


class _Fig2cFields:
    """Negative control: the normalized radial/rotation fields W = V/|x|."""

    group_id = "Fig2c(V/|x|)"
    dim_x = 2
    dim_g = 2

    def fundamental_matrix(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)
        out = np.empty((x.shape[0], 2, 2))
        out[:, :, 0] = x / r
        out[:, 0, 1] = -x[:, 1] / r[:, 0]
        out[:, 1, 1] = x[:, 0] / r[:, 0]
        return out


def check_divergence_identity(
    g: GroupAction,
    n_points: int = 1000,
    h: float | None = None,
    rng=None,
    tolerance: float | None = None,
) -> CheckRecord:
    """div(Pi Pi^T) (finite differences) vs Pi (div Pi) + Casimir field."""
    tol = DEFAULT_TOLERANCES["divergence"] if tolerance is None else tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    pts = sample_points(g, n_points, rng, margin=0.3)
    hs = (1e-5 * (1.0 + np.linalg.norm(pts, axis=-1))) if h is None else np.full(len(pts), h)
    lhs = np.zeros((pts.shape[0], g.dim_x))
    for k in range(g.dim_x):
        step = np.zeros_like(pts)
        step[:, k] = hs
        fp = g.fundamental_matrix(pts + step)
        fm = g.fundamental_matrix(pts - step)
        mp = np.einsum("bij,bkj->bik", fp, fp)
        mm = np.einsum("bij,bkj->bik", fm, fm)
        lhs += (mp[:, :, k] - mm[:, :, k]) / (2.0 * hs)[:, None]
    fund = g.fundamental_matrix(pts)
    rhs = (
        np.einsum("bij,bj->bi", fund, g.divergence_scalars(pts))
        + g.casimir_field(pts)
    )
    err = float(np.max(np.linalg.norm(lhs - rhs, axis=-1)))
    return CheckRecord(
        check_id="divergence",
        group_id=g.group_id,
        n_points=n_points,
        max_error=err,
        tolerance=tol,
        passed=err <= tol,
    )


def check_jacobian_density(
    g: GroupAction, n_points: int = 1000, rng=None, tolerance: float | None = None
) -> CheckRecord:
    """|det d(tau)/dx| from wrap-aware finite differences vs 1/|det Pi|."""
    tol = DEFAULT_TOLERANCES["jacobian"] if tolerance is None else tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    if g.dim_g != g.dim_x:
        raise ValueError("jacobian density check needs a square fundamental matrix")
    pts = sample_points(g, n_points, rng, margin=0.3)
    hs = 1e-5 * (1.0 + np.linalg.norm(pts, axis=-1))
    angular = np.array([d == ANGULAR for d in g.domains])
    jac = np.empty((pts.shape[0], g.dim_g, g.dim_x))
    for k in range(g.dim_x):
        step = np.zeros_like(pts)
        step[:, k] = hs
        dtau = g.to_flow(pts + step) - g.to_flow(pts - step)
        if np.any(angular):  # principal-branch jumps are multiples of 2 pi
            dtau[:, angular] = (dtau[:, angular] + np.pi) % (2 * np.pi) - np.pi
        jac[:, :, k] = dtau / (2.0 * hs)[:, None]
    det_j = np.abs(np.linalg.det(jac))
    det_pi = np.abs(np.linalg.det(g.fundamental_matrix(pts)))
    rel = np.abs(det_j - 1.0 / det_pi) / (1.0 / det_pi)
    err = float(rel.max())
    return CheckRecord(
        check_id="jacobian",
        group_id=g.group_id,
        n_points=n_points,
        max_error=err,
        tolerance=tol,
        passed=err <= tol,
    )


def _capped_mean_coeff(beta_fn, s: float) -> float:
    integral, _ = quad(beta_fn, 0.0, s, epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(np.exp(-0.5 * integral))


def _sliced_w2_vs_reference(batch: np.ndarray, reference: np.ndarray, rng) -> float:
    """Unscaled sliced W2 of an n-batch against an (r*n)-sample reference.

    The reference side represents a KNOWN distribution; its sorted
    projections are averaged in blocks of r, which collapses the
    reference's sampling noise and roughly halves the same-law floor of
    the two-sample estimator.
    """
    n, d = batch.shape
    r = reference.shape[0] // n
    dirs = rng.standard_normal((256, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(batch @ dirs.T, axis=0)
    pb = np.sort(reference[: r * n] @ dirs.T, axis=0)
    pb = pb.reshape(n, r, -1).mean(axis=1)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def check_forward_equivalence(
    g: GroupAction,
    sched: NoiseSchedule,
    n_samples: int = 4096,
    rng=None,
    tolerance: float | None = None,
    em_steps: int = 1000,
    tau0_mean: np.ndarray | None = None,
) -> CheckRecord:
    """Sliced W2 between closed-form and Euler-Maruyama forward marginals.

    The normative instance of the forward SDE is drift-free (f = 0,
    gamma = sqrt(beta)/4): its closed form is tau_t = tau_0 + c(s) eta,
    and the Euler-Maruyama side exercises exactly the geometric content
    of the solvability claim -- the multiplicative noise through the
    fundamental fields balanced by the Casimir correction.  A second,
    diagnostic instance uses the variance-preserving drift f = -tau/2
    read off the principal branch of the chart; for groups whose late-time
    paths fold through a chart boundary (the polar axis), that drift is a
    genuinely different SDE than the unwrapped-coordinate system solved in
    closed form, so its distance is recorded (`vp_drift_*`) and enforced
    only where folding mass is negligible.

    Comparisons are made in the canonical chart with an 8x closed-form
    reference batch: in Cartesian coordinates the same-law noise floor of
    the empirical estimator at 4096 samples is an order of magnitude above
    the tolerance, so the Cartesian number certifies nothing (it is still
    recorded in the detail).
    """
    tol = DEFAULT_TOLERANCES["forward_equiv"] if tolerance is None else tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    if tau0_mean is None:
        tau0_mean = np.zeros(g.dim_g)
        if g.group_id.startswith("SO3"):
            tau0_mean = np.array([0.5, np.pi / 2, 0.5])
        elif g.group_id.startswith("SO2"):
            tau0_mean = np.array([0.4, 0.5])
        elif g.group_id.startswith("SON"):
            tau0_mean = np.concatenate([[0.4], np.full(g.dim_g - 2, np.pi / 2), [0.5]])
    tau0 = tau0_mean + 0.3 * rng.standard_normal((n_samples, g.dim_g))
    x0 = g.from_flow(tau0)
    beta_fn = continuous_beta(sched.kind)
    ref_factor = 8
    tau0_ref = tau0_mean + 0.3 * rng.standard_normal((ref_factor * n_samples, g.dim_g))
    folding_safe = not g.group_id.startswith("SO3")

    def chart(x):
        return g.to_flow(g.clamp_nonsingular(x))

    detail = {}
    worst = 0.0

    def run_instance(tag, f_fn, gamma_scale, closed_tau_fn, enforced):
        nonlocal worst
        x = np.array(x0)
        done = 0.0
        for frac in (0.25, 0.5, 1.0):
            n_sub = max(int(round(em_steps * (frac - done))), 1)
            x = em_forward_terminal(
                g,
                x,
                lambda s, lo=done: beta_fn(lo + s),
                lambda s, lo=done: gamma_scale * np.sqrt(beta_fn(lo + s)),
                f_fn,
                frac - done,
                n_sub,
                rng,
            )
            done = frac
            closed_ref = g.from_flow(closed_tau_fn(frac, tau0_ref))
            d = _sliced_w2_vs_reference(chart(x), chart(closed_ref), rng)
            detail[f"{tag}_s={frac}"] = d
            if frac == 1.0:
                closed_small = g.from_flow(closed_tau_fn(frac, tau0))
                detail[f"{tag}_s=1.0_cartesian"] = w2_sliced(
                    closed_small, x, rng=rng, scaled=False
                )
            if enforced:
                worst = max(worst, d)

    # normative: zero drift, gamma = sqrt(beta)/4 (the estimator's same-law
    # floor scales with the coordinate spread; this noise level keeps the
    # floor near 0.02 while a dropped Casimir term still shows up at ~0.1)
    def closed_zero(frac, t0):
        integral, _ = quad(beta_fn, 0.0, frac, epsabs=1e-12, epsrel=1e-10, limit=200)
        c = 0.25 * np.sqrt(integral)
        return t0 + c * rng.standard_normal(t0.shape)

    run_instance("zero_drift", lambda x: np.zeros(x.shape[:-1] + (g.dim_g,)), 0.25, closed_zero, True)

    # diagnostic: variance-preserving drift off the principal branch
    def f_vp(x):
        return -0.5 * chart(x)

    def closed_vp(frac, t0):
        m = _capped_mean_coeff(beta_fn, frac)
        sig = np.sqrt(max(0.0, 1.0 - m * m))
        return m * t0 + sig * rng.standard_normal(t0.shape)

    run_instance("vp_drift", f_vp, 1.0, closed_vp, folding_safe)

    return CheckRecord(
        check_id="forward_equiv",
        group_id=g.group_id,
        n_points=n_samples,
        max_error=worst,
        tolerance=tol,
        passed=worst <= tol,
        detail=detail,
    )


def check_so2_closed_form(
    n_samples: int = 4096,
    rng=None,
    pathwise_tolerance: float | None = None,
    terminal_tolerance: float | None = None,
) -> list[CheckRecord]:
    """The 2-d OU system: pathwise exponential reconstruction and limit law.

    Simulates d tau = beta f(x) dt + sqrt(beta) dW with the literal drifts
    f_r = -log(x^2+y^2)/4, f_theta = -arctan(y/x)/2 under shared noise, and
    checks that the chart reconstruction of the path equals the scaled
    rotation e^{lambda} R(phi) applied to x(0).  The terminal marginal is
    compared against the stated limit (e^{eta_r} cos eta_theta, ...).
    """
    ptol = DEFAULT_TOLERANCES["so2_pathwise"] if pathwise_tolerance is None else pathwise_tolerance
    ttol = DEFAULT_TOLERANCES["so2_terminal"] if terminal_tolerance is None else terminal_tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    g = So2DilationGroup()
    n_path = 64
    tau = np.tile(np.array([0.3, 0.7]), (n_path, 1)) + 0.2 * rng.standard_normal((n_path, 2))
    tau0 = tau.copy()
    x0 = g.from_flow(tau0)
    beta = 1.0
    dt = 1e-3
    worst_path = 0.0
    for k in range(2000):
        x = g.from_flow(tau)  # literal drifts evaluated in Cartesian space
        f = np.stack(
            [
                -0.25 * np.log(x[:, 0] ** 2 + x[:, 1] ** 2),
                -0.5 * np.arctan2(x[:, 1], x[:, 0]),
            ],
            axis=1,
        )
        tau = tau + beta * f * dt + np.sqrt(beta * dt) * rng.standard_normal((n_path, 2))
        chart = g.from_flow(tau)
        lam = tau[:, 0] - tau0[:, 0]
        phi = tau[:, 1] - tau0[:, 1]
        recon = np.stack(
            [
                np.exp(lam) * (np.cos(phi) * x0[:, 0] - np.sin(phi) * x0[:, 1]),
                np.exp(lam) * (np.sin(phi) * x0[:, 0] + np.cos(phi) * x0[:, 1]),
            ],
            axis=1,
        )
        worst_path = max(worst_path, float(np.max(np.abs(chart - recon))))
    rec_path = CheckRecord(
        check_id="so2_pathwise",
        group_id=g.group_id,
        n_points=n_path,
        max_error=worst_path,
        tolerance=ptol,
        passed=worst_path <= ptol,
    )
    # terminal law at large t via the quoted Gaussian solution; compared in
    # the canonical chart (see check_forward_equivalence for why)
    t_end = 12.0
    _, sigma = ou_solution(lambda s: beta, t_end)
    tau0b = np.array([0.3, 0.7]) + 0.2 * rng.standard_normal((n_samples, 2))
    eta = rng.standard_normal((n_samples, 2))
    tau_end = tau0b * (1.0 - sigma**2) + sigma * eta
    x_end = g.from_flow(tau_end)
    eta_ref = rng.standard_normal((n_samples, 2))
    limit = np.stack(
        [np.exp(eta_ref[:, 0]) * np.cos(eta_ref[:, 1]), np.exp(eta_ref[:, 0]) * np.sin(eta_ref[:, 1])],
        axis=1,
    )
    d = w2_sliced(g.to_flow(x_end), g.to_flow(limit), rng=rng, scaled=False)
    rec_term = CheckRecord(
        check_id="so2_terminal",
        group_id=g.group_id,
        n_points=n_samples,
        max_error=d,
        tolerance=ttol,
        passed=d <= ttol,
        detail={"cartesian_sliced_w2": w2_sliced(x_end, limit, rng=rng, scaled=False)},
    )
    return [rec_path, rec_term]


def check_exp_product(
    g: GroupAction, n_points: int = 200, rng=None, tolerance: float | None = None
) -> CheckRecord:
    """Frozen-matrix exponential products vs the exact chart flow.

    The deviation must shrink at second order in the step: halving tau
    must cut the error by at least the tolerance ratio (0.35 allows for
    noise around the ideal 0.25).
    """
    tol = DEFAULT_TOLERANCES["exp_product"] if tolerance is None else tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    pts = sample_points(g, n_points, rng, margin=0.4)
    tau = 0.4 * rng.standard_normal((n_points, g.dim_g))
    exact_full = g.from_flow(g.to_flow(pts) + tau)
    exact_half = g.from_flow(g.to_flow(pts) + 0.5 * tau)
    err_full = np.linalg.norm(g.exp_apply(tau, pts) - exact_full, axis=-1)
    err_half = np.linalg.norm(g.exp_apply(0.5 * tau, pts) - exact_half, axis=-1)
    mean_full = float(err_full.mean())
    mean_half = float(err_half.mean())
    ratio = mean_half / mean_full if mean_full > 1e-14 else 0.0
    return CheckRecord(
        check_id="exp_product",
        group_id=g.group_id,
        n_points=n_points,
        max_error=ratio,
        tolerance=tol,
        passed=ratio <= tol,
        detail={"mean_error_full_step": mean_full, "mean_error_half_step": mean_half},
    )


def check_reverse_consistency(
    g: GroupAction, sched: NoiseSchedule, n_points: int = 128, rng=None, tolerance=None
) -> CheckRecord:
    """Three-way agreement of the reverse update.

    (i) the flow-space sampler step fed a flow-coordinate score s must
    equal (ii) the state-space (literal, divergence-carrying) step fed the
    corresponding state score s - div, and (iii) the backward-integrated
    literal reverse-time differential with the same state score.  This is
    the executable reconciliation of the printed sampler recipe with the
    reverse SDE and with denoising-trained scores.
    """
    tol = DEFAULT_TOLERANCES["reverse_consistency"] if tolerance is None else tolerance
    rng = np.random.default_rng(0) if rng is None else rng
    pts = sample_points(g, n_points, rng, margin=0.4)
    t = sched.T // 2
    beta_t = sched.beta[t]
    score_flow = 0.3 * rng.standard_normal((n_points, g.dim_g))
    score_state = score_flow - g.divergence_scalars(pts)
    eta = rng.standard_normal((n_points, g.dim_g))
    step_flow = reverse_step(g, sched, pts, t, score_flow, eta=eta, score_space="flow")
    step_state = reverse_step(
        g, sched, pts, t, score_state, eta=eta, score_space="state"
    )
    # literal reverse-time differential: drift carries the negated Casimir,
    # divergence, and state-score terms; integrating backward negates again
    tau = g.to_flow(pts)
    fund = g.fundamental_matrix(pts)
    drift_fwd = beta_t * np.einsum("bij,bj->bi", fund, -0.5 * tau)
    drift_rev = (
        drift_fwd
        - 0.5 * beta_t * g.casimir_field(pts)
        - beta_t * g.divergence_field(pts)
        - beta_t * np.einsum("bij,bj->bi", fund, score_state)
    )
    literal = pts - drift_rev + np.sqrt(beta_t) * np.einsum("bij,bj->bi", fund, eta)
    err = max(
        float(np.max(np.abs(step_flow - step_state))),
        float(np.max(np.abs(step_flow - literal))),
    )
    return CheckRecord(
        check_id="reverse_consistency",
        group_id=g.group_id,
        n_points=n_points,
        max_error=err,
        tolerance=tol,
        passed=err <= tol,
    )


# ---------------------------------------------------------------------------
# suite driver
# ---------------------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get("LIE_DIFFUSE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else min(8, os.cpu_count() or 1)


def identity_groups() -> list[GroupAction]:
    return [
        make_group("TranslationN", {"n": 2}),
        make_group("TranslationN", {"n": 3}),
        make_group("SO2Dilation", {}),
        make_group("SO3Dilation", {}),
        make_group("SO4Dilation", {}),
        make_group("GlobalSE3", {"n_points": 5}),
    ]


def run_all(
    tolerances: dict | None = None,
    seed: int = 0,
    n_points: int = 10000,
    fast: bool = False,
    include_forward: bool = True,
) -> VerifyReport:
    """Execute the whole identity suite and assemble the report.

    `fast` shrinks point counts for smoke testing; the acceptance run uses
    the defaults.  Checks run in a thread pool capped by
    LIE_DIFFUSE_THREADS (0 = auto).
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    n_rank = 2000 if fast else n_points
    n_pts = 200 if fast else 1000
    n_fwd = 1024 if fast else 4096
    em_steps = 200 if fast else 1000
    groups = identity_groups()
    sched = make_schedule("cosine", 100)

    jobs = []

    def rng_for(tag):
        return np.random.default_rng(np.random.SeedSequence([seed, abs(hash(tag)) % (2**31)]))

    for g in groups:
        if not g.constrained:
            jobs.append(
                lambda g=g: check_completeness(
                    g, n_rank, rng_for(("rank", g.group_id)), tol["completeness"]
                )
            )
        jobs.append(
            lambda g=g: check_commutators(
                g, n_pts, 1e-4, rng_for(("comm", g.group_id)), tol["commutators"]
            )
        )
        jobs.append(
            lambda g=g: check_divergence_identity(
                g, n_pts, None, rng_for(("div", g.group_id)), tol["divergence"]
            )
        )
        if g.dim_g == g.dim_x:
            jobs.append(
                lambda g=g: check_jacobian_density(
                    g, n_pts, rng_for(("jac", g.group_id)), tol["jacobian"]
                )
            )
    # negative controls
    broken = make_group("SO2Dilation", {}).subset([1])
    jobs.append(
        lambda: check_completeness(
            broken, n_rank, rng_for("rank_neg"), tol["completeness"]
        )
    )
    fig2c = _Fig2cFields()

    def neg_comm():
        rec = check_commutators(
            So2DilationGroup(),
            n_pts,
            1e-4,
            rng_for("comm_neg"),
            tol["commutators"],
            fields_fn=fig2c.fundamental_matrix,
            check_id="commutators_negative_control",
            negative_control=True,
        )
        rec.group_id = fig2c.group_id
        return rec

    jobs.append(neg_comm)
    jobs.append(
        lambda: check_exp_product(
            So3DilationGroup(), 200, rng_for("expprod"), tol["exp_product"]
        )
    )
    jobs.append(
        lambda: check_reverse_consistency(
            So2DilationGroup(), sched, 128, rng_for("revcons"), tol["reverse_consistency"]
        )
    )
    if include_forward:
        for gid in ("TranslationN", "SO2Dilation", "SO3Dilation"):
            g = make_group(gid, {"n": 2} if gid == "TranslationN" else {})
            jobs.append(
                lambda g=g: check_forward_equivalence(
                    g,
                    sched,
                    n_fwd,
                    rng_for(("fwd", g.group_id)),
                    tol["forward_equiv"],
                    em_steps=em_steps,
                )
            )

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(pool.map(lambda job: job(), jobs))

    # cheap even at full size; the terminal-law tolerance presumes 4096 draws
    records.extend(
        check_so2_closed_form(
            4096, rng_for("so2"), tol["so2_pathwise"], tol["so2_terminal"]
        )
    )
    # fix the negative-control completeness record: it must NOT be full rank
    for r in records:
        if r.check_id == "completeness" and r.group_id == broken.group_id:
            r.negative_control = True
            r.passed = r.detail["full_rank_fraction"] < 0.999
    return VerifyReport(records=records, seed=seed).finalize()
