"""Training loops and the flow-matching machinery.

Score matching minimizes || s_theta(x_t, t) + eta / sigma_t ||^2 over
closed-form forward draws.  Flow matching regresses generator coefficients
c_theta(x, s) whose Cartesian velocity Pi(x) c matches the analytic
conditional transport field; the learned field therefore lies in the span
of the fundamental fields by construction.  Continuous time s = t / T runs
over (0, 1] with the schedule's analytic interpolant.
"""

from __future__ import annotations

import time

import numpy as np

from .batch import SampleBatch
from .errors import DegenerateTime, InvalidParams, NonFiniteLoss
from .groups import GroupAction
from .model import Adam, ScoreNetwork, TrainConfig, TrainReport
from .schedule import BridgeSchedule, NoiseSchedule, continuous_interpolant
from .sde import bridge_forward

S_FLOOR = 1e-2  # smallest continuous time sampled during CFM training
# (the conditional target variance grows like 1/s toward s = 0; the floor
# keeps the regression conditioned while sigma(S_FLOOR) stays ~ 0.02)


def _as_data(dataset) -> np.ndarray:
    x = dataset.x if isinstance(dataset, SampleBatch) else np.asarray(dataset, dtype=float)
    x = np.atleast_2d(x)
    if x.shape[0] == 0:
        raise InvalidParams("empty dataset")
    return x


def _run_adam(net, cfg, n_steps, loss_and_grads):
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    report = TrainReport(seed=cfg.seed)
    start = time.perf_counter()
    ema = net.get_params()
    for step in range(n_steps):
        loss, flat_grads = loss_and_grads(step)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became non-finite at step {step}", step=step)
        if cfg.grad_clip > 0:
            gnorm = float(np.linalg.norm(flat_grads))
            if gnorm > cfg.grad_clip:
                flat_grads = flat_grads * (cfg.grad_clip / gnorm)
        # cosine decay to 10% of the base rate over the run
        frac = step / max(n_steps - 1, 1)
        opt.learning_rate = cfg.learning_rate * (0.1 + 0.45 * (1 + np.cos(np.pi * frac)))
        params = opt.step(net.get_params(), flat_grads)
        net.set_params(params)
        if cfg.ema_decay > 0:
            ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * params
        if step % cfg.log_every == 0 or step == n_steps - 1:
            report.loss_curve.append((step, float(loss)))
    if cfg.ema_decay > 0:
        net.set_params(ema)
    report.wall_time = time.perf_counter() - start
    tail = [v for s, v in report.loss_curve if s >= n_steps - 500]
    report.final_loss = float(np.mean(tail)) if tail else float("nan")
    return report


def train_score(
    net: ScoreNetwork,
    g: GroupAction,
    sched: NoiseSchedule,
    dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainReport:
    """Denoising generalized-score training over the closed-form forward."""
    data = _as_data(dataset)
    g.check_nonsingular(data)
    tau0 = g.to_flow(data)
    T = sched.T

    def loss_and_grads(step):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        t = rng.integers(1, T + 1, size=cfg.batch_size)
        eta = rng.standard_normal((cfg.batch_size, g.dim_g))
        sig = sched.sigma[t][:, None]
        tau_t = sched.alpha_bar[t][:, None] * tau0[idx] + sig * eta
        x_t = g.from_flow(tau_t)
        target = -eta / sig
        pred, tape = net.forward(x_t, t.astype(float), cache=True)
        resid = pred - target
        loss = float(np.mean(np.sum(resid**2, axis=1)))
        gw, gb = net.backward(tape, 2.0 * resid / cfg.batch_size)
        return loss, net.flatten_grads(gw, gb)

    return _run_adam(net, cfg, cfg.steps, loss_and_grads)


def train_bridge_score(
    net: ScoreNetwork,
    g: GroupAction,
    sched_bridge: BridgeSchedule,
    dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainReport:
    """Score training for the zero-drift bridge (targets -eta / c_t)."""
    data = _as_data(dataset)
    g.check_nonsingular(data)
    T = sched_bridge.T

    def loss_and_grads(step):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        t = rng.integers(1, T + 1, size=cfg.batch_size)
        draw = bridge_forward(g, sched_bridge, data[idx], t, rng)
        c = sched_bridge.scale[t][:, None]
        target = -draw.eta / c
        pred, tape = net.forward(draw.x_t, t.astype(float), cache=True)
        resid = pred - target
        loss = float(np.mean(np.sum(resid**2, axis=1)))
        gw, gb = net.backward(tape, 2.0 * resid / cfg.batch_size)
        return loss, net.flatten_grads(gw, gb)

    return _run_adam(net, cfg, cfg.steps, loss_and_grads)


# ---------------------------------------------------------------------------
# Conditional flow matching
# ---------------------------------------------------------------------------


def _interp(sched: NoiseSchedule, s):
    alpha_fn, alpha_prime_fn = continuous_interpolant(sched.kind)
    a = alpha_fn(s)
    ap = alpha_prime_fn(s)
    sig = np.sqrt(np.maximum(1.0 - a**2, 0.0))
    return a, ap, sig


def cfm_target(
    g: GroupAction,
    sched: NoiseSchedule,
    x_t: np.ndarray,
    tau_t: np.ndarray,
    tau_0: np.ndarray,
    s,
) -> np.ndarray:
    """Conditional transport velocity u_s(x_t | x_0) in Cartesian space.

    u = Pi(x_t) [ alpha'(s) tau_0 + (sigma'(s)/sigma(s)) (tau_t -
    alpha(s) tau_0) ] with the schedule's analytic interpolant; s is the
    continuous time in (0, 1].
    """
    b = cfm_bracket(sched, tau_t, tau_0, s)
    fund = g.fundamental_matrix(x_t)
    return np.einsum("...ij,...j->...i", fund, b)


def cfm_bracket(sched: NoiseSchedule, tau_t, tau_0, s) -> np.ndarray:
    """Generator coefficients of the conditional field (its tau-velocity)."""
    a, ap, sig = _interp(sched, s)
    if np.any(np.asarray(sig) == 0.0):
        raise DegenerateTime("sigma(s) = 0: conditional field undefined")
    sp = -a * ap / sig  # sigma' from sigma^2 = 1 - alpha^2
    tau_t = np.asarray(tau_t, dtype=float)
    tau_0 = np.asarray(tau_0, dtype=float)
    if tau_t.ndim > 1:
        a = np.reshape(a, (-1, 1)) if np.ndim(a) else a
        ap = np.reshape(ap, (-1, 1)) if np.ndim(ap) else ap
        sp_over_sig = np.reshape(sp / sig, (-1, 1)) if np.ndim(sp) else sp / sig
    else:
        sp_over_sig = sp / sig
    return ap * tau_0 + sp_over_sig * (tau_t - a * tau_0)


def train_cfm(
    net: ScoreNetwork,
    g: GroupAction,
    sched: NoiseSchedule,
    dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainReport:
    """Conditional flow matching: the head emits generator coefficients."""
    data = _as_data(dataset)
    g.check_nonsingular(data)
    tau0 = g.to_flow(data)

    def loss_and_grads(step):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        s = rng.uniform(S_FLOOR, 1.0, size=cfg.batch_size)
        eta = rng.standard_normal((cfg.batch_size, g.dim_g))
        a, ap, sig = _interp(sched, s)
        sp = -a * ap / np.maximum(sig, 1e-12)
        tau_t = a[:, None] * tau0[idx] + sig[:, None] * eta
        x_t = g.from_flow(tau_t)
        # on the conditional path (tau_t - a tau_0)/sigma = eta exactly
        bracket = ap[:, None] * tau0[idx] + sp[:, None] * eta
        fund = g.fundamental_matrix(x_t)
        target_u = np.einsum("bij,bj->bi", fund, bracket)
        coeff, tape = net.forward(x_t, s * sched.T, cache=True)
        v = np.einsum("bij,bj->bi", fund, coeff)
        resid = v - target_u
        loss = float(np.mean(np.sum(resid**2, axis=1)))
        dcoeff = 2.0 * np.einsum("bij,bi->bj", fund, resid) / cfg.batch_size
        gw, gb = net.backward(tape, dcoeff)
        return loss, net.flatten_grads(gw, gb)

    return _run_adam(net, cfg, cfg.steps, loss_and_grads)


def _heun_grid(steps: int) -> np.ndarray:
    """Quadratically clustered grid from s = 1 down to (1/steps)^2.

    The conditional field has a sigma'(s)/sigma(s) ~ 1/(2s) endpoint; on
    this grid the per-step stiffness h/(2s) stays bounded by ~1.
    """
    k = np.arange(steps, 0, -1)
    return (k / steps) ** 2


def heun_integrate(velocity_fn, x0: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Heun (explicit trapezoid) integration of dx/ds = v(x, s) along grid."""
    x = np.array(x0, dtype=float)
    for k in range(len(grid) - 1):
        s0, s1 = grid[k], grid[k + 1]
        h = s1 - s0
        v0 = velocity_fn(x, s0)
        xe = x + h * v0
        v1 = velocity_fn(xe, s1)
        x = x + 0.5 * h * (v0 + v1)
    return x


def ode_sample(
    net: ScoreNetwork,
    g: GroupAction,
    sched: NoiseSchedule,
    n: int,
    rng: np.random.Generator,
    steps: int = 1000,
) -> SampleBatch:
    """Integrate the learned velocity field backward from the tau prior."""
    tau = rng.standard_normal((n, g.dim_g))
    x = g.from_flow(tau)

    def velocity(xc, s):
        xc = g.clamp_nonsingular(xc)
        coeff = net.forward(xc, np.full(xc.shape[0], s * sched.T))
        return np.einsum("bij,bj->bi", g.fundamental_matrix(xc), coeff)

    x = heun_integrate(velocity, x, _heun_grid(steps))
    finite = np.all(np.isfinite(x), axis=-1)
    return SampleBatch(
        x=x[finite], group_id=g.group_id, meta={"dropped": int(np.sum(~finite))}
    )


def integrate_conditional_backward(
    g: GroupAction,
    sched: NoiseSchedule,
    tau0: np.ndarray,
    eta: np.ndarray,
    steps: int = 1000,
) -> np.ndarray:
    """Recover x_0 by integrating the analytic conditional field backward.

    The per-sample state carries an unwrapped copy of tau alongside x (the
    conditional path lives on the real line; the principal branch of the
    chart would tear it at the angular cut).  The Cartesian update uses the
    full Pi(x)-composed field; the tau update uses its generator
    coefficients, which is the same field expressed in the chart.
    """
    tau0 = np.atleast_2d(np.asarray(tau0, dtype=float))
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    grid = _heun_grid(steps)
    a1, _, sig1 = _interp(sched, grid[0])
    tau = a1 * tau0 + sig1 * eta
    x = g.from_flow(tau)

    def rates(xc, tc, s):
        b = cfm_bracket(sched, tc, tau0, s)
        u = np.einsum("bij,bj->bi", g.fundamental_matrix(xc), b)
        return u, b

    for k in range(len(grid) - 1):
        s0, s1 = grid[k], grid[k + 1]
        h = s1 - s0
        u0, b0 = rates(x, tau, s0)
        xe, taue = x + h * u0, tau + h * b0
        u1, b1 = rates(xe, taue, s1)
        x = x + 0.5 * h * (u0 + u1)
        tau = tau + 0.5 * h * (b0 + b1)
    return x
