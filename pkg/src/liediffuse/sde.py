"""Forward corruption, reverse-time sampling, and the zero-drift bridge.

The forward process never simulates an SDE: flow coordinates follow the
closed-form Gaussian tau_t = alpha_bar_t tau_0 + sigma_t eta and states are
rebuilt through the inverse chart.  An Euler-Maruyama integrator of the
Cartesian SDE (drift beta Pi f + (gamma^2/2) Casimir, diffusion gamma Pi)
is kept as a verification oracle only.

The reverse sampler iterates, for t = T..1,

    v = sum_i (tau_t_i / 2 + score_i) A_i x  +  Casimir/2  [+ divergence]
    x_{t-1} = x_t + beta_t v + sqrt(beta_t) sum_i eta_i A_i x,

recomputing tau from x in the principal branch each step.  The divergence
velocity belongs in the update only when the score refers to the state
density p_t(x); denoising training against -eta/sigma_t estimates the
flow-coordinate score, which absorbs that term (the divergences are the
flow gradient of log |det Pi|), so the default sampler omits it -- the
two pairings are the same reverse SDE and the verify suite checks their
equivalence.  States are radius-clamped out of singular sets (a sampler
must be total); chains that still go non-finite are dropped and counted.

The bridge variant drives pure Brownian motion in the flow coordinates
(no drift) and applies reverse increments through the exact group
exponential, so inactive coordinates are conserved exactly -- rotating a
point never changes its radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import SampleBatch
from .errors import DegenerateTime, InvalidParams, NonFiniteState
from .groups import GroupAction, SubsetGroup
from .schedule import BridgeSchedule, NoiseSchedule


@dataclass
class ForwardDraw:
    """One closed-form forward corruption draw."""

    x_t: np.ndarray
    tau_t: np.ndarray
    eta: np.ndarray
    t: int | np.ndarray


@dataclass
class Trajectory:
    """Recorded integration path of the oracle SDE."""

    states: np.ndarray  # (steps + 1, dim_x)
    times: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)


def _check_time(sched: NoiseSchedule, t) -> None:
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > sched.T):
        raise InvalidParams(f"time index out of range [0, {sched.T}]")


def forward_sample(
    g: GroupAction, sched: NoiseSchedule, x0: np.ndarray, t, rng: np.random.Generator
) -> ForwardDraw:
    """Sample x_t | x_0 from the exactly solvable forward process.

    Accepts a single state or a batch; with a batch, `t` may be a
    per-sample integer array.
    """
    _check_time(sched, t)
    tau0 = g.to_flow(x0)
    eta = rng.standard_normal(tau0.shape)
    a = sched.alpha_bar[t]
    s = sched.sigma[t]
    if tau0.ndim > 1:
        a = np.asarray(a).reshape(-1, 1) if np.ndim(a) else a
        s = np.asarray(s).reshape(-1, 1) if np.ndim(s) else s
    tau_t = a * tau0 + s * eta
    return ForwardDraw(x_t=g.from_flow(tau_t), tau_t=tau_t, eta=eta, t=t)


def conditional_score(sched: NoiseSchedule, t: int, eta: np.ndarray) -> np.ndarray:
    """Generalized score of the forward conditional: -eta / sigma_t."""
    _check_time(sched, t)
    sigma = sched.sigma[t]
    if np.any(np.asarray(sigma) == 0.0):
        raise DegenerateTime(f"sigma_t = 0 at t = {t}")
    return -np.asarray(eta, dtype=float) / sigma


# ---------------------------------------------------------------------------
# Euler-Maruyama oracle for the Cartesian forward SDE
# ---------------------------------------------------------------------------


def _em_core(g, x, beta_fn, gamma_fn, f_fn, t_end, steps, rng, record=None, f_in_tau=False):
    """Euler-Maruyama stepping of the Cartesian forward SDE.

    With `f_in_tau` the drift coefficients are evaluated on a flow
    coordinate carried along the path by the paired coordinate SDE (same
    Brownian increments): drifts affine in tau are functions of the
    unwrapped coordinate, which a principal-branch chart lookup would fold
    at the angular cuts.
    """
    dt = t_end / steps
    clamped = 0
    tau = g.to_flow(g.clamp_nonsingular(x)) if f_in_tau else None
    for k in range(steps):
        s = k * dt
        xc = g.clamp_nonsingular(x)
        clamped += int(np.any(xc != x))
        x = xc
        beta = float(beta_fn(s))
        gamma = float(gamma_fn(s))
        fund = g.fundamental_matrix(x)
        f_val = f_fn(tau) if f_in_tau else f_fn(x)
        drift = beta * np.einsum("...ij,...j->...i", fund, f_val)
        drift = drift + 0.5 * gamma * gamma * g.casimir_field(x)
        noise = rng.standard_normal(x.shape[:-1] + (g.dim_g,))
        x = x + drift * dt + gamma * np.sqrt(dt) * np.einsum(
            "...ij,...j->...i", fund, noise
        )
        if f_in_tau:
            tau = tau + beta * f_val * dt + gamma * np.sqrt(dt) * noise
        if record is not None:
            record[k + 1] = x
    return x, clamped


def euler_maruyama_forward(
    g: GroupAction,
    x0: np.ndarray,
    beta_fn,
    gamma_fn,
    f_fn,
    t_end: float,
    steps: int,
    rng: np.random.Generator,
    f_in_tau: bool = False,
) -> Trajectory:
    """Integrate the forward SDE for a single chain, recording the path."""
    if steps < 1:
        raise InvalidParams(f"steps must be >= 1, got {steps}")
    x0 = np.asarray(x0, dtype=float)
    record = np.empty((steps + 1,) + x0.shape)
    record[0] = x0
    _, clamped = _em_core(
        g, x0, beta_fn, gamma_fn, f_fn, t_end, steps, rng, record, f_in_tau
    )
    times = np.linspace(0.0, t_end, steps + 1)
    return Trajectory(states=record, times=times, meta={"clamped_steps": clamped})


def em_forward_terminal(
    g: GroupAction,
    x0: np.ndarray,
    beta_fn,
    gamma_fn,
    f_fn,
    t_end: float,
    steps: int,
    rng: np.random.Generator,
    f_in_tau: bool = False,
) -> np.ndarray:
    """Terminal states of the oracle SDE for a batch (paths not stored)."""
    if steps < 1:
        raise InvalidParams(f"steps must be >= 1, got {steps}")
    x, _ = _em_core(
        g,
        np.asarray(x0, dtype=float),
        beta_fn,
        gamma_fn,
        f_fn,
        t_end,
        steps,
        rng,
        f_in_tau=f_in_tau,
    )
    return x


# ---------------------------------------------------------------------------
# Reverse-time sampler
# ---------------------------------------------------------------------------


def _reverse_update(g, beta_t, x_t, score, eta, include_drift=True, score_space="flow"):
    """One reverse velocity-and-noise update.

    The reverse drift depends on which density the score refers to.  With
    `score_space="state"` the score is the generalized score of the state
    density p_t(x) and the update is the literal sampler recipe

        v = sum_i (tau_i/2 + s_i) A_i x + Casimir/2 + divergence.

    With `score_space="flow"` the score is the gradient of the
    flow-coordinate density log p_t(tau) -- the quantity the denoising
    targets -eta/sigma_t estimate.  The two differ by the flow gradient of
    log |det Pi| , which equals the per-generator divergences, so the
    divergence velocity is already inside a flow-space score and must not
    be added again:

        v = sum_i (tau_i/2 + s_i) A_i x + Casimir/2.

    Both forms are the same Anderson reverse SDE; feeding a flow-space
    score to the state-space form inflates the radial drift exponentially.
    """
    tau_t = g.to_flow(x_t)
    fund = g.fundamental_matrix(x_t)
    coeff = (0.5 * tau_t if include_drift else 0.0) + score
    v = np.einsum("...ij,...j->...i", fund, coeff)
    v = v + 0.5 * g.casimir_field(x_t)
    if score_space == "state":
        v = v + g.divergence_field(x_t)
    elif score_space != "flow":
        raise InvalidParams(f"unknown score_space {score_space!r}")
    x_next = x_t + beta_t * v
    return x_next + np.sqrt(beta_t) * np.einsum("...ij,...j->...i", fund, eta)


def reverse_step(
    g: GroupAction,
    sched: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    score: np.ndarray,
    rng: np.random.Generator | None = None,
    deterministic_last: bool = True,
    eta: np.ndarray | None = None,
    score_space: str = "flow",
) -> np.ndarray:
    """One reverse update x_t -> x_{t-1} at step t in [1, T].

    `score_space` selects the density the score refers to (see
    `_reverse_update`): "flow" for denoising-trained scores (default),
    "state" for the literal sampler recipe with the divergence velocity.
    """
    if not 1 <= t <= sched.T:
        raise InvalidParams(f"reverse step needs 1 <= t <= {sched.T}, got {t}")
    x_t = g.clamp_nonsingular(np.asarray(x_t, dtype=float))
    score = np.asarray(score, dtype=float)
    if score.shape[-1] != g.dim_g:
        raise InvalidParams(f"score must have {g.dim_g} entries")
    if eta is None:
        if t == 1 and deterministic_last:
            eta = np.zeros(x_t.shape[:-1] + (g.dim_g,))
        else:
            if rng is None:
                raise InvalidParams("rng required when eta is not supplied")
            eta = rng.standard_normal(x_t.shape[:-1] + (g.dim_g,))
    x_prev = _reverse_update(g, sched.beta[t], x_t, score, eta, score_space=score_space)
    if not np.all(np.isfinite(x_prev)):
        raise NonFiniteState(f"non-finite state after reverse step t = {t}")
    return x_prev


def sample(
    g: GroupAction,
    sched: NoiseSchedule,
    score_fn,
    n_samples: int,
    rng: np.random.Generator,
    trajectories: bool = False,
) -> SampleBatch:
    """Draw n_samples by integrating the reverse process from the prior.

    score_fn(x, t) maps a (B, dim_x) batch and a step index to (B, dim_g)
    generalized scores.  Non-finite chains are dropped and counted in the
    batch metadata.
    """
    if n_samples < 0:
        raise InvalidParams("n_samples must be >= 0")
    if n_samples == 0:
        return SampleBatch(
            x=np.zeros((0, g.dim_x)), group_id=g.group_id, meta={"dropped": 0}
        )
    tau_T = rng.standard_normal((n_samples, g.dim_g))
    x = g.from_flow(tau_T)
    path = [x.copy()] if trajectories else None
    for t in range(sched.T, 0, -1):
        with np.errstate(all="ignore"):
            alive = np.all(np.isfinite(x), axis=-1)
            x[~alive] = np.nan  # freeze diverged chains
            xs = g.clamp_nonsingular(np.where(alive[:, None], x, 0.0))
            score = np.asarray(score_fn(xs, t), dtype=float)
            eta = (
                np.zeros((n_samples, g.dim_g))
                if t == 1
                else rng.standard_normal((n_samples, g.dim_g))
            )
            stepped = _reverse_update(g, sched.beta[t], xs, score, eta)
            x = np.where(alive[:, None], stepped, np.nan)
        if trajectories:
            path.append(x.copy())
    finite = np.all(np.isfinite(x), axis=-1)
    meta = {"dropped": int(np.sum(~finite))}
    if trajectories:
        meta["trajectories"] = np.stack(path, axis=0)[:, finite, :]
    return SampleBatch(x=x[finite], group_id=g.group_id, time_index=0, meta=meta)


# ---------------------------------------------------------------------------
# Zero-drift bridge
# ---------------------------------------------------------------------------


def bridge_forward(
    g: GroupAction,
    sched_bridge: BridgeSchedule,
    x0: np.ndarray,
    t,
    rng: np.random.Generator,
) -> ForwardDraw:
    """Brownian corruption tau_t = tau_0 + c_t eta along the group's flows.

    Works on full groups and on generator subsets; states are built by the
    exact group exponential of the increment, which coincides with the
    inverse chart on full groups and conserves inactive coordinates on
    subsets.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > sched_bridge.T):
        raise InvalidParams(f"time index out of range [0, {sched_bridge.T}]")
    tau0 = g.to_flow(x0)
    eta = rng.standard_normal(tau0.shape)
    c = sched_bridge.scale[t]
    if tau0.ndim > 1 and np.ndim(c):
        c = np.asarray(c).reshape(-1, 1)
    inc = c * eta
    x_t = g.exp_apply(inc, x0)
    return ForwardDraw(x_t=x_t, tau_t=tau0 + inc, eta=eta, t=t)


def bridge_conditional_score(
    sched_bridge: BridgeSchedule, t: int, eta: np.ndarray
) -> np.ndarray:
    """Score of the Brownian conditional: -eta / c_t."""
    c = sched_bridge.scale[t]
    if np.any(np.asarray(c) == 0.0):
        raise DegenerateTime(f"bridge scale is 0 at t = {t}")
    return -np.asarray(eta, dtype=float) / c


def bridge_sample(
    g: GroupAction,
    sched_bridge: BridgeSchedule,
    score_fn,
    x_source: np.ndarray,
    rng: np.random.Generator,
) -> SampleBatch:
    """Transport source states to the target by the reverse bridge.

    The drift term is absent (the forward bridge has none); each step moves
    along the group by the exact exponential of beta_t score + sqrt(beta_t)
    eta, so coordinates outside the active generator set are untouched.
    """
    x = np.atleast_2d(np.asarray(x_source, dtype=float)).copy()
    n = x.shape[0]
    for t in range(sched_bridge.T, 0, -1):
        x = g.clamp_nonsingular(x)
        score = np.asarray(score_fn(x, t), dtype=float)
        eta = (
            np.zeros((n, g.dim_g)) if t == 1 else rng.standard_normal((n, g.dim_g))
        )
        beta_t = sched_bridge.beta[t]
        x = g.exp_apply(beta_t * score + np.sqrt(beta_t) * eta, x)
    finite = np.all(np.isfinite(x), axis=-1)
    return SampleBatch(
        x=x[finite],
        group_id=g.group_id,
        time_index=0,
        meta={"dropped": int(np.sum(~finite))},
    )


__all__ = [
    "ForwardDraw",
    "Trajectory",
    "forward_sample",
    "conditional_score",
    "euler_maruyama_forward",
    "em_forward_terminal",
    "reverse_step",
    "sample",
    "bridge_forward",
    "bridge_conditional_score",
    "bridge_sample",
    "SubsetGroup",
]
