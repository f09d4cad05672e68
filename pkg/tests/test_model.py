import numpy as np
import pytest

from liediffuse.errors import InvalidParams, NonFiniteLoss
from liediffuse.groups import make_group
from liediffuse.model import Adam, ScoreNetwork, TrainConfig, net_forward
from liediffuse.schedule import make_schedule
from liediffuse.training import (
    cfm_bracket,
    cfm_target,
    integrate_conditional_backward,
    ode_sample,
    train_cfm,
    train_score,
)


def test_zero_head_outputs_zero():
    net = ScoreNetwork(2, 2, seed=0)
    out = net.forward(np.array([[1.0, 2.0], [-3.0, 0.5]]), 5)
    assert np.array_equal(out, np.zeros((2, 2)))


def test_forward_deterministic():
    x = np.array([[0.4, 0.5]])
    a = ScoreNetwork(2, 2, seed=3)
    b = ScoreNetwork(2, 2, seed=3)
    rng = np.random.default_rng(0)
    a.weights[-1][:] = rng.standard_normal(a.weights[-1].shape)
    b.weights[-1][:] = a.weights[-1]
    o1, o2 = a.forward(x, 7), b.forward(x, 7)
    assert np.array_equal(o1, o2)


@pytest.mark.parametrize("activation", ["silu", "tanh"])
def test_gradients_match_finite_differences(activation):
    # acceptance criterion: relative 1e-4 at h = 1e-4 on a 2-layer toy net
    net = ScoreNetwork(2, 2, hidden=(8, 8), time_dim=4, activation=activation, seed=1)
    rng = np.random.default_rng(2)
    net.weights[-1][:] = 0.1 * rng.standard_normal(net.weights[-1].shape)
    x = rng.standard_normal((6, 2))
    t = rng.integers(1, 10, size=6).astype(float)
    target = rng.standard_normal((6, 2))

    def loss_of(flat):
        net.set_params(flat)
        out = net.forward(x, t)
        return np.mean(np.sum((out - target) ** 2, axis=1))

    p0 = net.get_params()
    out, tape = net.forward(x, t, cache=True)
    gw, gb = net.backward(tape, 2.0 * (out - target) / 6)
    analytic = net.flatten_grads(gw, gb)
    h = 1e-4
    numeric = np.zeros_like(p0)
    for i in range(p0.size):
        up, dn = p0.copy(), p0.copy()
        up[i] += h
        dn[i] -= h
        numeric[i] = (loss_of(up) - loss_of(dn)) / (2 * h)
    net.set_params(p0)
    denom = np.maximum(np.abs(numeric), 1e-6)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-4


def test_silu_stable_at_extremes():
    net = ScoreNetwork(1, 1, hidden=(4,), time_dim=2, seed=0)
    out = net.forward(np.array([[1e6], [-1e6]]), 0)
    assert np.all(np.isfinite(out))


def test_param_vector_round_trip():
    net = ScoreNetwork(3, 2, hidden=(5,), time_dim=4, seed=4)
    flat = net.get_params()
    net.set_params(flat * 2.0)
    assert np.allclose(net.get_params(), flat * 2.0)
    with pytest.raises(InvalidParams):
        net.set_params(flat[:-1])


def test_adam_reduces_quadratic():
    opt = Adam(learning_rate=0.1)
    p = np.array([5.0, -3.0])
    for _ in range(200):
        p = opt.step(p, 2 * p)
    assert np.linalg.norm(p) < 1e-2


def test_train_config_validation():
    with pytest.raises(InvalidParams):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidParams):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(InvalidParams):
        TrainConfig(loss_kind="nope")


def test_empty_dataset_rejected():
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 10)
    net = ScoreNetwork(2, 2, seed=0)
    with pytest.raises(InvalidParams):
        train_score(net, g, sched, np.zeros((0, 2)), TrainConfig(steps=1), np.random.default_rng(0))


def test_single_point_score_converges_to_conditional():
    # single data point at a FIXED sigma_t: the trained score converges to
    # the analytic conditional; mean squared gap <= 1e-2 after 5k steps
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 100)
    t = 30
    a, sig = sched.alpha_bar[t], sched.sigma[t]
    tau0 = np.array([0.3, 0.5])
    net = ScoreNetwork(2, 2, hidden=(48, 48), time_dim=16, seed=0)
    opt = Adam(learning_rate=2e-3)
    rng = np.random.default_rng(0)
    for _ in range(5000):
        eta = rng.standard_normal((128, 2))
        x_t = g.from_flow(a * tau0 + sig * eta)
        pred, tape = net.forward(x_t, float(t), cache=True)
        resid = pred - (-eta / sig)
        gw, gb = net.backward(tape, 2.0 * resid / 128)
        net.set_params(opt.step(net.get_params(), net.flatten_grads(gw, gb)))
    eta = np.random.default_rng(1).standard_normal((512, 2))
    tau_t = a * tau0 + sig * eta
    pred = net_forward(net, g.from_flow(tau_t), float(t))
    exact = -(tau_t - a * tau0) / sig**2
    gap = np.mean(np.sum((pred - exact) ** 2, axis=1))
    assert gap <= 1e-2


def test_nonfinite_loss_raises():
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 10)
    net = ScoreNetwork(2, 2, hidden=(4,), time_dim=2, seed=0)
    net.weights[0][:] = 1e200  # force immediate overflow
    net.weights[-1][:] = 1e200
    data = g.from_flow(np.random.default_rng(0).standard_normal((16, 2)))
    with pytest.raises(NonFiniteLoss):
        train_score(net, g, sched, data, TrainConfig(steps=5, batch_size=8), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# flow matching
# ---------------------------------------------------------------------------


def test_cfm_target_on_path_reduces_to_mean_velocity():
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 100)
    tau0 = np.array([[0.3, 0.7]])
    s = 0.6
    from liediffuse.schedule import continuous_interpolant

    alpha_fn, alpha_prime_fn = continuous_interpolant("cosine")
    tau_t = alpha_fn(s) * tau0  # eta = 0: on the mean path
    x_t = g.from_flow(tau_t)
    u = cfm_target(g, sched, x_t, tau_t, tau0, s)
    fund = g.fundamental_matrix(x_t[0])
    expected = fund @ (alpha_prime_fn(s) * tau0[0])
    assert np.allclose(u[0], expected, atol=1e-12)


def test_cfm_target_translation_reduction():
    # T(n): u = mu' + (sigma'/sigma)(x - mu)
    g = make_group("TranslationN", {"n": 2})
    sched = make_schedule("cosine", 100)
    from liediffuse.schedule import continuous_interpolant

    alpha_fn, alpha_prime_fn = continuous_interpolant("cosine")
    rng = np.random.default_rng(5)
    tau0 = rng.standard_normal((8, 2))
    eta = rng.standard_normal((8, 2))
    s = 0.45
    a, ap = alpha_fn(s), alpha_prime_fn(s)
    sig = np.sqrt(1 - a**2)
    sp = -a * ap / sig
    x_t = a * tau0 + sig * eta
    u = cfm_target(g, sched, x_t, x_t, tau0, s)
    expected = ap * tau0 + (sp / sig) * (x_t - a * tau0)
    assert np.allclose(u, expected, atol=1e-12)


def test_cfm_target_degenerate_time():
    g = make_group("TranslationN", {"n": 2})
    sched = make_schedule("cosine", 100)
    from liediffuse.errors import DegenerateTime

    with pytest.raises(DegenerateTime):
        cfm_bracket(sched, np.zeros(2), np.zeros(2), 0.0)


def test_conditional_backward_recovers_x0():
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 100)
    rng = np.random.default_rng(6)
    tau0 = np.array([0.2, 0.4]) + 0.3 * rng.standard_normal((64, 2))
    eta = np.clip(rng.standard_normal((64, 2)), -4, 4)
    x0 = g.from_flow(tau0)
    rec = integrate_conditional_backward(g, sched, tau0, eta, steps=1000)
    assert np.max(np.linalg.norm(rec - x0, axis=1)) <= 1e-3


def test_zero_velocity_ode_returns_prior():
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 100)
    net = ScoreNetwork(2, 2, seed=0)  # zero head: zero velocity
    seed = 9
    batch = ode_sample(net, g, sched, 32, np.random.default_rng(seed), steps=64)
    prior = g.from_flow(np.random.default_rng(seed).standard_normal((32, 2)))
    assert np.allclose(batch.x, prior, atol=1e-12)


def test_train_cfm_runs_and_improves_on_zero_field():
    # the conditional-target variance dominates the loss floor, so the curve
    # itself is nearly flat; the meaningful check is that the trained field
    # explains more of the target than the zero field on a held-out batch
    from liediffuse.datasets import DatasetSpec, generate
    from liediffuse.schedule import continuous_interpolant

    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 100)
    data = generate(DatasetSpec("mog2d", 1024, 0))
    net = ScoreNetwork(2, 2, hidden=(32, 32), time_dim=8, seed=0)
    cfg = TrainConfig(batch_size=256, steps=2500, log_every=50, seed=0)
    report = train_cfm(net, g, sched, data, cfg, np.random.default_rng(0))
    assert np.isfinite(report.final_loss)
    alpha_fn, alpha_prime_fn = continuous_interpolant("cosine")
    rng = np.random.default_rng(1)
    tau0 = g.to_flow(data.x[:512])
    s = rng.uniform(0.3, 0.9, 512)
    eta = rng.standard_normal((512, 2))
    a, ap = alpha_fn(s), alpha_prime_fn(s)
    sig = np.sqrt(1 - a**2)
    sp = -a * ap / sig
    x_t = g.from_flow(a[:, None] * tau0 + sig[:, None] * eta)
    bracket = ap[:, None] * tau0 + sp[:, None] * eta
    fund = g.fundamental_matrix(x_t)
    u = np.einsum("bij,bj->bi", fund, bracket)
    coeff = net.forward(x_t, s * sched.T)
    v = np.einsum("bij,bj->bi", fund, coeff)
    trained = np.mean(np.sum((v - u) ** 2, axis=1))
    zero = np.mean(np.sum(u**2, axis=1))
    assert trained < 0.8 * zero
