"""Acceptance suite: one test per criterion, printed as a pass/fail line.

Every tolerance is pinned here, straight from the contract.  The trained-model
criteria share module-scoped results so the expensive runs happen once.
Expected wall time for the full module is dominated by the ten toy training
runs (a few minutes each on CPU).
"""

import itertools
import time

import numpy as np
import pytest

from liediffuse.chains import bond_angle, dihedral_angle, torsion_operator
from liediffuse.datasets import DatasetSpec, generate, generate_bridge_pair
from liediffuse.groups import make_group
from liediffuse.metrics import normalized_w2, w2_exact
from liediffuse.model import Adam, ScoreNetwork, TrainConfig
from liediffuse.schedule import make_bridge_schedule, make_schedule
from liediffuse.sde import bridge_sample, sample
from liediffuse.se3 import global_se3_group
from liediffuse.training import (
    integrate_conditional_backward,
    ode_sample,
    train_bridge_score,
    train_cfm,
    train_score,
)
from liediffuse.verify import (
    check_forward_equivalence,
    check_so2_closed_form,
    run_all,
)

TOY_STEPS = 20000
TOY_TABLE = [
    # dataset, group, paper value
    ("mog2d", "SO2Dilation", 0.34),
    ("mog2d", "TranslationN", 0.15),
    ("circles2d", "SO2Dilation", 0.19),
    ("circles2d", "TranslationN", 0.17),
    ("line2d", "SO2Dilation", 0.33),
    ("line2d", "TranslationN", 0.56),
    ("torus3d", "SO3Dilation", 0.14),
    ("torus3d", "TranslationN", 0.35),
    ("moebius3d", "SO3Dilation", 0.06),
    ("moebius3d", "TranslationN", 0.16),
]
BAND = 0.15


def _report(name, passed, detail):
    print(f"[acceptance] {'PASS' if passed else 'FAIL'} {name}: {detail}")
    return passed


def _toy_group(dataset, gid):
    dim = 3 if dataset.endswith("3d") else 2
    return make_group(gid, {"n": dim} if gid == "TranslationN" else {})


def _train_and_eval(dataset, gid, seed=0, loss_kind="score_matching"):
    g = _toy_group(dataset, gid)
    sched = make_schedule("cosine", 100)
    data = generate(DatasetSpec(dataset, 4096, seed))
    net = ScoreNetwork(g.dim_x, g.dim_g, seed=seed)
    cfg = TrainConfig(steps=TOY_STEPS, seed=seed, loss_kind=loss_kind)
    rng = np.random.default_rng(seed)
    if loss_kind == "flow_matching":
        report = train_cfm(net, g, sched, data, cfg, rng)
        batch = ode_sample(net, g, sched, 2048 + 256, np.random.default_rng(seed + 1), steps=400)
    else:
        report = train_score(net, g, sched, data, cfg, rng)
        batch = sample(
            g, sched, lambda x, t: net.forward(x, float(t)), 2048 + 256,
            np.random.default_rng(seed + 1),
        )
    n = min(2048, batch.n)
    target = generate(DatasetSpec(dataset, n, seed + 2))
    prior = g.from_flow(np.random.default_rng(seed + 3).standard_normal((n, g.dim_g)))
    res = normalized_w2(batch.x[:n], target.x, prior)
    return res.normalized_w2, report


@pytest.fixture(scope="module")
def toy_results():
    results = {}
    for dataset, gid, paper in TOY_TABLE:
        nw2, report = _train_and_eval(dataset, gid)
        results[(dataset, gid)] = (nw2, paper, report)
    return results


# -- criterion 1: identity suite ---------------------------------------------


def test_criterion_1_identity_suite():
    t0 = time.perf_counter()
    rep = run_all(seed=0, include_forward=False)
    elapsed = time.perf_counter() - t0
    failures = [(r.check_id, r.group_id) for r in rep.records if not r.passed]
    ok = rep.passed and elapsed <= 120.0
    assert _report(
        "criterion 1 (identity suite)",
        ok,
        f"{len(rep.records)} checks, failures={failures}, {elapsed:.0f}s (cap 120s)",
    )


# -- criterion 2: exact solvability ------------------------------------------


def test_criterion_2_forward_equivalence():
    sched = make_schedule("cosine", 100)
    t0 = time.perf_counter()
    worst = {}
    for gid in ("TranslationN", "SO2Dilation", "SO3Dilation"):
        g = make_group(gid, {"n": 2} if gid == "TranslationN" else {})
        rec = check_forward_equivalence(
            g, sched, 4096, np.random.default_rng(1), em_steps=1000
        )
        worst[gid] = rec.max_error
        assert rec.passed, (gid, rec.max_error, rec.detail)
    elapsed = time.perf_counter() - t0
    ok = all(v <= 0.05 for v in worst.values()) and elapsed <= 300.0
    assert _report(
        "criterion 2 (exact solvability)",
        ok,
        f"sliced-W2 {dict((k, round(v, 4)) for k, v in worst.items())} <= 0.05, "
        f"{elapsed:.0f}s (cap 300s)",
    )


# -- criterion 3: the 2-d closed form ----------------------------------------


def test_criterion_3_so2_closed_form():
    recs = check_so2_closed_form(4096, np.random.default_rng(2))
    path, term = recs
    ok = path.passed and term.passed
    assert _report(
        "criterion 3 (closed-form reconstruction)",
        ok,
        f"pathwise {path.max_error:.2e} <= 1e-6, terminal {term.max_error:.4f} <= 0.05",
    )


# -- criterion 4: oracle-score sampling --------------------------------------


def test_criterion_4_oracle_score_sampling():
    sched = make_schedule("cosine", 100)
    outcomes = {}
    for gid, m, s in [
        ("SO2Dilation", np.array([0.2, 0.4]), 0.2),
        ("SO3Dilation", np.array([0.0, 1.3, 0.4]), 0.15),
    ]:
        g = make_group(gid, {})

        def score_fn(x, t, m=m, s=s, g=g):
            tau = g.to_flow(g.clamp_nonsingular(x))
            var = sched.alpha_bar[t] ** 2 * s**2 + sched.sigma[t] ** 2
            return -(tau - sched.alpha_bar[t] * m) / var

        batch = sample(g, sched, score_fn, 2048, np.random.default_rng(3))
        truth = g.from_flow(
            m + s * np.random.default_rng(4).standard_normal((2048, g.dim_g))
        )
        outcomes[gid] = w2_exact(batch.x, truth[: batch.n])
    ok = all(v <= 0.1 for v in outcomes.values())
    assert _report(
        "criterion 4 (oracle-score sampling)",
        ok,
        f"exact W2 {dict((k, round(v, 4)) for k, v in outcomes.items())} <= 0.1 at n=2048",
    )


# -- criterion 5: translation reduction --------------------------------------


def test_criterion_5_translation_reduction():
    from liediffuse.sde import forward_sample, reverse_step

    g = make_group("TranslationN", {"n": 3})
    sched = make_schedule("cosine", 100)
    rng_a = np.random.default_rng(5)
    rng_b = np.random.default_rng(5)
    x0 = np.array([[0.4, -0.2, 1.0], [0.1, 0.9, -0.7]])
    worst = 0.0
    for t in (1, 25, 50, 75, 100):
        draw = forward_sample(g, sched, x0, t, rng_a)
        eta = rng_b.standard_normal((2, 3))
        standard_fwd = (
            sched.alpha_bar[t] * x0 + sched.sigma[t] * eta
        )  # independent standard VP corruption
        worst = max(worst, float(np.max(np.abs(draw.x_t - standard_fwd))))
        score = np.tanh(draw.x_t)  # arbitrary shared score
        eta2_a = np.random.default_rng(100 + t).standard_normal((2, 3))
        ours = reverse_step(g, sched, draw.x_t, t, score, eta=eta2_a)
        beta = sched.beta[t]
        standard_rev = draw.x_t + beta * (0.5 * draw.x_t + score) + np.sqrt(beta) * eta2_a
        worst = max(worst, float(np.max(np.abs(ours - standard_rev))))
    ok = worst <= 1e-12
    assert _report(
        "criterion 5 (T(n) reduction)", ok, f"max per-step deviation {worst:.2e} <= 1e-12"
    )


# -- criterion 6: toy table ---------------------------------------------------


def test_criterion_6_toy_table(toy_results):
    rows = []
    hits = 0
    for dataset, gid, paper in TOY_TABLE:
        nw2, paper_val, _ = toy_results[(dataset, gid)]
        in_band = abs(nw2 - paper_val) <= BAND
        hits += in_band
        rows.append(f"{dataset}/{gid}: {nw2:.3f} (paper {paper_val:.2f}) {'in' if in_band else 'OUT'}")
    # producable rows: >= 5 of 6 per group family, read as >= 8 of the 10 rows
    ok = hits >= 8
    assert _report(
        "criterion 6 (toy table)", ok, f"{hits}/10 rows in +-0.15 band; " + "; ".join(rows)
    )


def test_criterion_6_loss_decrease(toy_results):
    # trailing 500-step mean below 50% of the first 500-step mean
    bad = []
    for (dataset, gid), (_, _, report) in toy_results.items():
        first = np.mean([v for s, v in report.loss_curve if s < 500])
        last = np.mean([v for s, v in report.loss_curve if s >= TOY_STEPS - 500])
        if not last < 0.5 * first:
            bad.append((dataset, gid, first, last))
    ok = not bad
    assert _report("criterion 6b (loss decrease)", ok, f"violations={bad}")


# -- criterion 7: structured operators ---------------------------------------


def test_criterion_7_structured_operators():
    rng = np.random.default_rng(6)
    worst_rate, worst_bond = 0.0, 0.0
    for seed in range(5):
        steps = np.random.default_rng(seed).standard_normal((5, 3))
        steps /= np.linalg.norm(steps, axis=1, keepdims=True)
        chain = np.concatenate([[np.zeros(3)], np.cumsum(steps * 1.3, axis=0)])
        for i in (1, 2, 3):
            op = torsion_operator(chain, i, "centered")
            before = dihedral_angle(*chain[i - 1 : i + 3])
            h = 1e-3
            moved = op.flow(h, chain)
            after = dihedral_angle(*moved[i - 1 : i + 3])
            rate = ((after - before + np.pi) % (2 * np.pi) - np.pi) / h
            worst_rate = max(worst_rate, abs(rate - 1.0))
            big = op.flow(rng.uniform(0.5, 2.5), chain)
            b0 = np.linalg.norm(np.diff(chain, axis=0), axis=1)
            b1 = np.linalg.norm(np.diff(big, axis=0), axis=1)
            worst_bond = max(worst_bond, float(np.max(np.abs(b0 - b1))))
    g = global_se3_group(5)
    pose = g.from_flow(np.array([0.4, 1.0, -0.2, 0.3, -1.2, 0.7]))
    pts0 = pose.reshape(5, 3)
    d0 = [np.linalg.norm(pts0[a] - pts0[b]) for a, b in itertools.combinations(range(5), 2)]
    worst_se3 = 0.0
    for _ in range(10):
        tau = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.standard_normal(3)])
        pts = g.exp_apply(tau, pose).reshape(5, 3)
        d1 = [np.linalg.norm(pts[a] - pts[b]) for a, b in itertools.combinations(range(5), 2)]
        worst_se3 = max(worst_se3, float(np.max(np.abs(np.array(d0) - np.array(d1)))))
    ok = worst_rate <= 1e-3 and worst_bond <= 1e-6 and worst_se3 <= 1e-9
    assert _report(
        "criterion 7 (structured operators)",
        ok,
        f"|d(gamma)/d(tau) - 1| {worst_rate:.2e} <= 1e-3, bond drift {worst_bond:.2e} <= 1e-6, "
        f"SE3 distance drift {worst_se3:.2e} <= 1e-9",
    )


# -- criterion 8: flow matching ----------------------------------------------


def test_criterion_8_flow_matching(toy_results):
    g = make_group("SO2Dilation", {})
    sched = make_schedule("cosine", 100)
    rng = np.random.default_rng(7)
    tau0 = np.array([0.2, 0.4]) + 0.3 * rng.standard_normal((128, 2))
    eta = np.clip(rng.standard_normal((128, 2)), -4.0, 4.0)
    x0 = g.from_flow(tau0)
    rec = integrate_conditional_backward(g, sched, tau0, eta, steps=1000)
    recov = float(np.max(np.linalg.norm(rec - x0, axis=1)))

    cfm_nw2, _ = _train_and_eval("mog2d", "SO2Dilation", loss_kind="flow_matching")
    score_nw2 = toy_results[("mog2d", "SO2Dilation")][0]
    ok = recov <= 1e-3 and abs(cfm_nw2 - score_nw2) <= 0.15
    assert _report(
        "criterion 8 (flow matching)",
        ok,
        f"backward recovery {recov:.2e} <= 1e-3; CFM normW2 {cfm_nw2:.3f} vs "
        f"score {score_nw2:.3f} (|diff| <= 0.15)",
    )


# -- criterion 9: bridge demo -------------------------------------------------


def test_criterion_9_bridge_demo():
    g = make_group("SO2Dilation", {}).subset([1])
    bsched = make_bridge_schedule(100, 10.0)
    src, tgt = generate_bridge_pair(DatasetSpec("bridge_pair", 2048, 8))
    net = ScoreNetwork(2, 1, seed=8)
    cfg = TrainConfig(steps=6000, seed=8)
    train_bridge_score(net, g, bsched, tgt, cfg, np.random.default_rng(8))
    out = bridge_sample(
        g, bsched, lambda x, t: net.forward(x, float(t)), src.x,
        np.random.default_rng(9),
    )
    angles = np.arctan2(out.x[:, 1], out.x[:, 0])
    mean_angle = float(np.mean(np.abs(angles)))
    radius_drift = float(
        np.max(np.abs(np.linalg.norm(out.x, axis=1) - np.linalg.norm(src.x, axis=1)))
    )
    ok = mean_angle <= 0.1 and radius_drift <= 1e-6
    assert _report(
        "criterion 9 (bridge demo)",
        ok,
        f"mean |terminal angle| {mean_angle:.4f} <= 0.1 rad; radius drift "
        f"{radius_drift:.2e} <= 1e-6",
    )


# -- criterion 10: gradient check ---------------------------------------------


def test_criterion_10_gradient_check():
    net = ScoreNetwork(2, 2, hidden=(8, 8), time_dim=4, seed=1)
    rng = np.random.default_rng(10)
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
    rel = np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6))
    ok = rel <= 1e-4
    assert _report(
        "criterion 10 (gradient check)", ok, f"max relative gradient error {rel:.2e} <= 1e-4"
    )
