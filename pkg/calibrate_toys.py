"""Dev-only calibration sweep for the toy table (not part of the package)."""
import sys
import time

import numpy as np

from liediffuse.datasets import DatasetSpec, generate
from liediffuse.groups import make_group
from liediffuse.metrics import normalized_w2
from liediffuse.model import ScoreNetwork, TrainConfig
from liediffuse.schedule import make_schedule
from liediffuse.sde import sample
from liediffuse.training import train_score

ROWS = [
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


def run_row(dataset, gid, seed=0, steps=20000, n_eval=2048):
    dim = 3 if dataset.endswith("3d") else 2
    g = make_group(gid, {"n": dim} if gid == "TranslationN" else {})
    sched = make_schedule("cosine", 100)
    data = generate(DatasetSpec(dataset, 4096, seed))
    net = ScoreNetwork(g.dim_x, g.dim_g, seed=seed)
    cfg = TrainConfig(steps=steps, seed=seed)
    t0 = time.perf_counter()
    train_score(net, g, sched, data, cfg, np.random.default_rng(seed))
    t_train = time.perf_counter() - t0
    batch = sample(
        g, sched, lambda x, t: net.forward(x, float(t)), n_eval + 256,
        np.random.default_rng(seed + 1),
    )
    n = min(n_eval, batch.n)
    target = generate(DatasetSpec(dataset, n, seed + 2))
    prior = g.from_flow(np.random.default_rng(seed + 3).standard_normal((n, g.dim_g)))
    res = normalized_w2(batch.x[:n], target.x, prior)
    return res.normalized_w2, res.raw_w2, t_train, batch.meta["dropped"]


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    only = sys.argv[2:] if len(sys.argv) > 2 else None
    for dataset, gid, paper in ROWS:
        if only and dataset not in only:
            continue
        nw2, raw, t_train, dropped = run_row(dataset, gid, seed=seed)
        lo, hi = paper - 0.15, paper + 0.15
        status = "IN " if lo <= nw2 <= hi else "OUT"
        print(
            f"{status} {dataset:10s} {gid:14s} normW2={nw2:.3f} band=[{lo:.2f},{hi:.2f}] "
            f"raw={raw:.3f} train={t_train:.0f}s dropped={dropped}",
            flush=True,
        )
