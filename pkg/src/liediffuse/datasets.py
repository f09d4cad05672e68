"""Seeded toy target distributions and dataset serialization.

All generators are deterministic given (name, n, seed, params).  Default
shape parameters live in DATASET_DEFAULTS and are echoed into every
artifact's metadata; they are this library's declared choices, documented
rather than recovered from any external source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import SampleBatch, load_csv, save_csv  # noqa: F401  (re-export)
from .errors import InvalidParams

DATASET_NAMES = (
    "mog2d",
    "mog3d",
    "mog4d",
    "circles2d",
    "line2d",
    "torus3d",
    "moebius3d",
    "angular1d",
    "radial1d",
    "bridge_pair",
)

DATASET_DEFAULTS: dict[str, dict] = {
    # 8 Gaussian modes equally spaced on a circle of radius 3
    "mog2d": {"modes": 8, "radius": 3.0, "sigma": 0.3},
    # 6 modes at +-radius e_i on the coordinate axes
    "mog3d": {"radius": 3.0, "sigma": 0.3},
    # 8 modes at +-radius e_i on a 3-sphere shell
    "mog4d": {"radius": 3.0, "sigma": 0.3},
    "circles2d": {"radii": (1.5, 3.0), "sigma": 0.08},
    # long thin segment passing near (not through) the origin
    "line2d": {"p0": (-4.0, -2.4), "p1": (4.0, 2.6), "sigma": 0.01},
    "torus3d": {"ring_radius": 2.0, "tube_radius": 0.6, "sigma": 0.05},
    "moebius3d": {"ring_radius": 2.0, "half_width": 0.5, "sigma": 0.05},
    # fixed radius, 2-component angular mixture
    "angular1d": {"radius": 2.0, "centers": (-1.2, 1.2), "sigma": 0.35},
    # radial 2-component mixture, uniform angle
    "radial1d": {"centers": (1.0, 2.5), "sigmas": (0.1, 0.2)},
    # target at angle 0 with lognormal-ish radii; source same radii, uniform angle
    "bridge_pair": {"radius_mean": 2.0, "radius_sigma": 0.3},
}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise InvalidParams(f"unknown dataset {self.name!r}")
        if self.n < 1:
            raise InvalidParams("sample count must be >= 1")
        merged = dict(DATASET_DEFAULTS[self.name])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


def _mog(rng, n, means, sigma):
    means = np.asarray(means, dtype=float)
    k = means.shape[0]
    comp = rng.integers(0, k, size=n)
    return means[comp] + sigma * rng.standard_normal((n, means.shape[1]))


def _gen_mog2d(rng, n, p):
    ang = 2 * np.pi * np.arange(p["modes"]) / p["modes"]
    means = p["radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return _mog(rng, n, means, p["sigma"])


def _gen_mog3d(rng, n, p):
    means = p["radius"] * np.concatenate([np.eye(3), -np.eye(3)], axis=0)
    return _mog(rng, n, means, p["sigma"])


def _gen_mog4d(rng, n, p):
    means = p["radius"] * np.concatenate([np.eye(4), -np.eye(4)], axis=0)
    return _mog(rng, n, means, p["sigma"])


def _gen_circles2d(rng, n, p):
    radii = np.asarray(p["radii"], dtype=float)
    r = radii[rng.integers(0, len(radii), size=n)] + p["sigma"] * rng.standard_normal(n)
    ang = rng.uniform(-np.pi, np.pi, size=n)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def _gen_line2d(rng, n, p):
    p0 = np.asarray(p["p0"], dtype=float)
    p1 = np.asarray(p["p1"], dtype=float)
    t = rng.uniform(0.0, 1.0, size=n)[:, None]
    pts = p0 + t * (p1 - p0)
    return pts + p["sigma"] * rng.standard_normal((n, 2))


def _gen_torus3d(rng, n, p):
    u = rng.uniform(-np.pi, np.pi, size=n)  # ring angle
    v = rng.uniform(-np.pi, np.pi, size=n)  # tube angle
    ring, tube = p["ring_radius"], p["tube_radius"]
    x = (ring + tube * np.cos(v)) * np.cos(u)
    y = (ring + tube * np.cos(v)) * np.sin(u)
    z = tube * np.sin(v)
    return np.stack([x, y, z], axis=1) + p["sigma"] * rng.standard_normal((n, 3))


def _gen_moebius3d(rng, n, p):
    u = rng.uniform(-np.pi, np.pi, size=n)
    w = rng.uniform(-p["half_width"], p["half_width"], size=n)
    ring = p["ring_radius"]
    x = (ring + w * np.cos(u / 2)) * np.cos(u)
    y = (ring + w * np.cos(u / 2)) * np.sin(u)
    z = w * np.sin(u / 2)
    return np.stack([x, y, z], axis=1) + p["sigma"] * rng.standard_normal((n, 3))


def _gen_angular1d(rng, n, p):
    centers = np.asarray(p["centers"], dtype=float)
    ang = centers[rng.integers(0, len(centers), size=n)]
    ang = ang + p["sigma"] * rng.standard_normal(n)
    r = p["radius"]
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def _gen_radial1d(rng, n, p):
    centers = np.asarray(p["centers"], dtype=float)
    sigmas = np.asarray(p["sigmas"], dtype=float)
    comp = rng.integers(0, len(centers), size=n)
    r = np.abs(centers[comp] + sigmas[comp] * rng.standard_normal(n))
    ang = rng.uniform(-np.pi, np.pi, size=n)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


_GENERATORS = {
    "mog2d": _gen_mog2d,
    "mog3d": _gen_mog3d,
    "mog4d": _gen_mog4d,
    "circles2d": _gen_circles2d,
    "line2d": _gen_line2d,
    "torus3d": _gen_torus3d,
    "moebius3d": _gen_moebius3d,
    "angular1d": _gen_angular1d,
    "radial1d": _gen_radial1d,
}


def generate(spec: DatasetSpec) -> SampleBatch:
    """Draw a toy dataset; bitwise deterministic given the spec."""
    if spec.name == "bridge_pair":
        raise InvalidParams("bridge_pair produces two batches; use generate_bridge_pair")
    rng = np.random.default_rng(spec.seed)
    x = _GENERATORS[spec.name](rng, spec.n, spec.params)
    return SampleBatch(
        x=x, seed=spec.seed, meta={"dataset": spec.name, "params": dict(spec.params)}
    )


def generate_bridge_pair(spec: DatasetSpec) -> tuple[SampleBatch, SampleBatch]:
    """(source, target) pair for the rotation bridge demo.

    Target points sit at angle 0 with radii r_i; source points reuse the
    same radii at independent uniform angles, so the ideal transport is a
    pure rotation of every sample.
    """
    if spec.name != "bridge_pair":
        raise InvalidParams(f"expected a bridge_pair spec, got {spec.name!r}")
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    r = np.abs(p["radius_mean"] + p["radius_sigma"] * rng.standard_normal(spec.n))
    r = np.maximum(r, 0.1)
    target = np.stack([r, np.zeros_like(r)], axis=1)
    ang = rng.uniform(-np.pi, np.pi, size=spec.n)
    source = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    meta = {"dataset": spec.name, "params": dict(p)}
    return (
        SampleBatch(x=source, seed=spec.seed, meta=dict(meta, role="source")),
        SampleBatch(x=target, seed=spec.seed, meta=dict(meta, role="target")),
    )
