"""Command-line entry point: generate / train / sample / bridge / eval / verify.

Configuration lives in an INI file with sections [run], [group], [schedule],
[train], [dataset], [bridge], [sample]; every key has a generated CLI flag
--<section>-<key> that overrides the file, which overrides the defaults.
Outputs are written to temporary names and renamed on success, and every
artifact carries the resolved config and seed.  Exit codes: 0 success,
1 verification or evaluation failure, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import base64
import configparser
import json
import os
import sys

import numpy as np

from . import datasets as data_mod
from .batch import SampleBatch, load_csv, save_csv
from .errors import InvalidParams, LieDiffuseError, SchemaError
from .groups import GroupAction, make_group
from .metrics import normalized_w2
from .model import ScoreNetwork, TrainConfig
from .schedule import BridgeSchedule, NoiseSchedule, make_bridge_schedule, make_schedule
from .sde import bridge_conditional_score, bridge_sample, sample
from .training import ode_sample, train_bridge_score, train_cfm, train_score
from .verify import DEFAULT_TOLERANCES, run_all

CHECKPOINT_VERSION = 1
TRAJECTORY_CAP = 64

CONFIG_DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "", "output_dir": "."},
    "group": {"id": "SO2Dilation", "n": "2", "radius_convention": "log_radius"},
    "schedule": {"kind": "cosine", "T": "100"},
    "train": {
        "batch_size": "256",
        "steps": "20000",
        "learning_rate": "1e-3",
        "beta1": "0.9",
        "beta2": "0.999",
        "eps": "1e-8",
        "loss_kind": "score_matching",
        "hidden": "128,128,128",
        "time_dim": "32",
        "activation": "silu",
        "log_every": "100",
        "ema_decay": "0.999",
        "grad_clip": "100.0",
    },
    "dataset": {"name": "mog2d", "n": "4096", "path": ""},
    "bridge": {
        "T": "100",
        "total_variance": "10.0",
        "active": "",
        "source": "",
        "target": "",
    },
    "sample": {"n": "2048", "trajectories": "", "unsafe_large": "0"},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def load_config(path: str | None, overrides: dict[str, str]) -> dict[str, dict[str, str]]:
    cfg = {s: dict(v) for s, v in CONFIG_DEFAULTS.items()}
    if path:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for section in parser.sections():
            if section not in cfg:
                raise UsageError(f"unknown config section [{section}]")
            for key, val in parser.items(section):
                if key not in cfg[section]:
                    raise UsageError(f"unknown config key {section}.{key}")
                cfg[section][key] = val
    for dotted, val in overrides.items():
        section, key = dotted.split(".", 1)
        cfg[section][key] = val
    return cfg


def _require_seed(cfg) -> int:
    raw = cfg["run"]["seed"]
    if raw == "":
        raise UsageError("run.seed is mandatory (no wall-clock seeding)")
    return int(raw)


def _group_from_config(cfg) -> GroupAction:
    section = cfg["group"]
    gid = section["id"]
    params: dict = {}
    if gid in ("TranslationN", "SONDilation"):
        params["n"] = int(section["n"])
    if gid == "GlobalSE3":
        params["n_points"] = int(section["n"])
    if gid == "SO2Dilation":
        params["radius_convention"] = section["radius_convention"]
    return make_group(gid, params)


def _schedule_from_config(cfg) -> NoiseSchedule:
    return make_schedule(cfg["schedule"]["kind"], int(cfg["schedule"]["T"]))


def _train_config(cfg, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        batch_size=int(t["batch_size"]),
        steps=int(t["steps"]),
        learning_rate=float(t["learning_rate"]),
        beta1=float(t["beta1"]),
        beta2=float(t["beta2"]),
        eps=float(t["eps"]),
        seed=seed,
        loss_kind=t["loss_kind"],
        log_every=int(t["log_every"]),
        ema_decay=float(t["ema_decay"]),
        grad_clip=float(t["grad_clip"]),
    )


def _network_from_config(cfg, g: GroupAction, seed: int) -> ScoreNetwork:
    t = cfg["train"]
    hidden = tuple(int(h) for h in t["hidden"].split(",") if h)
    return ScoreNetwork(
        dim_x=g.dim_x,
        dim_g=g.dim_g,
        hidden=hidden,
        time_dim=int(t["time_dim"]),
        activation=t["activation"],
        seed=seed,
    )


def _dataset_from_config(cfg, seed: int) -> SampleBatch:
    d = cfg["dataset"]
    if d["path"]:
        return load_csv(d["path"])
    spec = data_mod.DatasetSpec(name=d["name"], n=int(d["n"]), seed=seed)
    return data_mod.generate(spec)


# ---------------------------------------------------------------------------
# atomic artifact writing
# ---------------------------------------------------------------------------


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_save_csv(batch: SampleBatch, path: str) -> None:
    tmp = path + ".tmp"
    save_csv(batch, tmp)
    os.replace(tmp, path)


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _decode_array(text: str, shape) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(text), dtype="<f8")
    return flat.reshape(shape).copy()


def checkpoint_payload(
    cfg,
    g: GroupAction,
    net: ScoreNetwork,
    sched: NoiseSchedule | None,
    bridge: BridgeSchedule | None,
    train_steps: int,
    kind: str,
    active_indices=None,
) -> dict:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": cfg,
        "group": {
            "id": cfg["group"]["id"],
            "n": cfg["group"]["n"],
            "radius_convention": cfg["group"]["radius_convention"],
        },
        "loss_kind": cfg["train"]["loss_kind"],
        "train_steps": train_steps,
        "network": {
            "layer_sizes": net.layer_sizes,
            "time_dim": net.time_dim,
            "activation": net.activation,
            "weights": [
                {"shape": list(w.shape), "data": _encode_array(w)} for w in net.weights
            ],
            "biases": [
                {"shape": list(b.shape), "data": _encode_array(b)} for b in net.biases
            ],
        },
    }
    if sched is not None:
        payload["schedule"] = {
            "kind": sched.kind,
            "T": sched.T,
            "beta": _encode_array(sched.beta),
            "alpha_bar": _encode_array(sched.alpha_bar),
            "sigma": _encode_array(sched.sigma),
        }
    if bridge is not None:
        payload["bridge_schedule"] = {
            "T": bridge.T,
            "beta": _encode_array(bridge.beta),
        }
    if active_indices is not None:
        payload["active_indices"] = list(active_indices)
    return payload


def save_checkpoint(payload: dict, path: str) -> None:
    _atomic_write_text(path, _json_text(payload))


def load_checkpoint(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise SchemaError(
            f"checkpoint format_version {version} != {CHECKPOINT_VERSION}; refusing to migrate"
        )
    return payload


def restore_from_checkpoint(payload: dict):
    cfg = payload["config"]
    g = _group_from_config(cfg)
    netp = payload["network"]
    hidden = tuple(netp["layer_sizes"][1:-1])
    net = ScoreNetwork(
        dim_x=g.dim_x,
        dim_g=netp["layer_sizes"][-1],
        hidden=hidden,
        time_dim=netp["time_dim"],
        activation=netp["activation"],
    )
    for w, spec in zip(net.weights, netp["weights"]):
        w[:] = _decode_array(spec["data"], spec["shape"])
    for b, spec in zip(net.biases, netp["biases"]):
        b[:] = _decode_array(spec["data"], spec["shape"])
    sched = None
    if "schedule" in payload:
        sp = payload["schedule"]
        sched = NoiseSchedule(
            kind=sp["kind"],
            T=sp["T"],
            beta=_decode_array(sp["beta"], (sp["T"] + 1,)),
            alpha_bar=_decode_array(sp["alpha_bar"], (sp["T"] + 1,)),
            sigma=_decode_array(sp["sigma"], (sp["T"] + 1,)),
        )
    bridge = None
    if "bridge_schedule" in payload:
        bp = payload["bridge_schedule"]
        beta = _decode_array(bp["beta"], (bp["T"] + 1,))
        bridge = BridgeSchedule(T=bp["T"], beta=beta, cum=np.cumsum(beta))
    if payload.get("active_indices") is not None:
        g = g.subset(payload["active_indices"])
    return cfg, g, net, sched, bridge


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg, out: str | None) -> int:
    seed = _require_seed(cfg)
    name = cfg["dataset"]["name"]
    n = int(cfg["dataset"]["n"])
    out = out or os.path.join(cfg["run"]["output_dir"], f"{name}.csv")
    spec = data_mod.DatasetSpec(name=name, n=n, seed=seed)
    meta = {"config": cfg, "seed": seed, "dataset": name, "n": n, "params": spec.params}
    if name == "bridge_pair":
        source, target = data_mod.generate_bridge_pair(spec)
        base = out[:-4] if out.endswith(".csv") else out
        _atomic_save_csv(source, base + "_source.csv")
        _atomic_save_csv(target, base + "_target.csv")
        _atomic_write_text(base + ".meta.json", _json_text(meta))
        print(f"wrote {base}_source.csv, {base}_target.csv")
        return 0
    batch = data_mod.generate(spec)
    _atomic_save_csv(batch, out)
    _atomic_write_text(out[:-4] + ".meta.json" if out.endswith(".csv") else out + ".meta.json", _json_text(meta))
    print(f"wrote {out} ({batch.n} samples)")
    return 0


def cmd_train(cfg, out: str | None) -> int:
    seed = _require_seed(cfg)
    g = _group_from_config(cfg)
    sched = _schedule_from_config(cfg)
    dataset = _dataset_from_config(cfg, seed)
    tcfg = _train_config(cfg, seed)
    net = _network_from_config(cfg, g, seed)
    rng = np.random.default_rng(seed)
    if tcfg.loss_kind == "flow_matching":
        report = train_cfm(net, g, sched, dataset, tcfg, rng)
    else:
        report = train_score(net, g, sched, dataset, tcfg, rng)
    out = out or os.path.join(cfg["run"]["output_dir"], "checkpoint.json")
    payload = checkpoint_payload(cfg, g, net, sched, None, tcfg.steps, "diffusion")
    save_checkpoint(payload, out)
    report_path = (out[:-5] if out.endswith(".json") else out) + "_train_report.json"
    _atomic_write_text(
        report_path,
        _json_text(
            {
                "config": cfg,
                "seed": seed,
                "loss_curve": report.loss_curve,
                "final_loss": report.final_loss,
                "wall_time": report.wall_time,
            }
        ),
    )
    print(f"wrote {out} (final loss {report.final_loss:.4f})")
    return 0


def cmd_sample(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    cfg, g, net, sched, bridge = restore_from_checkpoint(payload)
    rng = np.random.default_rng(args.seed)
    want_traj = bool(args.trajectories)
    if payload["kind"] == "bridge":
        raise UsageError("bridge checkpoints are sampled with the bridge command")
    if payload["loss_kind"] == "flow_matching":
        batch = ode_sample(net, g, sched, args.n, rng)
    else:
        batch = sample(
            g, sched, lambda x, t: net.forward(x, float(t)), args.n, rng,
            trajectories=want_traj,
        )
    batch.seed = args.seed
    _atomic_save_csv(batch, args.out)
    meta = {
        "config": cfg,
        "seed": args.seed,
        "n_requested": args.n,
        "n_returned": batch.n,
        "dropped": batch.meta.get("dropped", 0),
    }
    _atomic_write_text(
        (args.out[:-4] if args.out.endswith(".csv") else args.out) + ".meta.json",
        _json_text(meta),
    )
    if want_traj:
        traj = batch.meta.get("trajectories")
        n_chains = traj.shape[1]
        if n_chains > TRAJECTORY_CAP and not args.unsafe_large:
            raise UsageError(
                f"trajectory dump is capped at {TRAJECTORY_CAP} chains; "
                "pass --unsafe-large to override"
            )
        lines = ["chain,t," + ",".join(f"x{i + 1}" for i in range(g.dim_x))]
        for ci in range(min(n_chains, n_chains if args.unsafe_large else TRAJECTORY_CAP)):
            for ti in range(traj.shape[0]):
                vals = ",".join(f"{v:.17g}" for v in traj[ti, ci])
                lines.append(f"{ci},{sched.T - ti},{vals}")
        _atomic_write_text(args.trajectories, "\n".join(lines) + "\n")
    print(f"wrote {args.out} ({batch.n} samples, {batch.meta.get('dropped', 0)} dropped)")
    return 0


def cmd_bridge(cfg, out: str | None) -> int:
    seed = _require_seed(cfg)
    g = _group_from_config(cfg)
    b = cfg["bridge"]
    if b["active"]:
        active = [int(i) for i in b["active"].split(",") if i != ""]
        g_active = g.subset(active)
    else:
        active = None
        g_active = g
    bsched = make_bridge_schedule(int(b["T"]), float(b["total_variance"]))
    if b["source"] and b["target"]:
        source = load_csv(b["source"])
        target = load_csv(b["target"])
    else:
        spec = data_mod.DatasetSpec(
            name="bridge_pair", n=int(cfg["dataset"]["n"]), seed=seed
        )
        source, target = data_mod.generate_bridge_pair(spec)
    tcfg = _train_config(cfg, seed)
    net = _network_from_config(cfg, g_active, seed)
    rng = np.random.default_rng(seed)
    report = train_bridge_score(net, g_active, bsched, target, tcfg, rng)
    transported = bridge_sample(
        g_active, bsched, lambda x, t: net.forward(x, float(t)), source.x, rng
    )
    out = out or os.path.join(cfg["run"]["output_dir"], "bridge_checkpoint.json")
    payload = checkpoint_payload(
        cfg, g_active, net, None, bsched, tcfg.steps, "bridge", active_indices=active
    )
    save_checkpoint(payload, out)
    base = out[:-5] if out.endswith(".json") else out
    _atomic_save_csv(transported, base + "_transported.csv")
    _atomic_write_text(
        base + "_train_report.json",
        _json_text(
            {
                "config": cfg,
                "seed": seed,
                "loss_curve": report.loss_curve,
                "final_loss": report.final_loss,
                "wall_time": report.wall_time,
            }
        ),
    )
    print(f"wrote {out} and {base}_transported.csv")
    return 0


def cmd_eval(args) -> int:
    samples = load_csv(args.samples)
    target = load_csv(args.target)
    prior = load_csv(args.prior)
    rng = np.random.default_rng(args.seed)
    result = normalized_w2(samples, target, prior, rng=rng)
    payload = {
        "raw_w2": result.raw_w2,
        "normalized_w2": result.normalized_w2,
        "n_samples": result.n_samples,
        "method": result.method,
        "samples": args.samples,
        "target": args.target,
        "prior": args.prior,
        "seed": args.seed,
    }
    _atomic_write_text(args.out, _json_text(payload))
    print(
        f"raw W2 = {result.raw_w2:.4f}, normalized W2 = {result.normalized_w2:.4f} "
        f"({result.method})"
    )
    if args.max_normalized is not None and result.normalized_w2 > args.max_normalized:
        return 1
    return 0


def cmd_verify(args) -> int:
    overrides = {}
    for item in args.tolerance or []:
        key, _, val = item.partition("=")
        if key not in DEFAULT_TOLERANCES:
            raise UsageError(f"unknown tolerance {key!r}")
        overrides[key] = float(val)
    report = run_all(tolerances=overrides, seed=args.seed, fast=args.fast)
    _atomic_write_text(args.out, report.to_json())
    for r in report.records:
        tag = " [negative control]" if r.negative_control else ""
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{status}{tag} {r.check_id} {r.group_id}: "
            f"max_error={r.max_error:.3e} tolerance={r.tolerance:.3e}"
        )
    print(f"report written to {args.out}; overall: {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    for section, keys in CONFIG_DEFAULTS.items():
        for key in keys:
            p.add_argument(
                f"--{section}-{key}",
                dest=f"cfg::{section}.{key}",
                metavar="V",
                help=argparse.SUPPRESS,
            )


def _collect_overrides(args) -> dict[str, str]:
    return {
        name.split("::", 1)[1]: val
        for name, val in vars(args).items()
        if name.startswith("cfg::") and val is not None
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liediffuse",
        description="Score-based diffusion in Lie group representation spaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a toy dataset CSV + metadata")
    _add_config_flags(p)
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("train", help="train a score or flow-matching network")
    _add_config_flags(p)
    p.add_argument("--out", help="checkpoint path")

    p = sub.add_parser("sample", help="sample from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", help="per-step trajectory CSV (<= 64 chains)")
    p.add_argument("--unsafe-large", action="store_true")

    p = sub.add_parser("bridge", help="train and run a zero-drift bridge")
    _add_config_flags(p)
    p.add_argument("--out", help="bridge checkpoint path")

    p = sub.add_parser("eval", help="normalized W2 of samples vs target and prior")
    p.add_argument("--samples", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", default="w2.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-normalized", type=float, default=None,
                   help="exit 1 if normalized W2 exceeds this bound")

    p = sub.add_parser("verify", help="run the identity-check suite")
    p.add_argument("--out", default="verify_report.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fast", action="store_true", help="reduced point counts")
    p.add_argument(
        "--tolerance",
        action="append",
        metavar="NAME=VALUE",
        help="override a check tolerance (repeatable)",
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("generate", "train", "bridge"):
            cfg = load_config(args.config, _collect_overrides(args))
            if args.command == "generate":
                return cmd_generate(cfg, args.out)
            if args.command == "train":
                return cmd_train(cfg, args.out)
            return cmd_bridge(cfg, args.out)
        if args.command == "sample":
            return cmd_sample(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "verify":
            return cmd_verify(args)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, InvalidParams, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except LieDiffuseError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
