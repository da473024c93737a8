"""Experiment runner.

    bayesarch toy-size  --config configs/toy_size.toml  --out runs/toy_size
    bayesarch toy-depth --config configs/toy_depth.toml --out runs/toy_depth
    bayesarch uci       --config configs/uci.toml       --out runs/uci
    bayesarch bandit    --config configs/bandit.toml    --out runs/bandit [--full-scale]

Configs are TOML.  Every key is required and unknown keys are rejected, so
priors and temperatures are always spelled out in the file.  Each output file
carries the package version, the seed and a sha256 of the effective config
(seed list excluded), and reruns with the same config and seed write
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .bandit import AGENT_KINDS, AgentConfig, config_dict, run_bandit, warmstart_from
from .data import Dataset, drop_constant_columns, encode_mushroom, load_csv, split, toy_periodic
from .layers import Likelihood, Network, SizePriorSpec, SkipPriorSpec, decode_depth, mlp_spec
from .predictive import predict, rmse, test_loglik
from .training import TrainConfig, TrainingDiverged, fit

EXPERIMENTS = ("toy-size", "toy-depth", "uci", "bandit")


# --------------------------------------------------------------------------
# config schema


class ConfigError(ValueError):
    """All problems found in a config, reported together."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, str, int_list, float_list, str_list
    choices: tuple = ()
    positive: bool = False
    unit: bool = False  # value in [0, 1]


def _check_value(path: str, value, f: Field) -> list[str]:
    def scalar(v, kind):
        if kind == "int":
            return isinstance(v, int) and not isinstance(v, bool)
        if kind == "float":
            return isinstance(v, (int, float)) and not isinstance(v, bool)
        return isinstance(v, str)

    base = f.kind.replace("_list", "")
    if f.kind.endswith("_list"):
        if not isinstance(value, list) or not value or not all(scalar(v, base) for v in value):
            return [f"{path}: expected a non-empty list of {base}"]
        items = value
    else:
        if not scalar(value, base):
            return [f"{path}: expected {base}, got {type(value).__name__}"]
        items = [value]
    errs = []
    for v in items:
        if f.choices and v not in f.choices:
            errs.append(f"{path}: {v!r} not one of {list(f.choices)}")
        if f.positive and not v > 0:
            errs.append(f"{path}: must be positive, got {v!r}")
        if f.unit and not 0 <= v <= 1:
            errs.append(f"{path}: must lie in [0, 1], got {v!r}")
    return errs


def _check_table(path: str, table, schema: dict) -> list[str]:
    if not isinstance(table, dict):
        return [f"{path or 'config'}: expected a table"]
    errs = []
    for key in sorted(set(table) - set(schema)):
        errs.append(f"{path}{key}: unknown key")
    for key, sub in schema.items():
        where = f"{path}{key}"
        if key not in table:
            errs.append(f"{where}: missing")
        elif isinstance(sub, dict):
            errs += _check_table(where + ".", table[key], sub)
        elif isinstance(sub, list):  # array of tables
            items = table[key]
            if not isinstance(items, list) or not items:
                errs.append(f"{where}: expected a non-empty array of tables")
                continue
            for i, item in enumerate(items):
                errs += _check_table(f"{where}[{i}].", item, sub[0])
        else:
            errs += _check_value(where, table[key], sub)
    return errs


POS_INT = Field("int", positive=True)
POS_FLOAT = Field("float", positive=True)
WEIGHT_MODE = Field("str", choices=("point", "gaussian"))
INIT = Field("str", choices=("fan_in", "prior"))

_TOY_DATA = {"n": POS_INT, "noise_sigma": POS_FLOAT, "grid_points": POS_INT}
_TRAIN = {"epochs": Field("int"), "batch_size": POS_INT, "learning_rate": POS_FLOAT,
          "arch_learning_rate": POS_FLOAT, "eval_samples": POS_INT}

SCHEMAS = {
    "toy-size": {
        "data": _TOY_DATA,
        "network": {"hidden_units": POS_INT, "weight_mode": WEIGHT_MODE, "init": INIT,
                    "init_sigma": POS_FLOAT, "weight_prior_sigma": POS_FLOAT,
                    "obs_sigma": POS_FLOAT},
        "priors": {"size_mu": Field("float"), "size_sigma": POS_FLOAT,
                   "size_temperature": POS_FLOAT, "prob_floor": Field("float", unit=True)},
        "train": _TRAIN,
    },
    "toy-depth": {
        "data": _TOY_DATA,
        "network": {"hidden_layers": POS_INT, "hidden_units": POS_INT, "weight_mode": WEIGHT_MODE,
                    "init": INIT, "init_sigma": POS_FLOAT, "weight_prior_sigma": POS_FLOAT,
                    "obs_sigma": POS_FLOAT},
        "priors": {"skip_prob": Field("float", unit=True), "skip_temperature": POS_FLOAT},
        "train": _TRAIN,
        "report": {"bypass_threshold": Field("float", unit=True)},
    },
    "uci": {
        "datasets": [{"name": Field("str"), "path": Field("str"), "target": Field("str")}],
        "split": {"test_fraction": Field("float", unit=True),
                  "validation_fraction": Field("float", unit=True)},
        "network": {"shallow_hidden": Field("int_list", positive=True),
                    "deep_hidden": Field("int_list", positive=True), "init": INIT,
                    "init_sigma": POS_FLOAT, "weight_prior_sigma": POS_FLOAT,
                    "obs_sigma": POS_FLOAT},
        "priors": {"size_mu": Field("float"), "size_sigma": POS_FLOAT,
                   "size_temperature": POS_FLOAT, "prob_floor": Field("float", unit=True),
                   "skip_prob": Field("float", unit=True), "skip_temperature": POS_FLOAT},
        "train": {**_TRAIN, "early_stop_patience": POS_INT},
    },
    "bandit": {
        "data": {"path": Field("str")},
        "run": {"n_interactions": Field("int"), "full_scale_interactions": POS_INT,
                "agents": Field("str_list", choices=AGENT_KINDS)},
        "network": {"hidden": Field("int_list", positive=True), "init_sigma": POS_FLOAT,
                    "weight_prior_sigma": POS_FLOAT, "obs_sigma": POS_FLOAT},
        "priors": {"size_mu": Field("float"), "size_sigma": POS_FLOAT,
                   "size_temperature": POS_FLOAT, "prob_floor": Field("float", unit=True)},
        "agent": {"epsilon": Field("float", unit=True), "learning_rate": POS_FLOAT,
                  "batch_size": POS_INT, "buffer_capacity": POS_INT},
    },
}


def validate_config(cfg: dict, experiment: str) -> dict:
    """Raise ConfigError listing every problem; return ``cfg`` unchanged otherwise."""
    if experiment not in SCHEMAS:
        raise ConfigError([f"unknown experiment {experiment!r}"])
    schema = {"experiment": Field("str", choices=EXPERIMENTS), "seeds": Field("int_list"),
              **SCHEMAS[experiment]}
    errs = _check_table("", cfg, schema)
    if isinstance(cfg, dict) and cfg.get("experiment") not in (None, experiment):
        errs.append(f"experiment: file is for {cfg['experiment']!r}, command is {experiment!r}")
    if experiment == "bandit" and not errs:
        agents = cfg["run"]["agents"]
        if "thompson_warmstart" in agents and "thompson_adaptive" not in agents:
            errs.append("run.agents: thompson_warmstart needs thompson_adaptive in the same suite")
        if len(set(agents)) != len(agents):
            errs.append("run.agents: duplicate agent kinds")
    if errs:
        raise ConfigError(errs)
    return cfg


def load_config(path, experiment: str) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as err:
        raise ConfigError([f"{path}: {err.strerror}"]) from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"{path}: {err}"]) from None
    validate_config(cfg, experiment)
    cfg["_base_dir"] = str(path.resolve().parent)
    return cfg


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "seeds" and not k.startswith("_")}
    if cfg.get("_full_scale"):
        body["full_scale"] = True
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def provenance(cfg: dict, seed: int | None) -> dict:
    return {"version": __version__, "experiment": cfg["experiment"],
            "config_sha256": config_hash(cfg), "seed": seed}


def _header(cfg: dict, seed: int | None) -> str:
    p = provenance(cfg, seed)
    return (f"# bayesarch {p['version']} experiment={p['experiment']} "
            f"config_sha256={p['config_sha256']} seed={seed}\n")


def _csv(cfg: dict, seed: int | None, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(_header(cfg, seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _resolve(cfg: dict, p: str) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg["_base_dir"]) / p


def _train_config(t: dict, seed: int, **extra) -> TrainConfig:
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                       learning_rate=t["learning_rate"],
                       arch_learning_rate=t["arch_learning_rate"], seed=seed, **extra)


def _snapshot_epochs(epochs: int) -> list[int]:
    return sorted({1, max(1, math.ceil(epochs / 2)), epochs}) if epochs > 0 else []


# --------------------------------------------------------------------------
# toy size


def toy_size_network(cfg: dict, seed: int) -> Network:
    n, p = cfg["network"], cfg["priors"]
    size = SizePriorSpec(p["size_mu"], p["size_sigma"], p["size_temperature"],
                         prob_floor=p["prob_floor"])
    spec = mlp_spec(1, [n["hidden_units"]], 1, weight_mode=n["weight_mode"], size=size,
                    likelihood=Likelihood("gaussian", n["obs_sigma"]),
                    weight_prior_sigma=n["weight_prior_sigma"], init_sigma=n["init_sigma"],
                    init=n["init"])
    return Network.from_spec(spec, np.random.default_rng([seed, 0]))


def _toy_grid(cfg: dict) -> np.ndarray:
    return np.linspace(-2.0, 2.0, cfg["data"]["grid_points"])[:, None]


def run_toy_size(cfg: dict, seed: int) -> dict:
    """Train one seed; returns the files to write (relative path -> text) and a summary."""
    d, t = cfg["data"], cfg["train"]
    ds = toy_periodic(d["n"], d["noise_sigma"], seed)
    net = toy_size_network(cfg, seed)
    adapter = net.size_adapters[0]
    grid = _toy_grid(cfg)
    snap_at = _snapshot_epochs(t["epochs"])
    traj = [[0, adapter.mu, adapter.sigma, adapter.decode(), *adapter.probs()]]
    snaps = {}

    def record(epoch, network, row):
        traj.append([epoch, adapter.mu, adapter.sigma, adapter.decode(), *adapter.probs()])
        if epoch in snap_at:
            pr = predict(network, grid, t["eval_samples"], np.random.default_rng([seed, 2, epoch]))
            snaps[epoch] = pr.mean[:, 0]

    log = fit(net, ds, _train_config(t, seed), run_id=f"toy-size-{seed}", callback=record)
    log.meta["provenance"] = provenance(cfg, seed)
    K = adapter.K
    summary = {
        "provenance": provenance(cfg, seed),
        "decoded_size": adapter.decode(), "mu": adapter.mu, "sigma": adapter.sigma,
        "train_rmse_hard": rmse(net.forward_hard(ds.x)[:, 0], ds.y),
        "snapshot_epochs": snap_at,
    }
    truth = np.sin(2 * math.pi * 0.75 * grid[:, 0])
    snap_rows = [[grid[i, 0], truth[i], *(snaps[e][i] for e in snap_at)] for i in range(len(grid))]
    files = {
        "pi_trajectory.csv": _csv(cfg, seed, ["epoch", "mu", "sigma", "k"]
                                  + [f"pi_{i}" for i in range(1, K + 1)], traj),
        "snapshots.csv": _csv(cfg, seed, ["x", "target"] + [f"epoch_{e}" for e in snap_at],
                              snap_rows),
        "runlog.jsonl": log.to_jsonl(),
        "summary.json": _json(summary),
    }
    return {"files": files, "summary": summary}


def _toy_size_table(cfg, results) -> str:
    rows = [[seed, r["summary"]["decoded_size"], r["summary"]["mu"], r["summary"]["sigma"],
             r["summary"]["train_rmse_hard"]] for seed, r in results]
    return _csv(cfg, None, ["seed", "decoded_size", "mu", "sigma", "train_rmse_hard"], rows)


# --------------------------------------------------------------------------
# toy depth


def toy_depth_network(cfg: dict, seed: int) -> Network:
    n, p = cfg["network"], cfg["priors"]
    skip = SkipPriorSpec(p["skip_prob"], p["skip_temperature"])
    spec = mlp_spec(1, [n["hidden_units"]] * n["hidden_layers"], 1, weight_mode=n["weight_mode"],
                    skip=skip, likelihood=Likelihood("gaussian", n["obs_sigma"]),
                    weight_prior_sigma=n["weight_prior_sigma"], init_sigma=n["init_sigma"],
                    init=n["init"])
    return Network.from_spec(spec, np.random.default_rng([seed, 0]))


def run_toy_depth(cfg: dict, seed: int) -> dict:
    d, t = cfg["data"], cfg["train"]
    ds = toy_periodic(d["n"], d["noise_sigma"], seed)
    net = toy_depth_network(cfg, seed)
    adapters = net.skip_adapters
    traj = [[0, *(a.prob for a in adapters)]]

    def record(epoch, network, row):
        traj.append([epoch, *(a.prob for a in adapters)])

    log = fit(net, ds, _train_config(t, seed), run_id=f"toy-depth-{seed}", callback=record)
    log.meta["provenance"] = provenance(cfg, seed)
    pis = [a.prob for a in adapters]
    thr = cfg["report"]["bypass_threshold"]
    kept = decode_depth(net)
    summary = {
        "provenance": provenance(cfg, seed),
        "skip_pi": pis,
        "n_bypassed": sum(p > thr for p in pis),
        "bypass_threshold": thr,
        "kept_hidden_layers": len(kept) - 1,
        "train_rmse_hard": rmse(net.forward_hard(ds.x)[:, 0], ds.y),
    }
    files = {
        "skip_trajectory.csv": _csv(cfg, seed, ["epoch"] + [f"pi_{i}" for i in range(1, len(pis) + 1)],
                                    traj),
        "runlog.jsonl": log.to_jsonl(),
        "summary.json": _json(summary),
    }
    return {"files": files, "summary": summary}


def _toy_depth_table(cfg, results) -> str:
    rows = [[seed, r["summary"]["n_bypassed"], r["summary"]["kept_hidden_layers"],
             r["summary"]["train_rmse_hard"]] for seed, r in results]
    return _csv(cfg, None, ["seed", "n_bypassed", "kept_hidden_layers", "train_rmse_hard"], rows)


# --------------------------------------------------------------------------
# UCI regression

UCI_VARIANTS = ("shallow_rigid", "shallow_adaptive", "deep_rigid", "deep_adaptive")


def uci_network(cfg: dict, variant: str, in_dim: int, seed: int) -> Network:
    n, p = cfg["network"], cfg["priors"]
    depth, kind = variant.split("_")
    hidden = n["shallow_hidden"] if depth == "shallow" else n["deep_hidden"]
    size = skip = None
    if kind == "adaptive":
        size = SizePriorSpec(p["size_mu"], p["size_sigma"], p["size_temperature"],
                             prob_floor=p["prob_floor"])
        if depth == "deep":
            skip = SkipPriorSpec(p["skip_prob"], p["skip_temperature"])
    spec = mlp_spec(in_dim, list(hidden), 1, weight_mode="gaussian", size=size, skip=skip,
                    likelihood=Likelihood("gaussian", n["obs_sigma"]),
                    weight_prior_sigma=n["weight_prior_sigma"], init_sigma=n["init_sigma"],
                    init=n["init"])
    return Network.from_spec(spec, np.random.default_rng([seed, 0]))


def load_uci(cfg: dict, entry: dict) -> Dataset:
    ds = load_csv(_resolve(cfg, entry["path"]), entry["target"], standardize=False)
    ds.name = entry["name"]
    return drop_constant_columns(ds)


def run_uci_one(cfg: dict, ds: Dataset, variant: str, seed: int) -> dict:
    """Fit one variant on one split; metrics are reported in original target units."""
    s, t = cfg["split"], cfg["train"]
    train, test = split(ds, s["test_fraction"], seed)
    n_val = max(1, int(round(len(train) * s["validation_fraction"])))
    perm = np.random.default_rng([seed, 3]).permutation(len(train))
    val, fit_set = train.subset(np.sort(perm[:n_val])), train.subset(np.sort(perm[n_val:]))
    net = uci_network(cfg, variant, ds.n_features, seed)
    status = "ok"
    try:
        log = fit(net, fit_set, _train_config(t, seed, early_stop_patience=t["early_stop_patience"]),
                  validation=val, run_id=f"{ds.name}-{variant}-{seed}",
                  eval_samples=t["eval_samples"])
    except TrainingDiverged as err:
        status = f"diverged: {err}"
        log = None
    pr = predict(net, test.x, t["eval_samples"], np.random.default_rng([seed, 4]))
    std = test.target_std
    row = {
        "dataset": ds.name, "variant": variant, "seed": seed, "status": status,
        "rmse": rmse(pr.mean[:, 0], test.y) * std,
        "loglik": test_loglik(pr, test.y, net.likelihood) - math.log(std),
        "epochs": len(log) if log is not None else 0,
        "best_epoch": log.meta.get("best_epoch") if log is not None else None,
        "sizes": [a.decode() for a in net.size_adapters],
        "skip_pi": [a.prob for a in net.skip_adapters],
    }
    if log is not None:
        log.meta["provenance"] = provenance(cfg, seed)
    return {"row": row, "runlog": log.to_jsonl() if log is not None else ""}


def run_uci_seed(cfg: dict, seed: int) -> dict:
    files, rows = {}, []
    for entry in cfg["datasets"]:
        ds = load_uci(cfg, entry)
        for variant in UCI_VARIANTS:
            res = run_uci_one(cfg, ds, variant, seed)
            rows.append(res["row"])
            files[f"{ds.name}/{variant}.jsonl"] = res["runlog"]
    return {"files": files, "summary": {"rows": rows}}


def uci_table(rows: list[dict]) -> list[dict]:
    out = []
    for name in dict.fromkeys(r["dataset"] for r in rows):
        for variant in UCI_VARIANTS:
            sel = [r for r in rows if r["dataset"] == name and r["variant"] == variant]
            if not sel:
                continue
            e = np.array([r["rmse"] for r in sel])
            ll = np.array([r["loglik"] for r in sel])
            out.append({"dataset": name, "variant": variant, "n_seeds": len(sel),
                        "rmse_mean": float(e.mean()), "rmse_std": float(e.std()),
                        "loglik_mean": float(ll.mean()), "loglik_std": float(ll.std())})
    return out


def _uci_tables(cfg, results) -> dict:
    rows = [r for _, res in results for r in res["summary"]["rows"]]
    cols = ["dataset", "variant", "seed", "status", "rmse", "loglik", "epochs", "best_epoch"]
    runs = _csv(cfg, None, cols + ["sizes", "skip_pi"],
                [[r[c] for c in cols] + [json.dumps(r["sizes"]), json.dumps(r["skip_pi"])]
                 for r in rows])
    table = uci_table(rows)
    tcols = ["dataset", "variant", "n_seeds", "rmse_mean", "rmse_std", "loglik_mean", "loglik_std"]
    return {"runs.csv": runs, "results.csv": _csv(cfg, None, tcols, [[r[c] for c in tcols] for r in table])}


# --------------------------------------------------------------------------
# bandit


def bandit_agent_config(cfg: dict, kind: str) -> AgentConfig:
    n, p, a = cfg["network"], cfg["priors"], cfg["agent"]
    return AgentConfig(kind, hidden=tuple(n["hidden"]), epsilon=a["epsilon"],
                       size_prior=(p["size_mu"], p["size_sigma"]),
                       size_temperature=p["size_temperature"], prob_floor=p["prob_floor"],
                       weight_prior_sigma=n["weight_prior_sigma"], init_sigma=n["init_sigma"],
                       obs_sigma=n["obs_sigma"], learning_rate=a["learning_rate"],
                       batch_size=a["batch_size"], buffer_capacity=a["buffer_capacity"])


def regret_slope(cum_regret, fraction: float = 0.2) -> float:
    """Least-squares slope of cumulative regret over the final ``fraction`` of steps."""
    c = np.asarray(cum_regret, dtype=np.float64)
    m = max(2, int(math.ceil(len(c) * fraction)))
    if len(c) < 2:
        return 0.0
    tail = c[-m:]
    return float(np.polyfit(np.arange(len(tail), dtype=np.float64), tail, 1)[0])


def run_bandit_seed(cfg: dict, seed: int) -> dict:
    contexts, labels = encode_mushroom(_resolve(cfg, cfg["data"]["path"]))
    n = cfg["run"]["full_scale_interactions"] if cfg.get("_full_scale") else cfg["run"]["n_interactions"]
    agents = list(cfg["run"]["agents"])
    # the warm-started agent is built from the adaptive run of the same seed
    order = sorted(agents, key=lambda k: k == "thompson_warmstart")
    files, rows, adaptive = {}, [], None
    for kind in order:
        if kind == "thompson_warmstart":
            ac = warmstart_from(adaptive, bandit_agent_config(cfg, "thompson_adaptive"))
        else:
            ac = bandit_agent_config(cfg, kind)
        run = run_bandit(ac, contexts, labels, n, seed)
        if kind == "thompson_adaptive":
            adaptive = run
        cum = run.cumulative_regret
        header = _header(cfg, seed).lstrip("# ").rstrip("\n") + "\nagent " + json.dumps(config_dict(ac), sort_keys=True)
        files[f"{kind}.csv"] = run.to_csv(header)
        rows.append({
            "agent": kind, "seed": seed, "n_interactions": n,
            "final_cumulative_regret": float(cum[-1]) if len(cum) else 0.0,
            "final_reward_rmse": run.rows[-1]["reward_rmse"] if run.rows else 0.0,
            "regret_slope_last20": regret_slope(cum),
            "divergences": len(run.divergences),
            "hidden": list(ac.hidden),
            "decoded_sizes": run.final_sizes,
        })
    return {"files": files, "summary": {"rows": rows}}


def _bandit_tables(cfg, results) -> dict:
    rows = [r for _, res in results for r in res["summary"]["rows"]]
    cols = ["agent", "seed", "n_interactions", "final_cumulative_regret", "final_reward_rmse",
            "regret_slope_last20", "divergences"]
    body = [[r[c] for c in cols] + [json.dumps(r["hidden"]), json.dumps(r["decoded_sizes"])]
            for r in rows]
    return {"summary.csv": _csv(cfg, None, cols + ["hidden", "decoded_sizes"], body)}


# --------------------------------------------------------------------------
# driver

RUNNERS = {
    "toy-size": (run_toy_size, lambda cfg, res: {"summary.csv": _toy_size_table(cfg, res)}),
    "toy-depth": (run_toy_depth, lambda cfg, res: {"summary.csv": _toy_depth_table(cfg, res)}),
    "uci": (run_uci_seed, _uci_tables),
    "bandit": (run_bandit_seed, _bandit_tables),
}


def _run_seed(args):
    experiment, cfg, seed = args
    return seed, RUNNERS[experiment][0](cfg, seed)


def run_experiment(experiment: str, cfg: dict, out: Path, jobs: int = 1) -> list:
    """Run all seeds, write per-seed directories and the aggregate tables."""
    out = Path(out)
    tasks = [(experiment, cfg, s) for s in cfg["seeds"]]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, tasks))
    else:
        results = [_run_seed(t) for t in tasks]
    for seed, res in results:
        for rel, text in res["files"].items():
            _write(out / f"seed_{seed}" / rel, text)
    for rel, text in RUNNERS[experiment][1](cfg, results).items():
        _write(out / rel, text)
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    _write(out / "config.json", _json({"config": public, "provenance": provenance(cfg, None)}))
    return results


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayesarch", description="Adaptive-architecture Bayesian network experiments")
    ap.add_argument("--version", action="version", version=f"bayesarch {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", help="comma-separated seed list overriding the config")
        p.add_argument("--jobs", type=int, default=1, help="parallel seed processes")
        if name == "bandit":
            p.add_argument("--full-scale", action="store_true",
                           help="use run.full_scale_interactions instead of run.n_interactions")
    return ap


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError([f"--seeds: not a comma-separated integer list: {text!r}"]) from None
    if not seeds:
        raise ConfigError(["--seeds: empty"])
    return seeds


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        if args.seeds is not None:
            cfg["seeds"] = parse_seeds(args.seeds)
        if getattr(args, "full_scale", False):
            cfg["_full_scale"] = True
        results = run_experiment(args.command, cfg, Path(args.out), args.jobs)
    except ConfigError as err:
        print(f"bayesarch: {err}", file=sys.stderr)
        return 2
    except TrainingDiverged as err:
        print(f"bayesarch: training diverged: {err}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as err:
        print(f"bayesarch: {err}", file=sys.stderr)
        return 1
    print(f"wrote {len(results)} seed run(s) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
