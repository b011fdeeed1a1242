"""Command-line experiments.

Every subcommand takes ``--config <json>`` and ``--out <dir>``.  The merged
configuration (defaults + file + seed override) is written to
``<out>/resolved_config.json``; rerunning with that file reproduces every CSV
byte for byte.  ``DESKDIFF_SEED`` supplies the seed when the config has none.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 missing or incompatible artifact.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.stats import wasserstein_distance

from . import cold, novelty
from .data import MixtureSpec
from .denoiser import CheckpointError, NetConfig, load_checkpoint, save_checkpoint
from .forward import simulate_trajectory, write_trajectory_csv
from .io import atomic_write, fmt, read_csv, write_csv
from .rng import make_rng
from .sampler import NonFiniteState, SampleRunConfig, generate
from .schedule import ScheduleError, make_linear_schedule
from .trainer import TrainConfig, TrainingDiverged, make_optimizer, train

log = logging.getLogger("deskdiff")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4
SEED_ENV = "DESKDIFF_SEED"


class ConfigError(ValueError):
    pass


class MissingArtifact(RuntimeError):
    pass


SCHEDULE = {"T": 1000, "beta_start": 0.0004, "beta_end": 0.06, "sigma_mode": "posterior_beta"}
DATA = {"kind": "bimodal", "means": [-0.5, 0.5], "stds": [0.1, 0.1], "weights": [0.5, 0.5],
        "dim": 1, "n": 2000}
NET = {"hidden": [64, 64, 64], "time_mode": "sinusoidal", "time_dim": 16, "activation": "silu"}
TRAIN = {"steps": 20000, "batch_size": 128, "learning_rate": 1e-3, "optimizer": "adam",
         "weighting": "unweighted", "eval_every": 1000}

DEFAULTS = {
    "forward-sim": {
        "seed": None, "schedule": SCHEDULE, "data": DATA, "n_trajectories": 2000,
        "hist_steps": None, "bins": 60, "hist_range": [-4.0, 4.0], "trajectory_stride": 50,
    },
    "train": {
        "seed": None, "schedule": SCHEDULE, "data": DATA, "net": NET, "train": TRAIN,
        "held_out_n": 500, "eval_n_mc": 4, "resume": None,
    },
    "sample": {
        "seed": None, "checkpoint": None, "schedule": SCHEDULE, "n_samples": 2000,
        "sigma_mode": None, "record_intermediate": False, "final_decode": "none",
        "bins": 60, "hist_range": [-2.0, 2.0], "reference_data": None,
    },
    "cold": {
        "seed": None,
        "degradation": {"kind": "fixed_noise", "T": 20, "beta_start": 0.01, "beta_end": 0.2,
                        "width_min": 0.5, "width_max": 2.0},
        "data": {**DATA, "n": 1000}, "held_out_n": 200, "net": NET,
        "train": {**TRAIN, "steps": 5000}, "severities": None,
    },
    "metrics": {
        "seed": None,
        "universe": {"kind": "binary", "h": 3, "w": 3, "path": None},
        "observers": {"kind": "synthetic", "n": 8, "memory_size": 40, "path": None},
        "matcher": {"kind": "exact", "radius": 1},
        "outputs": {"kind": "synthetic", "n": 200, "items": None, "samples": None},
        "classes": {"kind": "popcount", "thresholds": [3, 6]},
    },
}

PATH_FIELDS = {
    "train": [("resume",)],
    "sample": [("checkpoint",), ("reference_data",)],
    "metrics": [("universe", "path"), ("observers", "path"), ("outputs", "samples")],
}

SCHEMAS = {
    "forward-sim": "schedule.csv (t,beta,alpha,alpha_bar,sigma_sq); histograms.csv "
                   "(t,bin_left,bin_right,count,density); trajectories.csv "
                   "(traj_id,t,component_index,value); summary.csv (t,mean,var)",
    "train": "ckpt_{step}.bin; train_log.csv (step,loss,grad_norm,eval_metric); dataset.csv "
             "(sample_id,component_index,value); schedule.csv",
    "sample": "samples.csv (sample_id,[t,]component_index,value); histogram.csv "
              "(bin_left,bin_right,count,density); summary.csv (metric,value)",
    "cold": "cold_report.csv (input_id,severity,one_step_l1,iterative_l1); summary.csv "
            "(severity,one_step_mean,iterative_mean); restoration.bin; degradation.json",
    "metrics": "metrics.csv (metric,value,float_value,cross_check); novelty_scores.csv "
               "(item_id,nu,new)",
}


# config handling --------------------------------------------------------------

def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config field {where}{k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(command: str, path) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS[command], raw)
    for keys in PATH_FIELDS.get(command, ()):
        parent = _field(cfg, *keys[:-1])
        if parent[keys[-1]]:
            parent[keys[-1]] = str(Path(parent[keys[-1]]).resolve())
    if cfg.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return cfg


def _field(cfg: dict, *keys):
    cur = cfg
    for k in keys:
        cur = cur[k]
    return cur


def _schedule(c: dict, sigma_mode=None):
    try:
        return make_linear_schedule(int(c["T"]), float(c["beta_start"]), float(c["beta_end"]),
                                    sigma_mode or c.get("sigma_mode", "beta"))
    except (ScheduleError, TypeError) as e:
        raise ConfigError(f"schedule: {e}") from None


def _dataset(c: dict, seed: int, n=None, stream: int = 0):
    if c["kind"] != "bimodal":
        raise ConfigError(f"data.kind: unsupported {c['kind']!r}")
    spec = MixtureSpec(tuple(c["means"]), tuple(c["stds"]), tuple(c["weights"]), int(c["dim"]))
    return spec.sample(int(n if n is not None else c["n"]),
                       make_rng(seed, 100 + stream))


def _net(c: dict, data_dim: int, T: int) -> NetConfig:
    try:
        return NetConfig(data_dim=data_dim, hidden=tuple(c["hidden"]), time_mode=c["time_mode"],
                         time_dim=int(c["time_dim"]), T=T, activation=c["activation"])
    except ValueError as e:
        raise ConfigError(f"net: {e}") from None


def _train_cfg(c: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(steps=int(c["steps"]), batch_size=int(c["batch_size"]),
                           learning_rate=float(c["learning_rate"]), optimizer=c["optimizer"],
                           weighting=c["weighting"], seed=seed, eval_every=int(c["eval_every"]))
    except ValueError as e:
        raise ConfigError(f"train: {e}") from None


def _write_json(path, obj) -> None:
    with atomic_write(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _histogram(x, bins, lo, hi):
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    dens = counts / (max(len(x), 1) * width)
    return counts, edges, dens


# commands ---------------------------------------------------------------------

def cmd_forward_sim(cfg: dict, out: Path) -> None:
    s = _schedule(cfg["schedule"])
    seed = cfg["seed"]
    x0 = _dataset(cfg["data"], seed, cfg["n_trajectories"])
    stride = int(cfg["trajectory_stride"])
    hist_steps = cfg["hist_steps"]
    if hist_steps is None:
        hist_steps = sorted({0, s.T // 4, s.T // 2, s.T})
    traj = simulate_trajectory(x0, s, make_rng(seed, "forward"), stride=1, seed=seed)
    (out / "schedule.csv").parent.mkdir(parents=True, exist_ok=True)
    with atomic_write(out / "schedule.csv") as fh:
        fh.write(s.to_csv())
    lo, hi = cfg["hist_range"]
    rows, summary = [], []
    for t in hist_steps:
        x = traj.at(int(t)).ravel()
        counts, edges, dens = _histogram(x, int(cfg["bins"]), lo, hi)
        rows += [(int(t), fmt(edges[i]), fmt(edges[i + 1]), int(counts[i]), fmt(dens[i]))
                 for i in range(len(counts))]
        summary.append((int(t), fmt(x.mean()), fmt(x.var(ddof=1) if x.size > 1 else 0.0)))
    write_csv(out / "histograms.csv", ["t", "bin_left", "bin_right", "count", "density"], rows)
    write_csv(out / "summary.csv", ["t", "mean", "var"], summary)
    keep = np.array([k for k, t in enumerate(traj.steps) if t % stride == 0 or t == s.T])
    thin = type(traj)(traj.schedule_hash, traj.steps[keep], traj.states[keep], seed)
    write_trajectory_csv(out / "trajectories.csv", thin)


def _save_train_ckpt(out: Path, params, opt, step, s, cfg) -> None:
    save_checkpoint(out / f"ckpt_{step}.bin", params, step, s.hash,
                    extra_arrays=opt.state_arrays(),
                    meta={"optimizer": cfg["train"]["optimizer"], "seed": cfg["seed"]})


def cmd_train(cfg: dict, out: Path) -> None:
    s = _schedule(cfg["schedule"])
    seed = cfg["seed"]
    data = _dataset(cfg["data"], seed)
    held = _dataset(cfg["data"], seed, cfg["held_out_n"], stream=1)
    tcfg = _train_cfg(cfg["train"], seed)
    net = _net(cfg["net"], data.shape[1], s.T)
    params, opt, start = None, None, 0
    if cfg["resume"]:
        path = Path(cfg["resume"])
        if not path.exists():
            raise MissingArtifact(f"checkpoint not found: {path}")
        params, header, extra = load_checkpoint(path)
        if header["schedule_hash"] != s.hash:
            raise MissingArtifact("checkpoint was trained on a different schedule")
        opt = make_optimizer(tcfg)
        opt.load_state(extra)
        start = int(header["step"])
    out.mkdir(parents=True, exist_ok=True)
    with atomic_write(out / "schedule.csv") as fh:
        fh.write(s.to_csv())
    write_csv(out / "dataset.csv", ["sample_id", "component_index", "value"],
              ((i, j, fmt(data[i, j])) for i in range(data.shape[0]) for j in range(data.shape[1])))
    params, tlog = train(data, s, tcfg, net, params=params, optimizer=opt, start_step=start,
                         eval_data=held, eval_n_mc=int(cfg["eval_n_mc"]),
                         on_eval=lambda step, p, o: _save_train_ckpt(out, p, o, step, s, cfg))
    tlog.write_csv(out / "train_log.csv")


def _load_dataset_csv(path) -> np.ndarray:
    rows = read_csv(path)
    n = 1 + max(int(r["sample_id"]) for r in rows)
    d = 1 + max(int(r["component_index"]) for r in rows)
    x = np.zeros((n, d))
    for r in rows:
        x[int(r["sample_id"]), int(r["component_index"])] = float(r["value"])
    return x


def cmd_sample(cfg: dict, out: Path) -> None:
    if not cfg["checkpoint"]:
        raise ConfigError("sample: 'checkpoint' is required")
    path = Path(cfg["checkpoint"])
    if not path.exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    params, header, _ = load_checkpoint(path)
    s = _schedule(cfg["schedule"])
    if header["schedule_hash"] != s.hash:
        raise MissingArtifact("checkpoint schedule hash does not match the configured schedule")
    scfg = SampleRunConfig(n_samples=int(cfg["n_samples"]), seed=cfg["seed"],
                           sigma_mode=cfg["sigma_mode"], record_intermediate=cfg["record_intermediate"],
                           final_decode=cfg["final_decode"])
    res = generate(params, s, scfg)
    res.write_csv(out / "samples.csv")
    lo, hi = cfg["hist_range"]
    counts, edges, dens = _histogram(res.samples[:, 0], int(cfg["bins"]), lo, hi)
    write_csv(out / "histogram.csv", ["bin_left", "bin_right", "count", "density"],
              ((fmt(edges[i]), fmt(edges[i + 1]), int(counts[i]), fmt(dens[i])) for i in range(len(counts))))
    summary = [("n_samples", res.samples.shape[0]), ("mean", fmt(res.samples.mean())),
               ("var", fmt(res.samples.var(ddof=1) if res.samples.size > 1 else 0.0))]
    if cfg["reference_data"]:
        ref_path = Path(cfg["reference_data"])
        if not ref_path.exists():
            raise MissingArtifact(f"reference data not found: {ref_path}")
        ref = _load_dataset_csv(ref_path)
        summary.append(("wasserstein1", fmt(wasserstein_distance(res.samples[:, 0], ref[:, 0]))))
    write_csv(out / "summary.csv", ["metric", "value"], summary)


def cmd_cold(cfg: dict, out: Path) -> None:
    seed = cfg["seed"]
    dc = cfg["degradation"]
    data = _dataset(cfg["data"], seed)
    held = _dataset(cfg["data"], seed, cfg["held_out_n"], stream=1)
    d = data.shape[1]
    if dc["kind"] == "fixed_noise":
        s = _schedule({**dc, "sigma_mode": "beta"})
        op = cold.fixed_noise_op(s, d, make_rng(seed, "cold"))
    elif dc["kind"] == "blur":
        op = cold.blur_op(int(dc["T"]), d, float(dc["width_min"]), float(dc["width_max"]))
    else:
        raise ConfigError(f"degradation.kind: unsupported {dc['kind']!r}")
    tcfg = _train_cfg(cfg["train"], seed)
    net = _net(cfg["net"], d, op.T)
    model = cold.train_restoration(data, op, tcfg, net)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "restoration.bin", model.params, tcfg.steps, "",
                    meta={"degradation": op.params_dict()})
    _write_json(out / "degradation.json", op.params_dict())
    severities = cfg["severities"] if cfg["severities"] is not None else [0, op.T]
    rows, summary = [], []
    for sev in severities:
        sev = int(sev)
        if not 0 <= sev <= op.T:
            raise ConfigError(f"severities: {sev} outside [0, {op.T}]")
        x_s = cold.degrade(op, held, sev)
        one = cold.restore_one_step(model, op, x_s, sev)
        it = cold.restore_iterative(model, op, x_s, sev)
        e1 = np.abs(one - held).sum(axis=1)
        ei = np.abs(it - held).sum(axis=1)
        rows += [(i, sev, fmt(e1[i]), fmt(ei[i])) for i in range(held.shape[0])]
        summary.append((sev, fmt(e1.mean()), fmt(ei.mean())))
    write_csv(out / "cold_report.csv", ["input_id", "severity", "one_step_l1", "iterative_l1"], rows)
    write_csv(out / "summary.csv", ["severity", "one_step_mean", "iterative_mean"], summary)


def _synthetic_observers(universe, n, memory_size, seed, matcher):
    rng = make_rng(seed, 200)
    obs = []
    for k in range(n):
        mem = rng.choice(len(universe.items), size=min(memory_size, len(universe.items)), replace=False)
        obs.append(novelty.Observer(f"o{k}", frozenset(universe.items[i] for i in mem), matcher))
    return obs


def _popcount_classifiers(universe, observers, thresholds, seed):
    rng = make_rng(seed, 201)
    lo, hi = thresholds
    for o in observers:
        th = int(rng.integers(lo, hi + 1))

        def accept(x, th=th):
            bits = universe.bits.get(x)
            return int(bits is not None and sum(bits) >= th)

        o.classifiers["dense"] = accept


def _fraction_cell(v):
    if v is None:
        return "undefined", "undefined"
    return f"{v.numerator}/{v.denominator}", fmt(float(v))


def cmd_metrics(cfg: dict, out: Path) -> None:
    seed = cfg["seed"]
    uc, oc, mc, outc = cfg["universe"], cfg["observers"], cfg["matcher"], cfg["outputs"]
    if uc["path"]:
        if not Path(uc["path"]).exists():
            raise MissingArtifact(f"universe file not found: {uc['path']}")
        universe = novelty.load_universe(uc["path"])
    elif uc["kind"] == "binary":
        universe = novelty.binary_image_universe(int(uc["h"]), int(uc["w"]))
    else:
        raise ConfigError(f"universe.kind: unsupported {uc['kind']!r}")
    if mc["kind"] == "exact":
        matcher = novelty.exact_matcher
    elif mc["kind"] == "hamming":
        matcher = novelty.hamming_matcher(universe, int(mc["radius"]))
    else:
        raise ConfigError(f"matcher.kind: unsupported {mc['kind']!r}")
    if oc["path"]:
        if not Path(oc["path"]).exists():
            raise MissingArtifact(f"observer file not found: {oc['path']}")
        observers = novelty.load_observers(oc["path"], matcher)
    elif oc["kind"] == "synthetic":
        observers = _synthetic_observers(universe, int(oc["n"]), int(oc["memory_size"]), seed, matcher)
    else:
        raise ConfigError(f"observers.kind: unsupported {oc['kind']!r}")
    _popcount_classifiers(universe, observers, cfg["classes"]["thresholds"], seed)

    if outc["kind"] == "items":
        outputs = novelty.ModelOutputSet.from_items(outc["items"] or [], universe)
    elif outc["kind"] == "all":
        outputs = novelty.ModelOutputSet.from_items(universe.items, universe)
    elif outc["kind"] == "samples":
        if not outc["samples"] or not Path(outc["samples"]).exists():
            raise MissingArtifact(f"samples file not found: {outc['samples']}")
        gen = _load_dataset_csv(outc["samples"])
        outputs = novelty.bridge_from_sampler(gen, universe, novelty.binary_quantizer(universe))
    elif outc["kind"] == "synthetic":
        rng = make_rng(seed, 202)
        outputs = novelty.ModelOutputSet.from_items(
            (universe.items[i] for i in rng.integers(0, len(universe), size=int(outc["n"]))), universe)
    else:
        raise ConfigError(f"outputs.kind: unsupported {outc['kind']!r}")

    J = novelty.new_set(universe, observers)
    rates = novelty.novelty_rates(universe, observers, outputs, J)
    try:
        r_m = novelty.model_realism(outputs, observers, "dense")
    except ValueError:
        r_m = None
    rows = []
    for name, v in rates.as_dict().items():
        if name == "N_MO_direct":
            continue
        cross = ""
        if name == "N_MO":
            cross = _fraction_cell(rates.absolute_direct)[0]
        rows.append((name, *_fraction_cell(v), cross))
    rows.append(("R_M", *_fraction_cell(r_m), ""))
    write_csv(out / "metrics.csv", ["metric", "value", "float_value", "cross_check"], rows)
    write_csv(out / "novelty_scores.csv", ["item_id", "nu", "new"],
              ((x, fmt(novelty.novelty_score(x, observers)), int(x in J)) for x in universe.items))


COMMANDS = {
    "forward-sim": cmd_forward_sim,
    "train": cmd_train,
    "sample": cmd_sample,
    "cold": cmd_cold,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deskdiff", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment",
                            epilog=f"outputs: {SCHEMAS[name]}")
        sp.add_argument("--config", type=Path, default=None, help="JSON config (defaults if omitted)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
    return p


def run(command: str, config_path, out: Path) -> int:
    try:
        cfg = resolve_config(command, config_path)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved_config.json", cfg)
        COMMANDS[command](cfg, out)
    except (ConfigError, KeyError, TypeError) as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteState, FloatingPointError) as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC
    except (MissingArtifact, CheckpointError, FileNotFoundError) as e:
        log.error("missing artifact: %s", e)
        return EXIT_MISSING
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return run(args.command, args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
