"""Command-line driver: gen-data | init-net | prune | eval | pipeline.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Every JSON output embeds the resolved config and a version string; CSV
outputs get a sidecar ``.json`` manifest carrying the same.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import data as ds
from .dynamics import LIFConfig
from .evaluate import ForecastTask, activity_simulator, evaluate_network, make_reservoir, rmse_to_csv
from .lyapunov import network_jacobians, network_exponents
from .network import Network, erdos_renyi_match, generate_small_world
from .pruning import (LNPConfig, PruneTrace, activity_prune, lnp_pipeline, lyapunov_neuron_prune,
                      sub_seed)

log = logging.getLogger("lnpsnn")


class UsageError(Exception):
    pass


def _num(minimum=None, integer=False, exclusive=False):
    t = {"type": "integer" if integer else "number"}
    if minimum is not None:
        t["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return t


def _section(props):
    return {"type": "object", "additionalProperties": False, "properties": props}


_LNP_TYPES = {bool: {"type": "boolean"}, int: {"type": "integer"}, float: {"type": "number"},
              str: {"type": "string"}}


def _lnp_schema():
    props = {}
    for f in fields(LNPConfig):
        if f.name == "seed":
            continue
        default = f.default
        if default is None:
            props[f.name] = {"type": ["number", "null"]}
        else:
            props[f.name] = dict(_LNP_TYPES[type(default)])
    props["diagonal_mode"] = {"enum": ["keep", "perturb"]}
    props["phi"] = {"enum": ["tanh", "relu", "identity"]}
    props["lyapunov_top_k"] = _num(1, integer=True)
    return _section(props)


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "network": _section({
            "n": _num(3, integer=True), "k": _num(2, integer=True), "beta": _num(0),
            "excit_frac": _num(0), "weight_scale": _num(0, exclusive=True),
            "tau_shape": _num(0, exclusive=True), "tau_scale": _num(0, exclusive=True),
        }),
        "lnp": _lnp_schema(),
        "ap": _section({"rate": _num(0, exclusive=True), "max_iters": _num(0, integer=True),
                        "sim_steps": _num(1, integer=True)}),
        "data": _section({
            "name": {"enum": ["lorenz63", "rossler", "csv"]}, "path": {"type": "string"},
            "n": _num(1, integer=True), "dt": _num(0, exclusive=True),
            "n_train": _num(0, integer=True), "n_val": _num(0, integer=True),
            "n_test": _num(0, integer=True), "n_discard": _num(0, integer=True),
        }),
        "eval": _section({
            "warmup": _num(1, integer=True), "horizon": _num(0, integer=True),
            "n_windows": _num(1, integer=True), "ridge_lambda": _num(0),
            "readout_fraction": _num(0, exclusive=True), "epsilon": _num(0, exclusive=True),
            "include_input": {"type": "boolean"}, "input_scale": _num(0, exclusive=True),
            "substeps": _num(1, integer=True), "train_len": _num(1, integer=True),
            "snr_db": {"type": "number"}, "seeds": _num(1, integer=True),
        }),
        "tsopt": _section({
            "budget": _num(0, integer=True),
            "shape": {"type": "array", "items": _num(0, exclusive=True), "minItems": 2, "maxItems": 2},
            "scale": {"type": "array", "items": _num(0, exclusive=True), "minItems": 2, "maxItems": 2},
        }),
    },
}

DEFAULTS = {
    "seed": 0,
    "network": {"n": 200, "k": 10, "beta": 0.1, "excit_frac": 0.8, "weight_scale": 0.5,
                "tau_shape": 3.0, "tau_scale": 10.0},
    "lnp": {"iterations": 10, "sim_steps": 5000, "burn_in": 500, "lyap_steps": 100},
    "ap": {"rate": 0.02, "max_iters": 50, "sim_steps": 1000},
    "data": {"name": "lorenz63"},
    "eval": {"warmup": 200, "horizon": 100, "n_windows": 5, "ridge_lambda": 1e-6,
             "readout_fraction": 0.5, "epsilon": 0.1, "include_input": True, "input_scale": 1.0,
             "substeps": 10, "train_len": 3000, "seeds": 1},
    "tsopt": {"budget": 0, "shape": [1.0, 10.0], "scale": [2.0, 30.0]},
}


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def load_config(path=None, seed=None) -> dict:
    cfg = {}
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise UsageError(f"config error at {loc}: {exc.message}") from None
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    for k, v in cfg.items():
        if isinstance(v, dict):
            out[k].update(v)
        else:
            out[k] = v
    if seed is not None:
        out["seed"] = seed
    return out


def _write_json(path: Path, doc: dict, cfg: dict):
    doc = dict(doc)
    doc["config"] = cfg
    doc["version"] = version_string()
    path.write_text(json.dumps(doc, sort_keys=True, indent=1, default=_jsonable), encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _manifest(csv_path: Path, cfg: dict, **extra):
    _write_json(csv_path.with_suffix(".json"), {"file": csv_path.name, **extra}, cfg)


# -- stages ----------------------------------------------------------------------


def _dataset_params(dcfg):
    name = dcfg["name"]
    params = {k: dcfg[k] for k in ("n", "dt") if k in dcfg}
    if name == "csv":
        if "path" not in dcfg:
            raise UsageError("data.path is required for the csv dataset")
        params["path"] = str(Path(dcfg["path"]).resolve())
    return name, params


def build_series(dcfg) -> ds.TimeSeries:
    name, params = _dataset_params(dcfg)
    if name == "csv":
        path = Path(params["path"])
        if not path.exists():
            raise UsageError(f"data file not found: {path}")
        return ds.load_csv(path, dt=params.get("dt", 1.0))
    return ds.generate(name, **params)


def build_split(series, dcfg):
    default = {"lorenz63": ds.LORENZ_SPLIT, "rossler": ds.ROSSLER_SPLIT}.get(dcfg["name"])
    keys = ("n_train", "n_val", "n_test", "n_discard")
    if default is None and not all(k in dcfg for k in keys[:3]):
        raise UsageError("csv data needs data.n_train, data.n_val and data.n_test")
    base = asdict(default) if default else {"n_discard": 0}
    base.update({k: dcfg[k] for k in keys if k in dcfg})
    try:
        return ds.split(series, ds.SplitSpec(**base))
    except ds.SpecOverflow as exc:
        raise UsageError(f"{exc}; set data.n_train/n_val/n_test to fit data.n") from None


def cmd_gen_data(name, out: Path, cfg: dict) -> Path:
    dcfg = dict(cfg["data"], name=name)
    cfg = dict(cfg, data=dcfg)
    series = build_series(dcfg)
    _, params = _dataset_params(dcfg)
    h = ds.params_hash({"name": name, **params})
    path = out / f"{name}_{h}.csv"
    series.to_csv(path, header=[f"x{i}" for i in range(series.channels)])
    _manifest(path, cfg, dataset=name, params=params, rows=len(series), dt=series.dt)
    return path


def init_network(cfg) -> Network:
    n = cfg["network"]
    return generate_small_world(n["n"], n["k"], n["beta"], excit_frac=n["excit_frac"],
                                weight_scale=n["weight_scale"], seed=sub_seed(cfg["seed"], "network"),
                                tau_shape=n["tau_shape"], tau_scale=n["tau_scale"])


def cmd_init_net(out: Path, cfg) -> Path:
    net = init_network(cfg)
    path = out / "network.json"
    _write_json(path, net.to_dict(), cfg)
    return path


def load_network(path) -> Network:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"network file not found: {p}")
    try:
        return Network.from_json(p)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{p}: not a network document: {exc}") from None


def _lnp_config(cfg) -> LNPConfig:
    kw = {k: v for k, v in cfg["lnp"].items() if k != "lyapunov_top_k"}
    kw["seed"] = sub_seed(cfg["seed"], "lnp")
    return LNPConfig(**kw)


def _reservoir(net, cfg, train):
    e = cfg["eval"]
    return make_reservoir(net, train, LIFConfig(), seed=sub_seed(cfg["seed"], "input"),
                          input_scale=e["input_scale"], substeps=e["substeps"])


def _task(cfg, train, test, truth=None) -> ForecastTask:
    e = cfg["eval"]
    return ForecastTask(train=train.slice(0, e["train_len"]), test=test, truth=truth,
                        warmup=e["warmup"], horizon=e["horizon"], n_windows=e["n_windows"],
                        ridge_lambda=e["ridge_lambda"], readout_fraction=e["readout_fraction"],
                        include_input=e["include_input"], epsilon=e["epsilon"])


def prune(net: Network, method: str, cfg: dict, reference: PruneTrace | None = None):
    """Run one pruning method; returns (network, trace, lyapunov report or None)."""
    seed = cfg["seed"]
    if method == "lnp":
        lnp = _lnp_config(cfg)
        t = cfg["tsopt"]
        if t["budget"]:
            lnp = replace(lnp, timescale_budget=t["budget"])
        pruned, trace = lnp_pipeline(net, lnp)
        return pruned, trace, network_exponents(pruned, n_sequences=lnp.lyap_sequences,
                                                seed=sub_seed(seed, "report"), steps=lnp.lyap_steps)
    if method == "lyapunov":
        lnp = _lnp_config(cfg)
        top_k = cfg["lnp"].get("lyapunov_top_k", max(1, net.n_alive // 10))
        jac = network_jacobians(net, steps=lnp.lyap_steps, seed=sub_seed(seed, "lyapunov"))
        pruned = lyapunov_neuron_prune(net, jac, top_k)
        trace = PruneTrace()
        trace.add(0, "initial", net, seed)
        trace.add(1, "lyapunov", pruned, seed)
        return pruned, trace, None
    if method == "ap":
        series = build_series(cfg["data"])
        train, _, val = build_split(series, cfg["data"])
        res = _reservoir(net, cfg, train)
        a = cfg["ap"]
        simulate = activity_simulator(res, train.slice(0, a["sim_steps"]))
        task = _task(cfg, train, val)
        task = replace(task, n_windows=1)

        def score(n):
            return 1.0 / max(evaluate_network(res.with_net(n), task).extra["mean_rmse"], 1e-12)

        pruned, trace = activity_prune(net, simulate, a["rate"], a["max_iters"], score,
                                       seed=sub_seed(seed, "ap"))
        return pruned, trace, None
    if method == "random-match":
        if reference is None:
            raise UsageError("random-match needs --reference-trace")
        trace = PruneTrace()
        last = {}
        for row in reference.rows:
            last[row.iteration] = row
        pruned = net
        for it in sorted(last):
            row = last[it]
            s = sub_seed(seed, "random-match", it)
            pruned = erdos_renyi_match(row.neurons, row.edges, n_total=net.n,
                                       excit_frac=cfg["network"]["excit_frac"],
                                       weight_scale=cfg["network"]["weight_scale"], seed=s,
                                       tau_shape=cfg["network"]["tau_shape"],
                                       tau_scale=cfg["network"]["tau_scale"])
            trace.add(it, "random-match", pruned, s)
        return pruned, trace, None
    raise UsageError(f"unknown method {method!r}")


def cmd_prune(method, out: Path, cfg, network_path=None, reference_path=None):
    net = load_network(network_path) if network_path else init_network(cfg)
    ref = None
    if reference_path is not None:
        if not Path(reference_path).exists():
            raise UsageError(f"reference trace not found: {reference_path}")
        ref = PruneTrace.from_csv(reference_path)
    pruned, trace, rep = prune(net, method, cfg, ref)
    cfg = dict(cfg, method=method)
    _write_json(out / f"pruned_{method}.json", pruned.to_dict(), cfg)
    trace_path = out / f"trace_{method}.csv"
    trace.to_csv(trace_path)
    _manifest(trace_path, cfg)
    if rep is not None:
        _write_json(out / f"lyapunov_{method}.json", rep.to_dict(), cfg)
    return pruned, trace


def _eval_one(args):
    net_doc, dense_doc, cfg, k = args
    net = Network.from_dict(net_doc)
    dense = Network.from_dict(dense_doc) if dense_doc else None
    cfg = dict(cfg, seed=sub_seed(cfg["seed"], "eval", k))
    series = build_series(cfg["data"])
    train, _, test = build_split(series, cfg["data"])
    snr = cfg["eval"].get("snr_db")
    noisy = test if snr is None else ds.add_noise_snr(test, snr, sub_seed(cfg["seed"], "snr"))
    task = _task(cfg, train, noisy, truth=test)
    res = _reservoir(dense or net, cfg, task.train)
    dense_res = res if dense is not None else None
    return evaluate_network(res.with_net(net), task, dense=dense_res)


def run_eval(net: Network, cfg, dense: Network | None = None, jobs: int = 1):
    n_seeds = cfg["eval"]["seeds"]
    args = [(net.to_dict(), dense.to_dict() if dense else None, cfg, k) for k in range(n_seeds)]
    if jobs > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reps = list(pool.map(_eval_one, args))
    else:
        reps = [_eval_one(a) for a in args]
    return reps


def summarize(reps) -> dict:
    doc = reps[0].to_dict() if len(reps) == 1 else {}
    for key in ("vpt", "total_sops", "sop_ratio", "efficiency"):
        vals = np.array([r.to_dict()[key] for r in reps], dtype=float)
        doc[f"{key}_mean"] = float(vals.mean())
        doc[f"{key}_std"] = float(vals.std())
    doc["mean_rmse_mean"] = float(np.mean([r.extra["mean_rmse"] for r in reps]))
    doc["mean_rmse_std"] = float(np.std([r.extra["mean_rmse"] for r in reps]))
    doc["n_seeds"] = len(reps)
    return doc


def cmd_eval(network_path, out: Path, cfg, dense_path=None, jobs=1):
    net = load_network(network_path)
    dense = load_network(dense_path) if dense_path else None
    reps = run_eval(net, cfg, dense, jobs)
    doc = summarize(reps)
    _write_json(out / "report.json", doc, cfg)
    rmse = np.mean([r.rmse_series for r in reps], axis=0)
    path = out / "rmse.csv"
    rmse_to_csv(rmse, path)
    _manifest(path, cfg)
    return doc


def cmd_pipeline(out: Path, cfg, method="lnp", jobs=1):
    cmd_gen_data(cfg["data"]["name"], out, cfg)
    dense_path = cmd_init_net(out, cfg)
    cmd_prune(method, out, cfg, network_path=dense_path)
    return cmd_eval(out / f"pruned_{method}.json", out, cfg, dense_path=dense_path, jobs=jobs)


# -- argparse ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="override the top-level seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for multi-seed eval")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lnpsnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="generate or ingest a dataset")
    g.add_argument("dataset", choices=["lorenz63", "rossler", "csv"])
    g.add_argument("--path", help="input CSV for the csv dataset")
    sub.add_parser("init-net", parents=[common], help="generate the dense network")
    pr = sub.add_parser("prune", parents=[common], help="prune a network")
    pr.add_argument("--method", choices=["lnp", "ap", "lyapunov", "random-match"], default="lnp")
    pr.add_argument("--network", help="network JSON (default: generate from config)")
    pr.add_argument("--reference-trace", help="trace CSV to match (random-match)")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a network on the forecast task")
    ev.add_argument("--network", required=True)
    ev.add_argument("--dense", help="unpruned network for the SOP ratio")
    pl = sub.add_parser("pipeline", parents=[common], help="gen-data, init-net, prune and eval")
    pl.add_argument("--method", choices=["lnp", "ap", "lyapunov"], default="lnp")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            if args.path:
                cfg["data"]["path"] = args.path
            print(cmd_gen_data(args.dataset, out, cfg))
        elif args.command == "init-net":
            print(cmd_init_net(out, cfg))
        elif args.command == "prune":
            net, _ = cmd_prune(args.method, out, cfg, args.network, args.reference_trace)
            print(f"{args.method}: {net.n_alive} neurons, {net.n_edges} synapses")
        elif args.command == "eval":
            doc = cmd_eval(args.network, out, cfg, args.dense, args.jobs)
            print(json.dumps({k: v for k, v in doc.items() if k.endswith(("_mean", "_std"))},
                             sort_keys=True))
        elif args.command == "pipeline":
            doc = cmd_pipeline(out, cfg, args.method, args.jobs)
            print(json.dumps({k: v for k, v in doc.items() if k.endswith(("_mean", "_std"))},
                             sort_keys=True))
    except UsageError as exc:
        print(f"lnpsnn {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lnpsnn {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures carry module context in the message
        print(f"lnpsnn {args.command}: {type(exc).__module__}.{type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
