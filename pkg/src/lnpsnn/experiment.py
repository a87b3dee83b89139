"""Desk-scale comparisons: LNP against activity pruning, and input-noise sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LORENZ_SPLIT, TimeSeries, add_noise_snr, lorenz63, split
from .dynamics import LIFConfig
from .evaluate import ForecastTask, Reservoir, activity_simulator, evaluate_network, make_reservoir
from .network import Network, generate_small_world
from .pruning import LNPConfig, activity_prune, lnp_pipeline, sub_seed

log = logging.getLogger(__name__)


@dataclass
class DeskSetup:
    n: int = 200
    k: int = 10
    beta: float = 0.1
    weight_scale: float = 0.5
    input_scale: float = 1.0
    substeps: int = 10
    readout_fraction: float = 0.5
    train_len: int = 3000
    warmup: int = 200
    horizon: int = 100
    n_windows: int = 5
    ap_rate: float = 0.02
    ap_sim_steps: int = 1000
    lnp: LNPConfig = field(default_factory=lambda: LNPConfig(iterations=10, sim_steps=5000,
                                                               burn_in=500, lyap_steps=100))
    lif: LIFConfig = field(default_factory=LIFConfig)


def lorenz_splits(setup: DeskSetup):
    train, _, test = split(lorenz63(), LORENZ_SPLIT)
    return train.slice(0, setup.train_len), test


def make_task(setup: DeskSetup, train: TimeSeries, test: TimeSeries, truth=None) -> ForecastTask:
    return ForecastTask(train=train, test=test, truth=truth, warmup=setup.warmup,
                        horizon=setup.horizon, n_windows=setup.n_windows,
                        readout_fraction=setup.readout_fraction)


def base_reservoir(setup: DeskSetup, net: Network, train: TimeSeries, seed: int) -> Reservoir:
    return make_reservoir(net, train, setup.lif, seed=sub_seed(seed, "input"),
                          input_scale=setup.input_scale, substeps=setup.substeps)


def base_network(setup: DeskSetup, seed: int) -> Network:
    return generate_small_world(setup.n, setup.k, setup.beta, weight_scale=setup.weight_scale,
                                seed=sub_seed(seed, "network"))


def run_lnp(setup: DeskSetup, seed: int, net: Network | None = None):
    net = base_network(setup, seed) if net is None else net
    return lnp_pipeline(net, replace(setup.lnp, seed=sub_seed(seed, "lnp")))


def activity_path(res: Reservoir, task: ForecastTask, setup: DeskSetup, seed: int, min_edges: int):
    """Activity-prune until at most ``min_edges`` synapses remain; returns all stages."""
    simulate = activity_simulator(res, task.train.slice(0, setup.ap_sim_steps))

    quick = replace(task, n_windows=1)

    def score(net):
        return 1.0 / max(evaluate_network(res.with_net(net), quick).extra["mean_rmse"], 1e-12)

    stages = [res.net]
    _, trace = activity_prune(res.net, simulate, setup.ap_rate, max_iters=10_000, eval_fn=score,
                              seed=seed, stop_fn=lambda n: n.n_edges <= min_edges,
                              on_iteration=lambda t, n: stages.append(n))
    return stages, trace


@dataclass
class ComparisonResult:
    lnp_edges: list
    ap_edges: list
    lnp_efficiency: list
    ap_efficiency: list
    lnp_vpt: list
    ap_vpt: list
    ap_iterations: int

    def summary(self) -> dict:
        f = lambda v: (float(np.mean(v)), float(np.std(v)))
        return {"lnp_edges": f(self.lnp_edges), "ap_edges": f(self.ap_edges),
                "lnp_efficiency": f(self.lnp_efficiency), "ap_efficiency": f(self.ap_efficiency),
                "lnp_vpt": f(self.lnp_vpt), "ap_vpt": f(self.ap_vpt),
                "ap_iterations": self.ap_iterations}


def compare_lnp_ap(seeds, setup: DeskSetup | None = None) -> ComparisonResult:
    """LNP against activity pruning stopped at the same mean final edge count.

    AP runs per seed until it is sparser than half the LNP result; the shared
    iteration count whose across-seed mean edge count is closest to LNP's
    mean is then evaluated for every seed.
    """
    setup = setup or DeskSetup()
    train, test = lorenz_splits(setup)
    task = make_task(setup, train, test)
    lnp_nets, paths, dense_res = [], [], []
    for s in seeds:
        net0 = base_network(setup, s)
        res0 = base_reservoir(setup, net0, train, s)
        net_lnp, _ = run_lnp(setup, s, net0)
        stages, _ = activity_path(res0, task, setup, s, net_lnp.n_edges // 2)
        lnp_nets.append(net_lnp)
        paths.append(stages)
        dense_res.append(res0)
        log.info("seed %s: lnp edges %d, ap stages %d", s, net_lnp.n_edges, len(stages))
    target = np.mean([n.n_edges for n in lnp_nets])
    longest = max(len(p) for p in paths)
    mean_edges = [np.mean([p[min(t, len(p) - 1)].n_edges for p in paths]) for t in range(longest)]
    k = int(np.argmin(np.abs(np.array(mean_edges) - target)))
    ap_nets = [p[min(k, len(p) - 1)] for p in paths]
    out = ComparisonResult([], [], [], [], [], [], k)
    for res0, nl, na in zip(dense_res, lnp_nets, ap_nets):
        dense = evaluate_network(res0, task)
        rl = evaluate_network(res0.with_net(nl), task, dense_sops=dense.total_sops)
        ra = evaluate_network(res0.with_net(na), task, dense_sops=dense.total_sops)
        out.lnp_edges.append(nl.n_edges)
        out.ap_edges.append(na.n_edges)
        out.lnp_efficiency.append(rl.efficiency)
        out.ap_efficiency.append(ra.efficiency)
        out.lnp_vpt.append(rl.vpt)
        out.ap_vpt.append(ra.vpt)
    return out


def snr_sweep(seeds, snr_levels=(10.0, 50.0), setup: DeskSetup | None = None) -> dict:
    """Mean RMSE of the LNP-pruned model fed noisy test inputs.

    The readout is trained on the clean series; noise at each SNR corrupts the
    warm-up frames of every test window and the forecast is scored on the
    clean continuation.
    """
    setup = setup or DeskSetup()
    train, test = lorenz_splits(setup)
    out = {float(s): [] for s in snr_levels}
    for s in seeds:
        net0 = base_network(setup, s)
        res0 = base_reservoir(setup, net0, train, s)
        net, _ = run_lnp(setup, s, net0)
        res = res0.with_net(net)
        for snr in snr_levels:
            ns = sub_seed(s, "noise", snr)
            task = make_task(setup, train, add_noise_snr(test, snr, ns), truth=test)
            out[float(snr)].append(evaluate_network(res, task).extra["mean_rmse"])
    return out
