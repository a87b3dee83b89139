"""Task-agnostic pruning of the recurrent layer.

``lnp_pipeline`` runs noise-driven synapse sparsification, betweenness
node pruning and delocalizing edge addition each iteration, then tunes the
timescale distribution once at the end. ``lyapunov_neuron_prune`` and
``activity_prune`` are the two baselines.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import lyapunov as ly
from .dynamics import estimate_covariance, simulate_linear_noise, SpikeRecord
from .network import (Network, add_delocalizing_edges, betweenness_centrality,
                      prune_nodes, InsufficientCandidates)

log = logging.getLogger(__name__)


class PruningError(RuntimeError):
    pass


class WouldEmptyNetwork(PruningError):
    pass


class ObjectiveEvaluationFailure(PruningError):
    pass


def sub_seed(seed: int, *names) -> int:
    """Derive an independent 32-bit seed from ``seed`` and a label path."""
    h = hashlib.sha256(repr((int(seed),) + tuple(str(n) for n in names)).encode()).digest()
    return int.from_bytes(h[:4], "little")


# -- records ------------------------------------------------------------------


@dataclass
class TraceRow:
    iteration: int
    step: str
    neurons: int
    edges: int
    seed: int
    eval: float | None = None


@dataclass
class PruneTrace:
    rows: list = field(default_factory=list)

    def add(self, iteration, step, net: Network, seed, eval=None):
        self.rows.append(TraceRow(iteration, step, net.n_alive, net.n_edges, int(seed), eval))

    def __len__(self):
        return len(self.rows)

    def by_step(self, step):
        return [r for r in self.rows if r.step == step]

    @classmethod
    def from_csv(cls, src) -> "PruneTrace":
        """Read a trace written by :meth:`to_csv` (path or CSV text)."""
        text = src if "\n" in str(src) else open(src, newline="", encoding="utf-8").read()
        out = cls()
        for row in csv.DictReader(io.StringIO(text)):
            ev = row.get("eval")
            out.rows.append(TraceRow(int(row["iteration"]), row["step"], int(row["neurons"]),
                                     int(row["edges"]), int(row["seed"]),
                                     float(ev) if ev not in (None, "") else None))
        return out

    def to_csv(self, path=None) -> str:
        with_eval = any(r.eval is not None for r in self.rows)
        header = ["iteration", "step", "neurons", "edges", "seed"] + (["eval"] if with_eval else [])
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\r\n")
        wr.writerow(header)
        for r in self.rows:
            row = [r.iteration, r.step, r.neurons, r.edges, r.seed]
            if with_eval:
                row.append("" if r.eval is None else repr(float(r.eval)))
            wr.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text


# -- Step I -------------------------------------------------------------------


def retention_probabilities(A, L, Sigma, rho: float) -> np.ndarray:
    """Per-synapse keep probabilities, clipped to [0, 1].

    Excitatory (``A_ij > 0``): ``rho * l_ij * (S_ii + S_jj - 2 S_ij)``;
    inhibitory (``A_ij < 0``): ``rho * |l_ij| * (S_ii + S_jj + 2 S_ij)``.
    Diagonal and absent edges get 0.
    """
    A = np.asarray(A, dtype=float)
    L = np.asarray(L, dtype=float)
    S = np.asarray(Sigma, dtype=float)
    if not (A.shape == L.shape == S.shape) or A.shape[0] != A.shape[1]:
        raise ValueError(f"shape mismatch: A{A.shape} L{L.shape} Sigma{S.shape}")
    d = np.diag(S)
    base = d[:, None] + d[None, :]
    exc = A > 0
    inh = A < 0
    P = np.zeros_like(A)
    P[exc] = rho * L[exc] * (base - 2 * S)[exc]
    P[inh] = rho * np.abs(L[inh]) * (base + 2 * S)[inh]
    np.fill_diagonal(P, 0.0)
    return np.clip(P, 0.0, 1.0)


def sample_sparse(A, P, seed: int = 0) -> np.ndarray:
    """Keep each off-diagonal entry with prob ``P_ij`` and rescale by ``1/P_ij``."""
    A = np.asarray(A, dtype=float)
    P = np.asarray(P, dtype=float)
    rng = np.random.default_rng(seed)
    keep = rng.random(A.shape) < P
    np.fill_diagonal(keep, False)
    out = np.zeros_like(A)
    out[keep] = A[keep] / P[keep]
    np.fill_diagonal(out, np.diag(A))
    return out


def adjust_diagonal(A_sparse, A, mode: str = "perturb") -> np.ndarray:
    """Set the diagonal: ``keep`` copies ``A_ii``; ``perturb`` uses ``A_ii - Delta_i``.

    ``Delta_i`` is the change in total absolute off-diagonal input to row ``i``.
    """
    A_sparse = np.array(A_sparse, dtype=float, copy=True)
    A = np.asarray(A, dtype=float)
    diag = np.diag(A)
    if mode == "keep":
        np.fill_diagonal(A_sparse, diag)
        return A_sparse
    if mode != "perturb":
        raise ValueError(f"unknown diagonal mode {mode!r}")
    off = ~np.eye(A.shape[0], dtype=bool)
    delta = (np.abs(A_sparse) * off).sum(axis=1) - (np.abs(A) * off).sum(axis=1)
    np.fill_diagonal(A_sparse, diag - delta)
    return A_sparse


# -- Step II ------------------------------------------------------------------


def node_prune_by_centrality(net: Network, quantile: float, symmetrize: bool = False) -> Network:
    """Remove alive nodes whose betweenness is strictly below the ``quantile``-th quantile."""
    if not 0.0 <= quantile < 1.0:
        raise ValueError("quantile must lie in [0, 1)")
    if quantile == 0.0:
        return net
    idx = net.alive_idx
    bc = betweenness_centrality(net, symmetrize=symmetrize)[idx]
    thresh = np.quantile(bc, quantile)
    drop = idx[bc < thresh]
    if drop.size == idx.size:
        raise WouldEmptyNetwork("centrality pruning would remove every neuron")
    return prune_nodes(net, drop)


# -- LNP ----------------------------------------------------------------------


@dataclass
class LNPConfig:
    rho: float | None = None
    target_retention: float | None = 0.9
    centrality_quantile: float = 0.1
    m_delocalize: int = 10
    diagonal_mode: str = "perturb"
    sim_steps: int = 20000
    burn_in: int = 2000
    sigma: float = 1.0
    dt: float = 0.005
    iterations: int = 10
    seed: int = 0
    # Lyapunov probe of the rate map
    map_dt_ms: float = 5.0
    lyap_steps: int = 100
    lyap_sequences: int = 4
    lyap_input_std: float = 0.5
    phi: str = "tanh"
    # stability of the surrogate and ablation switches
    stability_margin: float = 1.0
    skip_step2: bool = False
    skip_step3: bool = False
    timescale_each_iteration: bool = False
    timescale_budget: int = 0
    excit_frac: float = 0.8

    def __post_init__(self):
        if self.rho is None and self.target_retention is None:
            raise ValueError("set either rho or target_retention")
        if self.rho is not None and self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.target_retention is not None and not 0 < self.target_retention <= 1:
            raise ValueError("target_retention must lie in (0, 1]")
        if self.diagonal_mode not in ("keep", "perturb"):
            raise ValueError("diagonal_mode must be 'keep' or 'perturb'")
        if not 0 <= self.centrality_quantile < 1:
            raise ValueError("centrality_quantile must lie in [0, 1)")
        for name in ("sim_steps", "sigma", "dt", "lyap_steps", "lyap_sequences"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.m_delocalize < 0 or self.burn_in < 0:
            raise ValueError("counts must be non-negative")
        if self.sim_steps - self.burn_in < 2:
            raise ValueError("sim_steps - burn_in must be >= 2")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynapseStep:
    """Intermediates of one Step I pass, kept for inspection and reports."""

    A: np.ndarray
    A_sparse: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray
    L: ly.LyapunovMatrix
    report: ly.LyapunovReport
    rho: float
    idx: np.ndarray


def surrogate_matrix(net: Network, L_values, margin: float = 1.0):
    """Signed linear surrogate ``A = -D + sign(W) |L|`` over alive neurons.

    The leak is raised to at least the absolute row sum of the coupling plus
    ``margin`` so the surrogate is stable (Gershgorin).
    """
    idx = net.alive_idx
    sign = np.sign(net.coupling()[np.ix_(idx, idx)])
    Ls = sign * np.abs(np.asarray(L_values)[np.ix_(idx, idx)])
    leak = np.maximum(net.leak[idx], np.abs(Ls).sum(axis=1) + margin)
    A = Ls - np.diag(leak)
    return A, Ls


def synapse_step(net: Network, cfg: LNPConfig, seed: int) -> SynapseStep:
    """Step I: Lyapunov matrix, noise covariance, retention and sparse sampling."""
    idx = net.alive_idx
    rep = ly.network_exponents(net, n_sequences=cfg.lyap_sequences, seed=sub_seed(seed, "lyap"),
                               steps=cfg.lyap_steps, dt_ms=cfg.map_dt_ms, phi=cfg.phi,
                               input_std=cfg.lyap_input_std)
    per_neuron = np.zeros(net.n)
    per_neuron[idx] = rep.per_neuron
    L = ly.lyapunov_matrix(net, per_neuron)
    if L.undefined:
        log.info("harmonic mean undefined on %d edge(s)", L.undefined)
    A, Ls = surrogate_matrix(net, L.values, cfg.stability_margin)
    traj = simulate_linear_noise(A, None, cfg.sigma, cfg.sim_steps, cfg.dt, seed=sub_seed(seed, "noise"))
    Sigma = estimate_covariance(traj, cfg.burn_in)
    rho = cfg.rho
    if rho is None:
        edges = A != 0
        np.fill_diagonal(edges, False)
        rho = _calibrate_rho(A, Ls, Sigma, edges, cfg.target_retention)
    P = retention_probabilities(A, Ls, Sigma, rho)
    A_sparse = adjust_diagonal(sample_sparse(A, P, seed=sub_seed(seed, "sample")), A, cfg.diagonal_mode)
    return SynapseStep(A=A, A_sparse=A_sparse, P=P, Sigma=Sigma, L=L, report=rep, rho=rho, idx=idx)


def _calibrate_rho(A, Ls, Sigma, edges, target):
    """Smallest rho whose clipped mean keep probability reaches ``target``."""
    d = np.diag(Sigma)
    base = d[:, None] + d[None, :]
    raw = np.where(A > 0, Ls * (base - 2 * Sigma), np.abs(Ls) * (base + 2 * Sigma))[edges]
    raw = np.maximum(raw, 0.0)
    if raw.size == 0 or not np.any(raw > 0):
        return 0.0
    lo, hi = 0.0, 1.0
    while np.mean(np.minimum(hi * raw, 1.0)) < target and hi < 1e12:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.mean(np.minimum(mid * raw, 1.0)) < target:
            lo = mid
        else:
            hi = mid
    return hi


def apply_sparse(net: Network, A_sparse, idx, A=None) -> Network:
    """Write a sparse surrogate back to the network; ``-A_ii`` becomes the leak.

    With ``A`` given, each kept synapse keeps its own weight scaled by
    ``A_sparse / A`` (the ``1/p`` factor), so the spiking weights stay in
    their original units. Without it the surrogate entries are copied as is.
    """
    sub = np.array(A_sparse, dtype=float, copy=True)
    leak = net.leak.copy()
    leak[idx] = -np.diag(sub)
    np.fill_diagonal(sub, 0.0)
    if A is not None:
        A = np.asarray(A, dtype=float)
        ratio = np.divide(sub, A, out=np.zeros_like(sub), where=A != 0)
        np.fill_diagonal(ratio, 0.0)
        # post x pre -> src x dst
        sub = net.coupling()[np.ix_(idx, idx)] * ratio
    w = np.zeros_like(net.weights)
    w[np.ix_(idx, idx)] = sub.T
    return net.replace(weights=w, leak=leak)


def lnp_pipeline(net: Network, cfg: LNPConfig, timescale_objective=None,
                 on_iteration: Callable | None = None):
    """Run ``cfg.iterations`` rounds of Steps 1-3, then Step 4 once.

    Returns ``(network, trace)``. Step 4 runs only when
    ``cfg.timescale_budget >= 3``; ``timescale_objective`` replaces the
    default near-critical objective. ``on_iteration(i, net)`` is called
    after every round.
    """
    trace = PruneTrace()
    if cfg.iterations == 0:
        return net, trace
    for it in range(cfg.iterations):
        seed = sub_seed(cfg.seed, "lnp", it)
        try:
            net = _lnp_round(net, cfg, it, seed, trace)
        except Exception as exc:
            raise PruningError(f"LNP iteration {it}: {exc}") from exc
        if cfg.timescale_each_iteration and cfg.timescale_budget >= 3:
            net = _timescale_step(net, cfg, it, seed, trace, timescale_objective)
        if on_iteration is not None:
            on_iteration(it, net)
    if not cfg.timescale_each_iteration and cfg.timescale_budget >= 3:
        net = _timescale_step(net, cfg, cfg.iterations - 1, sub_seed(cfg.seed, "lnp", "final"),
                              trace, timescale_objective)
    return net, trace


def _lnp_round(net, cfg, it, seed, trace):
    if net.n_edges == 0:
        trace.add(it, "degenerate", net, seed)
        return net
    step = synapse_step(net, cfg, seed)
    net = apply_sparse(net, step.A_sparse, step.idx, step.A)
    trace.add(it, "synapse", net, seed)
    if not cfg.skip_step2:
        net = node_prune_by_centrality(net, cfg.centrality_quantile)
        trace.add(it, "node", net, seed)
    if not cfg.skip_step3 and cfg.m_delocalize > 0:
        try:
            net = add_delocalizing_edges(net, cfg.m_delocalize, sub_seed(seed, "deloc"),
                                         excit_frac=cfg.excit_frac)
        except InsufficientCandidates as exc:
            log.warning("iteration %d: %s", it, exc)
        trace.add(it, "delocalize", net, seed)
    return net


def _timescale_step(net, cfg, it, seed, trace, objective):
    from .tsopt import optimize_timescales, resample_timescales, criticality_objective

    obj = objective or criticality_objective(net, dt_ms=cfg.map_dt_ms, phi=cfg.phi,
                                             seed=sub_seed(seed, "crit"))
    best, _ = optimize_timescales(net, obj, cfg.timescale_budget, seed=sub_seed(seed, "bo"))
    net = resample_timescales(net, best, sub_seed(seed, "tau"))
    trace.add(it, "timescale", net, seed)
    return net


# -- baselines ----------------------------------------------------------------


def lyapunov_neuron_ranking(report: ly.LyapunovReport) -> np.ndarray:
    """Neuron positions sorted by exponent (descending), ties by position."""
    lam = np.asarray(report.per_neuron)
    return np.lexsort((np.arange(lam.size), -lam))


def lyapunov_neuron_prune(net: Network, jacobians: ly.JacobianSequence, top_k: int) -> Network:
    """Prune up to ``top_k`` high-exponent, low-contribution neurons.

    A neuron qualifies when its mean ``|J_t[i, i]|`` is at most the median;
    qualifying neurons are taken in descending exponent order, ties by index.
    Jacobian rows correspond to the alive neurons of ``net`` in index order.
    """
    idx = net.alive_idx
    if jacobians.dim != idx.size:
        raise ValueError("Jacobian dimension must equal the alive neuron count")
    if top_k >= idx.size:
        raise ValueError("top_k must be smaller than the alive count")
    if top_k <= 0:
        return net
    rep = ly.lyapunov_spectrum(jacobians)
    contrib = rep.contribution
    ok = contrib <= np.median(contrib)
    chosen = [int(i) for i in lyapunov_neuron_ranking(rep) if ok[i]][:top_k]
    return prune_nodes(net, idx[chosen])


def activity_prune(net: Network, simulate: Callable[[Network], SpikeRecord], r: float,
                   max_iters: int, eval_fn: Callable[[Network], float], seed: int = 0,
                   stop_fn: Callable[[Network], bool] | None = None,
                   on_iteration: Callable | None = None):
    """Iteratively drop the ``ceil(r * n)`` least active neurons.

    ``simulate`` returns a raster over the alive neurons; ``eval_fn`` scores a
    network (higher is better) after each prune. Stops after ``max_iters``
    rounds, when the score drops below 10% of the initial score, or when
    ``stop_fn(net)`` is true; ``on_iteration(t, net)`` sees every pruned
    network. Returns the last pruned network and the trace.
    """
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    trace = PruneTrace()
    try:
        p_init = float(eval_fn(net))
    except Exception as exc:
        raise ObjectiveEvaluationFailure(f"initial evaluation failed: {exc}") from exc
    trace.add(0, "initial", net, seed, p_init)
    for t in range(max_iters):
        n = net.n_alive
        n_prune = math.ceil(r * n)
        if n_prune >= n:
            break
        rec = simulate(net)
        counts = rec.counts()
        order = np.lexsort((rec.neurons, counts))
        net = prune_nodes(net, rec.neurons[order[:n_prune]])
        try:
            p_cur = float(eval_fn(net))
        except Exception as exc:
            raise ObjectiveEvaluationFailure(f"evaluation failed at iteration {t + 1}: {exc}") from exc
        trace.add(t + 1, "activity", net, seed, p_cur)
        if on_iteration is not None:
            on_iteration(t + 1, net)
        if p_cur < 0.1 * p_init:
            break
        if stop_fn is not None and stop_fn(net):
            break
    return net, trace
