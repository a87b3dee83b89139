"""Bayesian optimization over gamma distributions of membrane time constants.

Candidates are compared through an entropic optimal-transport distance
between their quantile discretizations; a Matern-5/2 kernel over that
distance defines the GP surrogate, and expected improvement picks the next
evaluation from a fixed quasi-random pool.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import logsumexp
from scipy.stats import qmc

from .network import Network


class SinkhornNonConvergence(RuntimeError):
    pass


class KernelNotPSD(np.linalg.LinAlgError):
    pass


class ObjectiveFailure(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True, order=True)
class TimescaleDistribution:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma shape and scale must be positive")

    @property
    def mean(self):
        return self.shape * self.scale

    def sample(self, size, seed=0):
        return np.random.default_rng(seed).gamma(self.shape, self.scale, size=size)


@lru_cache(maxsize=4096)
def _atoms(shape, scale, n_atoms):
    q = (np.arange(n_atoms) + 0.5) / n_atoms
    a = stats.gamma.ppf(q, shape, scale=scale)
    a.setflags(write=False)
    return a


def quantile_atoms(p: TimescaleDistribution, n_atoms: int = 64) -> np.ndarray:
    """Equal-mass atoms at the mid-quantiles of ``p``."""
    return _atoms(float(p.shape), float(p.scale), int(n_atoms))


def default_reg(x, y) -> float:
    gaps = np.concatenate([np.diff(x), np.diff(y)])
    return 0.05 * float(np.mean(gaps)) ** 2


def _monotone_duals(x, y):
    # potentials of the sorted (monotone) matching; feasible by the Monge property
    cost = lambda a, b: (a - b) ** 2
    f = np.zeros(x.size)
    for i in range(x.size - 1):
        lo = f[i] + cost(x[i + 1], y[i + 1]) - cost(x[i], y[i + 1])
        hi = f[i] + cost(x[i + 1], y[i]) - cost(x[i], y[i])
        f[i + 1] = 0.5 * (lo + hi)
    return f, cost(x, y) - f


def sinkhorn_cost(x, y, reg, tol=1e-6, marginal_tol=1e-3, max_iter=10000):
    """Transport cost of the entropic plan between uniform atoms ``x`` and ``y``.

    Log-domain Sinkhorn, warm-started from the exact 1-D duals. Stops once
    the cost changes by at most ``tol`` (relative) between sweeps and the
    row-marginal L1 error is at most ``marginal_tol``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.size, y.size
    C = (x[:, None] - y[None, :]) ** 2
    la = np.full(n, -math.log(n))
    lb = np.full(m, -math.log(m))
    if n == m and np.all(np.diff(x) >= 0) and np.all(np.diff(y) >= 0):
        f, g = _monotone_duals(x, y)
    else:
        f, g = np.zeros(n), np.zeros(m)
    prev = None
    for _ in range(max_iter):
        f = -reg * logsumexp((g[None, :] - C) / reg + lb[None, :], axis=1)
        g = -reg * logsumexp((f[:, None] - C) / reg + la[:, None], axis=0)
        P = np.exp((f[:, None] + g[None, :] - C) / reg + la[:, None] + lb[None, :])
        cost = float(np.sum(P * C))
        err = float(np.abs(P.sum(axis=1) - np.exp(la)).sum())
        if prev is not None and abs(cost - prev) <= tol * max(abs(cost), 1e-300) and err <= marginal_tol:
            return cost
        prev = cost
    raise SinkhornNonConvergence(f"Sinkhorn did not converge in {max_iter} iterations")


def sinkhorn_distance(p: TimescaleDistribution, q: TimescaleDistribution, reg: float | None = None,
                      n_atoms: int = 64, tol: float = 1e-6) -> float:
    """Entropic 2-Wasserstein distance between two gamma distributions.

    Returns the square root of the regularized squared-distance transport
    cost. ``reg=None`` uses 5% of the squared mean atom spacing. The pair is
    put in canonical order first, so the result is exactly symmetric.
    """
    if n_atoms < 8:
        raise ValueError("n_atoms must be >= 8")
    if reg is not None and reg <= 0:
        raise ValueError("reg must be positive")
    a, b = sorted([p, q])
    x = quantile_atoms(a, n_atoms)
    y = quantile_atoms(b, n_atoms)
    r = default_reg(x, y) if reg is None else reg
    return math.sqrt(max(sinkhorn_cost(x, y, r, tol=tol), 0.0))


def matern_kernel(d, lengthscale: float, variance: float):
    """Matern-5/2: ``v (1 + sqrt5 d/l + 5 d^2 / (3 l^2)) exp(-sqrt5 d/l)``."""
    r = math.sqrt(5.0) * np.asarray(d, dtype=float) / lengthscale
    return variance * (1.0 + r + r * r / 3.0) * np.exp(-r)


# -- GP -----------------------------------------------------------------------


class DistanceCache:
    """Memoized pairwise distances; identical distributions are at distance 0."""

    def __init__(self, reg=None, n_atoms=64):
        self.reg = reg
        self.n_atoms = n_atoms
        self._d = {}

    def __call__(self, p, q):
        if p == q:
            return 0.0
        key = (p, q) if p < q else (q, p)
        if key not in self._d:
            self._d[key] = sinkhorn_distance(p, q, self.reg, self.n_atoms)
        return self._d[key]

    def matrix(self, ps, qs):
        return np.array([[self(p, q) for q in qs] for p in ps]).reshape(len(ps), len(qs))


@dataclass
class GPState:
    points: list
    values: np.ndarray
    lengthscale: float = 1.0
    variance: float = 1.0
    noise: float = 0.0
    distance: Callable = field(default_factory=DistanceCache)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.points) != self.values.size:
            raise ValueError("points and values must have equal length")


def _cholesky_jitter(K, start=1e-8, stop=1e-4):
    jitter = start
    eye = np.eye(K.shape[0])
    while jitter <= stop * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise KernelNotPSD("kernel matrix not positive definite after jitter 1e-4")


def gp_posterior(state: GPState, candidates) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean GP posterior mean and variance at ``candidates``."""
    if len(state.points) == 0:
        raise ValueError("need at least one observation")
    D = state.distance.matrix(state.points, state.points)
    K = matern_kernel(D, state.lengthscale, state.variance) + state.noise * np.eye(len(state.points))
    Lc, _ = _cholesky_jitter(K)
    Ds = state.distance.matrix(candidates, state.points)
    Ks = matern_kernel(Ds, state.lengthscale, state.variance)
    alpha = np.linalg.solve(Lc.T, np.linalg.solve(Lc, state.values))
    mean = Ks @ alpha
    v = np.linalg.solve(Lc, Ks.T)
    var = np.maximum(state.variance - np.sum(v * v, axis=0), 0.0)
    return mean, var


def log_marginal_likelihood(state: GPState) -> float:
    D = state.distance.matrix(state.points, state.points)
    K = matern_kernel(D, state.lengthscale, state.variance) + state.noise * np.eye(len(state.points))
    Lc, _ = _cholesky_jitter(K)
    alpha = np.linalg.solve(Lc.T, np.linalg.solve(Lc, state.values))
    return float(-0.5 * state.values @ alpha - np.log(np.diag(Lc)).sum()
                 - 0.5 * len(state.points) * math.log(2 * math.pi))


def expected_improvement(mean, var, best: float) -> np.ndarray:
    """EI for maximization; zero-variance points score ``max(mean - best, 0)``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    imp = mean - best
    out = np.maximum(imp, 0.0)
    pos = sd > 0
    with np.errstate(over="ignore", under="ignore"):
        # a tiny sd gives a huge |z|; the pdf term then underflows to 0 harmlessly
        z = imp[pos] / sd[pos]
        out[pos] = imp[pos] * stats.norm.cdf(z) + sd[pos] * stats.norm.pdf(z)
    return np.maximum(out, 0.0)


# -- optimizer ----------------------------------------------------------------

DEFAULT_BOUNDS = {"shape": (1.0, 10.0), "scale": (2.0, 30.0)}


def _scale_points(u, bounds):
    (s0, s1), (c0, c1) = bounds["shape"], bounds["scale"]
    return [TimescaleDistribution(float(s0 + a * (s1 - s0)), float(c0 + b * (c1 - c0))) for a, b in u]


def _fit_lengthscale(state: GPState, grid=(0.1, 0.2, 0.5, 1.0, 2.0, 5.0)):
    D = state.distance.matrix(state.points, state.points)
    med = np.median(D[D > 0]) if np.any(D > 0) else 1.0
    best, best_ll = state.lengthscale, -np.inf
    for g in grid:
        state.lengthscale = g * med
        try:
            ll = log_marginal_likelihood(state)
        except KernelNotPSD:
            continue
        if ll > best_ll:
            best, best_ll = state.lengthscale, ll
    state.lengthscale = best


def optimize_timescales(net: Network | None, objective: Callable[[TimescaleDistribution], float],
                        budget: int, bounds: dict | None = None, seed: int = 0,
                        pool_size: int = 256, n_init: int = 3, reg: float | None = None,
                        n_atoms: int = 64):
    """Maximize ``objective`` over gamma (shape, scale) within ``bounds``.

    Three quasi-random starting points, then one EI-argmax pick per round
    from a fixed scrambled-Halton pool of ``pool_size`` candidates. Returns
    ``(best, history)`` where history rows are ``(round, shape, scale, value)``.
    """
    if budget < n_init:
        raise ValueError(f"budget must be >= {n_init}")
    bounds = dict(DEFAULT_BOUNDS if bounds is None else bounds)
    for k in ("shape", "scale"):
        lo, hi = bounds[k]
        if not (0 < lo <= hi):
            raise ValueError(f"invalid bounds for {k}: {bounds[k]}")
    halton = qmc.Halton(d=2, scramble=True, seed=seed)
    u = halton.random(n_init + pool_size)
    init = _scale_points(u[:n_init], bounds)
    pool = _scale_points(u[n_init:], bounds)
    dist = DistanceCache(reg=reg, n_atoms=n_atoms)
    history: list[tuple] = []

    def evaluate(p):
        try:
            val = float(objective(p))
        except Exception as exc:
            raise ObjectiveFailure(f"objective failed at {p}: {exc}", history) from exc
        if not math.isfinite(val):
            raise ObjectiveFailure(f"objective returned {val} at {p}", history)
        history.append((len(history), p.shape, p.scale, val))
        return val

    pts, ys = [], []
    for p in init:
        pts.append(p)
        ys.append(evaluate(p))
    while len(history) < budget:
        y = np.array(ys)
        sd = y.std()
        yn = (y - y.mean()) / sd if sd > 0 else y - y.mean()
        state = GPState(points=pts, values=yn, noise=1e-6, distance=dist)
        _fit_lengthscale(state)
        remaining = [c for c in pool if c not in pts]
        if not remaining:
            break
        mu, var = gp_posterior(state, remaining)
        ei = expected_improvement(mu, var, float(yn.max()))
        nxt = remaining[int(np.argmax(ei))]
        pts.append(nxt)
        ys.append(evaluate(nxt))
    best = pts[int(np.argmax(ys))]
    return best, history


def history_to_csv(history, path=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(["round", "shape", "scale", "objective"])
    for r, s, c, v in history:
        wr.writerow([r, repr(float(s)), repr(float(c)), repr(float(v))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


def grid_search(objective, bounds, n=401):
    """Dense grid optimum over ``bounds``; degenerate ranges collapse to one value."""
    axes = []
    for k in ("shape", "scale"):
        lo, hi = bounds[k]
        axes.append(np.array([lo]) if lo == hi else np.linspace(lo, hi, n))
    best, best_v = None, -np.inf
    for s in axes[0]:
        for c in axes[1]:
            p = TimescaleDistribution(float(s), float(c))
            v = objective(p)
            if v > best_v:
                best, best_v = p, v
    return best, best_v


def resample_timescales(net: Network, dist: TimescaleDistribution, seed: int) -> Network:
    """Redraw alive neurons' ``tau_m`` from ``dist``."""
    tau = net.tau_m.copy()
    tau[net.alive_idx] = dist.sample(net.n_alive, seed)
    return net.replace(tau_m=tau)


def criticality_objective(net: Network, dt_ms: float = 5.0, phi: str = "tanh", seed: int = 0,
                          steps: int = 50):
    """Objective ``-|L_max|`` with timescales drawn from the candidate distribution.

    The same sampling seed is used for every candidate.
    """
    from .lyapunov import network_max_local_le

    def objective(p: TimescaleDistribution) -> float:
        tau = p.sample(net.n_alive, seed)
        return -abs(network_max_local_le(net, tau_m=tau, steps=steps, dt_ms=dt_ms, phi=phi, seed=seed))

    return objective
