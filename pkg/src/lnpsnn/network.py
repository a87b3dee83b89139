"""Recurrent-layer graph and the pure-graph algorithms used by the pruners.

A :class:`Network` stores a dense ``n x n`` weight matrix where
``weights[src, dst]`` is the synapse from ``src`` onto ``dst``. Rows and
columns of dead neurons are all zero, and neuron indices never change, so
traces taken at different pruning iterations stay comparable.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    """Invalid graph parameters or operations."""


class InsufficientCandidates(NetworkError):
    pass


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    weights: np.ndarray
    tau_m: np.ndarray
    leak: np.ndarray
    alive: np.ndarray

    def __post_init__(self):
        w = _readonly(self.weights)
        n = w.shape[0]
        if w.ndim != 2 or w.shape != (n, n):
            raise NetworkError("weights must be square")
        tau = _readonly(self.tau_m)
        leak = _readonly(self.leak)
        alive = np.array(self.alive, dtype=bool, copy=True)
        alive.setflags(write=False)
        if tau.shape != (n,) or leak.shape != (n,) or alive.shape != (n,):
            raise NetworkError("per-neuron arrays must have length n")
        if not np.all(np.isfinite(w)):
            raise NetworkError("weights must be finite")
        if np.any(np.diag(w) != 0):
            raise NetworkError("self-loops are not allowed; use leak for diagonal terms")
        if np.any(tau[alive] <= 0):
            raise NetworkError("tau_m must be positive")
        dead = ~alive
        if np.any(w[dead, :] != 0) or np.any(w[:, dead] != 0):
            raise NetworkError("edge endpoint refers to a dead neuron")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "tau_m", tau)
        object.__setattr__(self, "leak", leak)
        object.__setattr__(self, "alive", alive)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    @property
    def alive_idx(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights != 0

    def edges(self) -> list[tuple[int, int, float]]:
        src, dst = np.nonzero(self.weights)
        return [(int(s), int(d), float(self.weights[s, d])) for s, d in zip(src, dst)]

    def coupling(self) -> np.ndarray:
        """Post x pre coupling matrix, i.e. ``weights.T``."""
        return self.weights.T.copy()

    def replace(self, **changes) -> Network:
        fields = dict(weights=self.weights, tau_m=self.tau_m, leak=self.leak, alive=self.alive)
        fields.update(changes)
        return Network(**fields)

    def equals(self, other: Network) -> bool:
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.tau_m, other.tau_m)
            and np.array_equal(self.leak, other.leak)
            and np.array_equal(self.alive, other.alive)
        )

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "edges": [[s, d, w] for s, d, w in self.edges()],
            "tau_m": self.tau_m.tolist(),
            "leak": self.leak.tolist(),
            "alive": [bool(a) for a in self.alive],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Network:
        n = int(doc["n"])
        w = np.zeros((n, n))
        for s, d, weight in doc["edges"]:
            if weight == 0:
                raise NetworkError(f"zero-weight edge ({s}, {d})")
            w[int(s), int(d)] = float(weight)
        return cls(weights=w, tau_m=doc["tau_m"], leak=doc["leak"], alive=doc["alive"])

    def to_json(self, path=None, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        text = json.dumps(doc, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, src) -> Network:
        """Parse a JSON document, or read it from ``src`` if it is a path."""
        if isinstance(src, Path) or not str(src).lstrip().startswith("{"):
            src = Path(src).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(src))


def from_edges(n, edges, tau_m=None, leak=None, alive=None) -> Network:
    """Build a network from ``(src, dst[, weight])`` tuples; weight defaults to 1."""
    w = np.zeros((n, n))
    for e in edges:
        s, d = int(e[0]), int(e[1])
        w[s, d] = e[2] if len(e) > 2 else 1.0
    tau_m = np.full(n, 20.0) if tau_m is None else tau_m
    leak = np.ones(n) if leak is None else leak
    alive = np.ones(n, dtype=bool) if alive is None else alive
    return Network(weights=w, tau_m=tau_m, leak=leak, alive=alive)


def draw_weights(rng, size, excit_frac, weight_scale):
    """Signed weights: excitatory with prob ``excit_frac``, magnitude in (0, weight_scale]."""
    sign = np.where(rng.random(size) < excit_frac, 1.0, -1.0)
    # 1 - U(0,1) lies in (0, 1]
    mag = weight_scale * (1.0 - rng.random(size))
    return sign * mag


def generate_small_world(
    n: int,
    k: int,
    beta: float,
    excit_frac: float = 0.8,
    weight_scale: float = 1.0,
    seed: int = 0,
    tau_shape: float = 3.0,
    tau_scale: float = 10.0,
    tau_ref: float = 20.0,
) -> Network:
    """Directed Watts-Strogatz graph with signed weights and gamma timescales.

    Every node sends ``k`` edges to its ring neighbours ``i +- 1 .. i +- k/2``;
    each edge target is then rewired with probability ``beta`` to a uniform
    node that is neither the source nor an existing target. Membrane time
    constants are drawn from Gamma(``tau_shape``, ``tau_scale``) in ms and the
    surrogate leak is ``tau_ref / tau_m``.
    """
    if n < 3 or not (0 < k < n) or k % 2 or not (0.0 <= beta <= 1.0):
        raise NetworkError(f"invalid small-world parameters n={n}, k={k}, beta={beta}")
    if not (0.0 <= excit_frac <= 1.0) or weight_scale <= 0:
        raise NetworkError("excit_frac must be a probability and weight_scale positive")
    rng = np.random.default_rng(seed)
    adj = np.zeros((n, n), dtype=bool)
    offsets = [o for h in range(1, k // 2 + 1) for o in (h, -h)]
    for i in range(n):
        for o in offsets:
            adj[i, (i + o) % n] = True
    if beta > 0:
        for i in range(n):
            for o in offsets:
                j = (i + o) % n
                if rng.random() >= beta:
                    continue
                free = np.flatnonzero(~adj[i])
                free = free[free != i]
                if free.size == 0:
                    continue
                adj[i, j] = False
                adj[i, rng.choice(free)] = True
    src, dst = np.nonzero(adj)
    w = np.zeros((n, n))
    w[src, dst] = draw_weights(rng, src.size, excit_frac, weight_scale)
    tau = rng.gamma(tau_shape, tau_scale, size=n)
    return Network(weights=w, tau_m=tau, leak=tau_ref / tau, alive=np.ones(n, dtype=bool))


def erdos_renyi_match(n_neurons, n_edges, n_total=None, excit_frac=0.8, weight_scale=1.0,
                      seed=0, tau_shape=3.0, tau_scale=10.0, tau_ref=20.0) -> Network:
    """Random digraph with exactly ``n_neurons`` alive nodes and ``n_edges`` edges."""
    n_total = n_neurons if n_total is None else n_total
    max_edges = n_neurons * (n_neurons - 1)
    if n_edges > max_edges or n_neurons > n_total:
        raise NetworkError("too many edges for the requested neuron count")
    rng = np.random.default_rng(seed)
    alive_idx = np.sort(rng.choice(n_total, size=n_neurons, replace=False))
    flat = rng.choice(max_edges, size=n_edges, replace=False)
    s_loc = flat // (n_neurons - 1)
    d_loc = flat % (n_neurons - 1)
    d_loc = d_loc + (d_loc >= s_loc)
    w = np.zeros((n_total, n_total))
    w[alive_idx[s_loc], alive_idx[d_loc]] = draw_weights(rng, n_edges, excit_frac, weight_scale)
    alive = np.zeros(n_total, dtype=bool)
    alive[alive_idx] = True
    tau = np.full(n_total, tau_scale * tau_shape)
    tau[alive_idx] = rng.gamma(tau_shape, tau_scale, size=n_neurons)
    return Network(weights=w, tau_m=tau, leak=tau_ref / tau, alive=alive)


# -- centrality ---------------------------------------------------------------


def _out_lists(adj: np.ndarray, alive: np.ndarray):
    return [np.flatnonzero(adj[v]).tolist() if alive[v] else [] for v in range(adj.shape[0])]


def betweenness_centrality(net: Network, symmetrize: bool = False) -> np.ndarray:
    """Exact shortest-path betweenness (Brandes) on the unweighted skeleton.

    Scores count ordered ``(s, t)`` pairs and are not normalized. Dead
    neurons get 0. With ``symmetrize`` the graph is treated as undirected.
    """
    adj = net.adjacency
    if symmetrize:
        adj = adj | adj.T
    n = net.n
    alive = net.alive
    succ = _out_lists(adj, alive)
    bc = np.zeros(n)
    for s in np.flatnonzero(alive):
        stack = []
        preds = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1)
        dist[s] = 0
        q = deque([s])
        while q:
            v = q.popleft()
            stack.append(v)
            for w in succ[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


# -- structural edits ---------------------------------------------------------


def prune_nodes(net: Network, to_remove) -> Network:
    """Mark ``to_remove`` dead and drop every incident edge. Indices are kept."""
    idx = np.array(sorted(set(int(v) for v in to_remove)), dtype=int)
    if idx.size == 0:
        return net
    if idx.min() < 0 or idx.max() >= net.n or not np.all(net.alive[idx]):
        bad = [int(v) for v in idx if v < 0 or v >= net.n or not net.alive[v]]
        raise NetworkError(f"unknown or dead node(s): {bad}")
    w = net.weights.copy()
    w[idx, :] = 0.0
    w[:, idx] = 0.0
    alive = net.alive.copy()
    alive[idx] = False
    return net.replace(weights=w, alive=alive)


def degrees(net: Network) -> np.ndarray:
    """Total degree (in + out) per neuron."""
    adj = net.adjacency
    return adj.sum(axis=0) + adj.sum(axis=1)


def degree_variance(net: Network) -> float:
    """Population variance of total degree over alive neurons."""
    if net.n_alive == 0:
        raise NetworkError("network has no alive neurons")
    d = degrees(net)[net.alive].astype(float)
    return float(np.mean((d - d.mean()) ** 2))


def delocalization_candidates(net: Network) -> np.ndarray:
    """Absent edges ``u -> v`` where ``u`` is within two undirected hops of ``v``.

    Returned as an ``(m, 2)`` array sorted by ``(src, dst)``.
    """
    a = net.adjacency.astype(np.int64)
    und = ((a + a.T) > 0).astype(np.int64)
    reach = (und + und @ und) > 0
    np.fill_diagonal(reach, False)
    reach &= ~net.adjacency
    reach &= net.alive[:, None] & net.alive[None, :]
    src, dst = np.nonzero(reach)
    return np.column_stack([src, dst])


def add_delocalizing_edges(
    net: Network,
    m: int,
    rng_seed: int = 0,
    excit_frac: float = 0.8,
    weight_scale: float | None = None,
) -> Network:
    """Greedily add ``m`` local edges that each maximize the degree variance.

    The candidate set is recomputed after every insertion; ties go to the
    lowest ``(src, dst)`` pair. ``weight_scale`` defaults to the mean
    magnitude of the existing weights.
    """
    if m < 0:
        raise NetworkError("m must be non-negative")
    if m == 0:
        return net
    if weight_scale is None:
        nz = np.abs(net.weights[net.weights != 0])
        weight_scale = float(nz.mean()) if nz.size else 1.0
    rng = np.random.default_rng(rng_seed)
    new_w = draw_weights(rng, m, excit_frac, weight_scale)
    w = net.weights.copy()
    alive = net.alive
    n_alive = int(alive.sum())
    for step in range(m):
        cur = net.replace(weights=w) if step else net
        cand = delocalization_candidates(cur)
        if cand.shape[0] == 0:
            raise InsufficientCandidates(
                f"only {step} of {m} delocalizing edges could be placed"
            )
        d = degrees(cur).astype(float)
        s1 = d[alive].sum()
        s2 = (d[alive] ** 2).sum()
        du = d[cand[:, 0]]
        dv = d[cand[:, 1]]
        var_new = (s2 + 2 * du + 2 * dv + 2) / n_alive - ((s1 + 2) / n_alive) ** 2
        best = int(np.argmax(var_new))
        u, v = cand[best]
        w[u, v] = new_w[step]
    return net.replace(weights=w)


def clustering_coefficient(net: Network) -> float:
    """Mean local clustering of the undirected skeleton over alive nodes."""
    a = net.adjacency
    und = (a | a.T).astype(float)
    deg = und.sum(axis=1)
    tri = np.diag(und @ und @ und) / 2.0
    pairs = deg * (deg - 1) / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(pairs > 0, tri / pairs, 0.0)
    return float(c[net.alive].mean())
