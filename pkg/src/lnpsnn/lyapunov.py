"""Lyapunov exponents of the recurrent rate map.

The full spectrum comes from QR reorthonormalization of Jacobian products.
Per-neuron exponents use the diagonal of the Jacobian product, accumulated
with per-column rescaling so long products neither overflow nor underflow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import discrete_map_step, get_phi
from .network import Network


class SingularR(ArithmeticError):
    def __init__(self, step, k):
        super().__init__(f"R has a non-positive diagonal entry r[{k}] at step {step}")
        self.step = step
        self.k = k


class EigenSolverFailure(ArithmeticError):
    pass


@dataclass
class JacobianSequence:
    mats: list
    dt_norm: float | np.ndarray = 1.0

    def __post_init__(self):
        self.mats = [np.asarray(m, dtype=float) for m in self.mats]
        if not self.mats:
            raise ValueError("empty Jacobian sequence")
        n = self.mats[0].shape[0]
        for m in self.mats:
            if m.shape != (n, n) or not np.all(np.isfinite(m)):
                raise ValueError("Jacobians must be finite and all the same square shape")

    @property
    def dim(self) -> int:
        return self.mats[0].shape[0]

    def __len__(self):
        return len(self.mats)


@dataclass
class LyapunovReport:
    spectrum: np.ndarray
    per_neuron: np.ndarray
    T: int
    contribution: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"spectrum": list(map(float, self.spectrum)),
                "per_neuron": list(map(float, self.per_neuron)),
                "T": int(self.T)}

    def to_json(self, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        return cls(np.array(doc["spectrum"]), np.array(doc["per_neuron"]), int(doc["T"]))


@dataclass
class LyapunovMatrix:
    """Harmonic-mean exponent per edge, in post x pre orientation."""

    values: np.ndarray
    undefined: int = 0
    undefined_edges: list = field(default_factory=list)


def jacobian_at(h_prev, W, dt_norm, phi: str = "tanh") -> np.ndarray:
    """``D_ij = (1 - dt_i) delta_ij + dt_i W_ij phi'(h_j)``."""
    _, dphi = get_phi(phi)
    h = np.asarray(h_prev, dtype=float)
    W = np.asarray(W, dtype=float)
    dt = np.asarray(dt_norm, dtype=float)
    n = h.size
    dt_col = dt.reshape(-1, 1) if dt.ndim else dt
    return np.diag(np.broadcast_to(1.0 - dt, (n,))) + dt_col * W * dphi(h)[None, :]


def _qr_pos(m):
    q, r = np.linalg.qr(m)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, (r.T * s).T


def lyapunov_spectrum(jacobians: JacobianSequence) -> LyapunovReport:
    """Full spectrum and per-neuron exponents from one Jacobian sequence.

    ``Q`` starts at the identity; each step takes ``Q, R = QR(J_t Q)`` with a
    positive ``R`` diagonal and accumulates ``log r_t^k``. The per-neuron
    exponent is ``(1/T) log |[J_T ... J_1]_ii|``, with each column of the
    product rescaled separately, and the contribution is the
    mean of ``|J_t[i, i]|``.
    """
    n = jacobians.dim
    T = len(jacobians)
    q = np.eye(n)
    log_r = np.zeros((T, n))
    prod = np.eye(n)
    log_scale = np.zeros(n)
    diag_abs = np.zeros(n)
    for t, J in enumerate(jacobians.mats):
        q, r = _qr_pos(J @ q)
        d = np.diag(r)
        bad = np.flatnonzero(d <= 0)
        if bad.size:
            raise SingularR(t, int(bad[0]))
        log_r[t] = np.log(d)
        # columns of the product evolve independently, so each keeps its own scale
        prod = J @ prod
        s = np.max(np.abs(prod), axis=0)
        s[(s == 0) | ~np.isfinite(s)] = 1.0
        prod /= s
        log_scale += np.log(s)
        diag_abs += np.abs(np.diag(J))
    spectrum = np.sort(_pairwise_mean(log_r))[::-1]
    # a diagonal entry that cancels exactly is floored at the smallest normal float
    diag = np.maximum(np.abs(np.diag(prod)), np.finfo(float).tiny)
    per_neuron = (log_scale + np.log(diag)) / T
    return LyapunovReport(spectrum=spectrum, per_neuron=per_neuron, T=T,
                          contribution=diag_abs / T)


def _pairwise_mean(x):
    # pairwise summation over the time axis keeps averages order-stable
    return np.add.reduce(x, axis=0) / x.shape[0]


def average_reports(reports: list[LyapunovReport]) -> LyapunovReport:
    """Average spectra from several input sequences."""
    spec = _pairwise_mean(np.stack([r.spectrum for r in reports]))
    per = _pairwise_mean(np.stack([r.per_neuron for r in reports]))
    contrib = None
    if all(r.contribution is not None for r in reports):
        contrib = _pairwise_mean(np.stack([r.contribution for r in reports]))
    return LyapunovReport(spectrum=spec, per_neuron=per, T=sum(r.T for r in reports),
                          contribution=contrib)


def map_dt(net: Network, dt_ms: float) -> np.ndarray:
    """Per-neuron normalized step ``dt / tau_m`` clipped to (0, 1]."""
    return np.clip(dt_ms / net.tau_m[net.alive_idx], 1e-12, 1.0)


def network_jacobians(net: Network, steps: int = 200, dt_ms: float = 5.0, phi: str = "tanh",
                      input_std: float = 0.5, warmup: int = 50, seed: int = 0,
                      gain: float = 1.0) -> JacobianSequence:
    """Jacobians of the untrained rate map along a noise-driven orbit.

    The state starts at zero and is driven by i.i.d. Gaussian input; only
    alive neurons are included.
    """
    idx = net.alive_idx
    W = gain * net.coupling()[np.ix_(idx, idx)]
    dt = map_dt(net, dt_ms)
    rng = np.random.default_rng(seed)
    h = np.zeros(idx.size)
    mats = []
    for t in range(warmup + steps):
        if t >= warmup:
            mats.append(jacobian_at(h, W, dt, phi))
        h = discrete_map_step(h, W, dt, phi, inp=input_std * rng.standard_normal(idx.size))
    return JacobianSequence(mats=mats, dt_norm=dt)


def network_exponents(net: Network, n_sequences: int = 4, seed: int = 0, **kw) -> LyapunovReport:
    """Spectrum and per-neuron exponents averaged over several input sequences."""
    ss = np.random.SeedSequence(seed)
    reports = [lyapunov_spectrum(network_jacobians(net, seed=int(c.generate_state(1)[0]), **kw))
               for c in ss.spawn(n_sequences)]
    return average_reports(reports)


def neighbor_sets(adj: np.ndarray) -> list[set]:
    und = adj | adj.T
    return [set(np.flatnonzero(und[v]).tolist()) for v in range(adj.shape[0])]


def lyapunov_matrix(net: Network, per_neuron) -> LyapunovMatrix:
    """Harmonic mean of the exponents of the union of neighbours of each edge.

    ``per_neuron`` is indexed by neuron id (length ``net.n``). Neighbours are
    taken on the undirected skeleton; the edge's own endpoints are excluded
    unless the synapse is reciprocated. If any exponent in the set is 0, the
    set is empty, or the reciprocal sum vanishes, the entry is 0 and counted
    in ``undefined``.
    """
    lam = np.asarray(per_neuron, dtype=float)
    if lam.shape != (net.n,):
        raise ValueError(f"per_neuron must have length {net.n}")
    adj = net.adjacency
    nbrs = neighbor_sets(adj)
    L = np.zeros((net.n, net.n))
    bad = []
    for s, d in zip(*np.nonzero(adj)):
        members = nbrs[s] | nbrs[d]
        if not (adj[s, d] and adj[d, s]):
            members -= {s, d}
        vals = lam[sorted(members)]
        if vals.size == 0 or np.any(vals == 0):
            bad.append((int(s), int(d)))
            continue
        recip = np.sum(1.0 / vals)
        if recip == 0 or not np.isfinite(recip):
            bad.append((int(s), int(d)))
            continue
        # post x pre orientation: synapse s -> d lives at [d, s]
        L[d, s] = vals.size / recip
    return LyapunovMatrix(values=L, undefined=len(bad), undefined_edges=bad)


def max_local_le(U, W_hat, D_seq, alpha: float) -> float:
    """``max_k (1/N_s) sum_t ln |lambda_k(alpha U + D(t) W_hat)|``.

    Eigenvalue moduli are sorted descending at every step so index ``k``
    tracks the k-th largest modulus.
    """
    U = np.asarray(U, dtype=float)
    W_hat = np.asarray(W_hat, dtype=float)
    if not D_seq:
        raise ValueError("D_seq must be non-empty")
    n = U.shape[0]
    acc = np.zeros(n)
    for D in D_seq:
        D = np.asarray(D, dtype=float)
        if D.ndim == 1:
            D = np.diag(D)
        m = alpha * U + D @ W_hat
        try:
            ev = np.linalg.eigvals(m)
        except np.linalg.LinAlgError as exc:
            raise EigenSolverFailure(str(exc)) from exc
        mod = np.sort(np.abs(ev))[::-1]
        with np.errstate(divide="ignore"):
            acc += np.log(mod)
    return float(np.max(acc / len(D_seq)))


def network_max_local_le(net: Network, tau_m=None, steps: int = 50, dt_ms: float = 5.0,
                         phi: str = "tanh", input_std: float = 0.5, seed: int = 0,
                         gain: float = 1.0) -> float:
    """Max local exponent of the heterogeneous rate map of ``net``.

    Uses ``alpha = 1``, ``U = diag(1 - dt_i)``, ``W_hat = diag(dt_i) W`` and
    ``D(t) = diag(phi'(h_t))`` along a noise-driven orbit; ``tau_m``
    overrides the network's time constants for the alive neurons.
    """
    if tau_m is not None:
        tau = net.tau_m.copy()
        tau[net.alive_idx] = tau_m
        net = net.replace(tau_m=tau)
    idx = net.alive_idx
    W = gain * net.coupling()[np.ix_(idx, idx)]
    dt = map_dt(net, dt_ms)
    _, dphi = get_phi(phi)
    rng = np.random.default_rng(seed)
    h = np.zeros(idx.size)
    D_seq = []
    for _ in range(steps):
        D_seq.append(dphi(h))
        h = discrete_map_step(h, W, dt, phi, inp=input_std * rng.standard_normal(idx.size))
    return max_local_le(np.diag(1.0 - dt), dt[:, None] * W, D_seq, 1.0)


def rk4_tangent_jacobians(f, jac, x0, dt: float, steps: int, transient: int = 0) -> JacobianSequence:
    """Exact Jacobians of the RK4 step map along an orbit of ``x' = f(x)``.

    The stage derivatives are chained through ``jac`` so each matrix is the
    derivative of one RK4 step, not an approximation of the flow.
    """
    x = np.array(x0, dtype=float)
    eye = np.eye(x.size)
    mats = []
    for t in range(transient + steps):
        k1 = f(x)
        x2 = x + 0.5 * dt * k1
        k2 = f(x2)
        x3 = x + 0.5 * dt * k2
        k3 = f(x3)
        x4 = x + dt * k3
        k4 = f(x4)
        if t >= transient:
            d1 = jac(x)
            d2 = jac(x2) @ (eye + 0.5 * dt * d1)
            d3 = jac(x3) @ (eye + 0.5 * dt * d2)
            d4 = jac(x4) @ (eye + dt * d3)
            mats.append(eye + dt / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4))
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return JacobianSequence(mats=mats, dt_norm=dt)
