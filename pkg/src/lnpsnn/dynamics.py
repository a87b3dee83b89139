"""Spiking and rate dynamics of the recurrent layer.

Contains the exponential-Euler LIF simulator with delta-current synapses,
Bernoulli rate encoding, the Euler-Maruyama integrator for the noise-driven
linear surrogate ``dx/dt = A x + b + sigma xi``, and the discrete-time rate
map used to build Jacobians.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Network


class ShapeMismatch(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class LIFConfig:
    v_thresh: float = 1.0
    v_reset: float = 0.0
    dt: float = 1.0
    refractory: int = 2

    def __post_init__(self):
        if not self.v_reset < self.v_thresh:
            raise ValueError("v_reset must be below v_thresh")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.refractory < 0:
            raise ValueError("refractory must be >= 0")


@dataclass
class SpikeRecord:
    """Binary raster (steps x neurons). ``neurons`` maps columns to indices."""

    raster: np.ndarray
    dt: float = 1.0
    neurons: np.ndarray | None = None

    def __post_init__(self):
        self.raster = np.asarray(self.raster, dtype=np.uint8)
        if self.raster.ndim != 2:
            raise ShapeMismatch("raster must be 2-D")
        if np.any(self.raster > 1):
            raise ValueError("raster entries must be 0 or 1")
        if self.neurons is None:
            self.neurons = np.arange(self.raster.shape[1])
        self.neurons = np.asarray(self.neurons, dtype=int)

    @property
    def steps(self) -> int:
        return self.raster.shape[0]

    def counts(self) -> np.ndarray:
        return self.raster.sum(axis=0).astype(np.int64)

    def to_csv(self, path):
        _write_matrix_csv(path, self.raster, self.neurons)

    @classmethod
    def from_csv(cls, path, dt=1.0):
        header, rows = _read_matrix_csv(path)
        return cls(raster=rows.astype(np.uint8), dt=dt, neurons=np.array(header, dtype=int))


@dataclass
class Trajectory:
    states: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if not np.all(np.isfinite(self.states)):
            raise NonFiniteInput("trajectory contains non-finite values")

    def to_csv(self, path):
        _write_matrix_csv(path, self.states, range(self.states.shape[1]))

    @classmethod
    def from_csv(cls, path, dt=1.0):
        _, rows = _read_matrix_csv(path)
        return cls(states=rows, dt=dt)


def _write_matrix_csv(path, values, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([str(h) for h in header])
        for row in np.atleast_2d(values):
            wr.writerow([repr(float(v)) if not float(v).is_integer() else str(int(v)) for v in row])


def _read_matrix_csv(path):
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return header, data


# -- LIF ----------------------------------------------------------------------


class LIFState:
    """Stepwise LIF integrator over the alive neurons of ``net``.

    Used directly by closed-loop forecasting; :func:`simulate_lif` wraps it.
    """

    def __init__(self, net: Network, cfg: LIFConfig, input_weights, v0=None, gain=1.0):
        self.cfg = cfg
        self.idx = net.alive_idx
        self.w_rec = gain * net.weights[np.ix_(self.idx, self.idx)]
        self.w_in = np.asarray(input_weights, dtype=float)
        if self.w_in.ndim != 2 or self.w_in.shape[1] != self.idx.size:
            raise ShapeMismatch(
                f"input_weights must be (n_inputs, {self.idx.size}), got {self.w_in.shape}"
            )
        self.decay = np.exp(-cfg.dt / net.tau_m[self.idx])
        n = self.idx.size
        self.v = np.full(n, cfg.v_reset) if v0 is None else np.array(v0, dtype=float)
        self.refr = np.zeros(n, dtype=int)
        self.last = np.zeros(n, dtype=bool)

    def step(self, input_spikes) -> np.ndarray:
        cfg = self.cfg
        drive = input_spikes @ self.w_in + self.last.astype(float) @ self.w_rec
        v = self.v * self.decay + drive
        blocked = self.refr > 0
        v[blocked] = cfg.v_reset
        spikes = (v >= cfg.v_thresh) & ~blocked
        v[spikes] = cfg.v_reset
        self.refr = np.maximum(self.refr - 1, 0)
        self.refr[spikes] = cfg.refractory
        self.v = v
        self.last = spikes
        return spikes


def simulate_lif(
    net: Network,
    cfg: LIFConfig,
    input_spikes: SpikeRecord,
    input_weights,
    steps: int,
    seed: int = 0,
    v_init: str = "reset",
    gain: float = 1.0,
) -> SpikeRecord:
    """Run the LIF network for ``steps`` steps.

    ``v(t+dt) = v(t) exp(-dt/tau_m) + W_in^T s_in(t) + W^T s(t-1)``; a neuron
    spikes and resets when ``v >= v_thresh`` and is then clamped at
    ``v_reset`` for ``refractory`` steps. ``v_init="random"`` draws initial
    potentials uniformly below threshold from ``seed``.
    """
    if input_spikes.steps < steps:
        raise ShapeMismatch(f"input has {input_spikes.steps} rows, need {steps}")
    w_in = np.asarray(input_weights, dtype=float)
    if w_in.shape[0] != input_spikes.raster.shape[1]:
        raise ShapeMismatch("input_weights rows must match input channels")
    v0 = None
    if v_init == "random":
        rng = np.random.default_rng(seed)
        v0 = rng.uniform(cfg.v_reset, cfg.v_thresh, size=net.n_alive)
    state = LIFState(net, cfg, w_in, v0=v0, gain=gain)
    out = np.zeros((steps, net.n_alive), dtype=np.uint8)
    inp = input_spikes.raster.astype(float)
    for t in range(steps):
        out[t] = state.step(inp[t])
    return SpikeRecord(raster=out, dt=cfg.dt, neurons=net.alive_idx)


def lif_period(drive, tau_m, cfg: LIFConfig) -> float:
    """Closed-form inter-spike interval (ms) for constant per-step drive from reset.

    The per-step drive ``I`` is equivalent to a continuous input with
    asymptotic potential ``I / (1 - exp(-dt/tau))``.
    """
    a = np.exp(-cfg.dt / tau_m)
    v_inf = cfg.v_reset + drive / (1.0 - a)
    if v_inf <= cfg.v_thresh:
        return np.inf
    t_up = tau_m * np.log((v_inf - cfg.v_reset) / (v_inf - cfg.v_thresh))
    return t_up + cfg.refractory * cfg.dt


# -- encoding and rates -------------------------------------------------------


def minmax_normalize(series, lo=None, hi=None):
    x = np.asarray(series, dtype=float)
    lo = x.min(axis=0) if lo is None else np.asarray(lo, dtype=float)
    hi = x.max(axis=0) if hi is None else np.asarray(hi, dtype=float)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((x - lo) / span, 0.0, 1.0)


def rate_encode(series, rate_max: float, dt: float, seed: int = 0, lo=None, hi=None) -> SpikeRecord:
    """Bernoulli spikes with per-step probability ``norm(x) * rate_max * dt / 1000``.

    Channels are min-max normalized to [0, 1]; pass ``lo``/``hi`` to reuse the
    bounds of a training split.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if x.ndim == 1:
        x = x[:, None]
    prob = np.clip(minmax_normalize(x, lo, hi) * rate_max * dt / 1000.0, 0.0, 1.0)
    rng = np.random.default_rng(seed)
    raster = (rng.random(prob.shape) < prob).astype(np.uint8)
    return SpikeRecord(raster=raster, dt=dt)


def estimate_firing_rates(rec: SpikeRecord, window: int | None = None) -> np.ndarray:
    """Spike count over the trailing ``window`` steps divided by window time, in Hz.

    ``window=None`` uses the run minus a 20% burn-in.
    """
    if window is None:
        window = max(1, rec.steps - int(0.2 * rec.steps))
    if not 1 <= window <= rec.steps:
        raise ValueError(f"invalid window {window} for {rec.steps} steps")
    counts = rec.raster[-window:].sum(axis=0)
    return counts / (window * rec.dt / 1000.0)


# -- linear surrogate ---------------------------------------------------------


def spectral_abscissa(a) -> float:
    return float(np.max(np.linalg.eigvals(a).real))


def simulate_linear_noise(A, b, sigma: float, steps: int, dt: float, seed: int = 0, x0=None) -> Trajectory:
    """Euler-Maruyama for ``dx = (A x + b) dt + sigma dW``; row 0 is ``x0``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape != (n, n):
        raise ShapeMismatch("A must be square")
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ShapeMismatch("b must have length n")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.isfinite(sigma)):
        raise NonFiniteInput("A, b and sigma must be finite")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if n <= 400 and spectral_abscissa(A) > 0:
        warnings.warn("linear surrogate is unstable (max Re eig(A) > 0)", RuntimeWarning)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    out = np.empty((steps, n))
    rng = np.random.default_rng(seed)
    noise_scale = sigma * np.sqrt(dt)
    chunk = 4096
    for start in range(0, steps, chunk):
        stop = min(steps, start + chunk)
        xi = rng.standard_normal((stop - start, n)) if sigma > 0 else None
        for t in range(start, stop):
            out[t] = x
            x = x + dt * (A @ x + b)
            if xi is not None:
                x = x + noise_scale * xi[t - start]
    if not np.all(np.isfinite(out)):
        raise NonFiniteInput("linear surrogate diverged; reduce dt or stabilize A")
    return Trajectory(states=out, dt=dt)


def estimate_covariance(traj: Trajectory, burn_in: int = 0) -> np.ndarray:
    x = traj.states[burn_in:]
    if x.shape[0] < 2:
        raise InsufficientSamples(f"need >= 2 samples after burn-in, have {x.shape[0]}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    return 0.5 * (cov + cov.T)


# -- discrete rate map --------------------------------------------------------

NONLINEARITIES = {
    "tanh": (np.tanh, lambda h: 1.0 - np.tanh(h) ** 2),
    "relu": (lambda h: np.maximum(h, 0.0), lambda h: (h > 0).astype(float)),
    "identity": (lambda h: h, lambda h: np.ones_like(h)),
}


def get_phi(name: str):
    try:
        return NONLINEARITIES[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}; choose from {sorted(NONLINEARITIES)}") from None


def discrete_map_step(h, W, dt_norm, phi: str = "tanh", inp=None) -> np.ndarray:
    """``h_i' = (1 - dt_i) h_i + dt_i sum_j W_ij phi(h_j)`` (+ optional input).

    ``dt_norm`` may be a scalar or a per-neuron vector.
    """
    f, _ = get_phi(phi)
    h = np.asarray(h, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.shape != (h.size, h.size):
        raise ShapeMismatch("W must be (n, n) for state of length n")
    dt = np.asarray(dt_norm, dtype=float)
    out = (1.0 - dt) * h + dt * (W @ f(h))
    if inp is not None:
        out = out + inp
    return out
