"""Readout training, closed-loop forecasting and forecast/energy metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeries
from .dynamics import LIFConfig, LIFState, ShapeMismatch, SpikeRecord
from .network import Network, betweenness_centrality


class SingularSystem(np.linalg.LinAlgError):
    pass


class ZeroSigma(ValueError):
    pass


# -- readout ------------------------------------------------------------------


def select_readout_neurons(net: Network, fraction: float = 0.1) -> np.ndarray:
    """The ``ceil(fraction * n_alive)`` alive neurons with the highest betweenness."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    idx = net.alive_idx
    k = math.ceil(fraction * idx.size - 1e-9)
    bc = betweenness_centrality(net)[idx]
    order = np.lexsort((idx, -bc))
    return np.sort(idx[order[:k]])


@dataclass
class Readout:
    selected_neurons: np.ndarray
    weights: np.ndarray
    ridge_lambda: float
    residual: float = 0.0
    n_inputs: int = 0

    def __post_init__(self):
        sel = np.asarray(self.selected_neurons, dtype=int)
        if np.unique(sel).size != sel.size:
            raise ValueError("selected neurons must be unique")
        self.selected_neurons = sel

    def predict(self, features) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        return X @ self.weights[:-1] + self.weights[-1]


def train_readout(states, targets, ridge_lambda: float = 1e-6, selected=None,
                  n_inputs: int = 0) -> Readout:
    """Ridge regression with an unpenalized bias row appended last."""
    X = np.asarray(states, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ShapeMismatch(f"states {X.shape} and targets {Y.shape} disagree")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    if X.shape[0] < X.shape[1] + 1:
        raise ValueError(f"need at least {X.shape[1] + 1} rows, got {X.shape[0]}")
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    Xc = X - xm
    G = Xc.T @ Xc + ridge_lambda * np.eye(X.shape[1])
    if ridge_lambda == 0 and np.linalg.matrix_rank(Xc) < X.shape[1]:
        raise SingularSystem("features are collinear and ridge_lambda is 0")
    W = np.linalg.solve(G, Xc.T @ (Y - ym))
    b = ym - xm @ W
    weights = np.vstack([W, b])
    resid = float(np.sqrt(np.mean((X @ W + b - Y) ** 2)))
    sel = np.arange(X.shape[1] - n_inputs) if selected is None else selected
    return Readout(sel, weights, float(ridge_lambda), resid, n_inputs)


# -- reservoir ----------------------------------------------------------------


@dataclass
class Reservoir:
    """Spiking reservoir with fixed input projection and trace readout features.

    ``w_in`` has one row per input channel plus a final bias row and one
    column per neuron id, so pruned networks reuse the same projection.
    Inputs are min-max scaled with ``lo``/``hi`` before projection.
    """

    net: Network
    cfg: LIFConfig
    w_in: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    substeps: int = 1
    gain: float = 1.0

    def normalize(self, x):
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (np.asarray(x, dtype=float) - self.lo) / span

    def denormalize(self, z):
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return np.asarray(z, dtype=float) * span + self.lo

    def with_net(self, net: Network) -> "Reservoir":
        return Reservoir(net, self.cfg, self.w_in, self.lo, self.hi, self.substeps, self.gain)

    def start(self):
        idx = self.net.alive_idx
        lif = LIFState(self.net, self.cfg, self.w_in[:, idx], gain=self.gain)
        decay = np.exp(-self.cfg.dt / self.net.tau_m[idx])
        return _RunState(lif, decay, np.zeros(idx.size))

    def advance(self, run, frame_norm):
        """Feed one normalized frame; returns spike counts of the alive neurons."""
        u = np.append(frame_norm, 1.0)
        counts = np.zeros(run.trace.size, dtype=np.int64)
        for _ in range(self.substeps):
            s = run.lif.step(u)
            run.trace = run.trace * run.decay + s
            counts += s
        return counts


@dataclass
class _RunState:
    lif: LIFState
    decay: np.ndarray
    trace: np.ndarray


def make_reservoir(net: Network, train: TimeSeries, cfg: LIFConfig | None = None, seed: int = 0,
                   input_scale: float = 1.0, bias: tuple = (0.0, 0.4), substeps: int = 1,
                   gain: float = 1.0) -> Reservoir:
    cfg = cfg or LIFConfig()
    rng = np.random.default_rng(seed)
    n_in = train.channels
    w = np.empty((n_in + 1, net.n))
    w[:n_in] = rng.uniform(-input_scale, input_scale, size=(n_in, net.n))
    w[n_in] = rng.uniform(bias[0], bias[1], size=net.n)
    lo = train.values.min(axis=0)
    hi = train.values.max(axis=0)
    return Reservoir(net, cfg, w, lo, hi, substeps, gain)


def _positions(res: Reservoir, selected):
    pos = np.searchsorted(res.net.alive_idx, selected)
    if np.any(pos >= res.net.alive_idx.size) or np.any(res.net.alive_idx[pos] != selected):
        raise ShapeMismatch("readout neurons must be alive in the reservoir network")
    return pos


def _features(run, pos, frame_norm, n_inputs):
    f = run.trace[pos]
    return np.concatenate([f, frame_norm]) if n_inputs else f


def teacher_forced(res: Reservoir, series: TimeSeries, selected, include_input: bool = True,
                   run=None):
    """Drive the reservoir with ``series``; returns (features, spike raster, run)."""
    pos = _positions(res, selected)
    run = run or res.start()
    z = res.normalize(series.values)
    n_in = series.channels if include_input else 0
    feats = np.empty((len(series), pos.size + n_in))
    raster = np.zeros((len(series), res.net.n_alive), dtype=np.int64)
    for t, frame in enumerate(z):
        raster[t] = res.advance(run, frame)
        feats[t] = _features(run, pos, frame, n_in)
    return feats, raster, run


def activity_simulator(res: Reservoir, probe: TimeSeries):
    """``net -> SpikeRecord`` of ``net`` driven by ``probe`` through ``res``'s inputs.

    Per-frame counts are spread over the frame's LIF steps, so spike totals
    per neuron are exact.
    """

    def simulate(net: Network) -> SpikeRecord:
        _, raster, _ = teacher_forced(res.with_net(net), probe, net.alive_idx[:0])
        steps = np.arange(res.substeps)[None, :, None]
        binary = (steps < raster[:, None, :]).reshape(-1, raster.shape[1])
        return SpikeRecord(binary.astype(np.uint8), res.cfg.dt, net.alive_idx)

    return simulate


def fit_readout(res: Reservoir, train: TimeSeries, selected, ridge_lambda: float = 1e-6,
                washout: int = 100, include_input: bool = True) -> Readout:
    """One-step-ahead readout on normalized frames after a washout."""
    feats, _, _ = teacher_forced(res, train, selected, include_input)
    z = res.normalize(train.values)
    X = feats[washout:-1]
    Y = z[washout + 1:]
    n_in = train.channels if include_input else 0
    ro = train_readout(X, Y, ridge_lambda, selected=np.asarray(selected), n_inputs=n_in)
    return ro


def forecast(res: Reservoir, readout: Readout, seed_series: TimeSeries, horizon: int,
             return_spikes: bool = False, clip: float = 0.5):
    """Warm up on ``seed_series`` then run ``horizon`` closed-loop steps.

    Each prediction is fed back as the next input frame, clipped to
    ``[-clip, 1 + clip]`` in normalized units so a diverging loop saturates
    instead of overflowing.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n_out = readout.weights.shape[1]
    if seed_series.channels != n_out or (readout.n_inputs and readout.n_inputs != n_out):
        raise ShapeMismatch(f"readout predicts {n_out} channels, seed has {seed_series.channels}")
    pos = _positions(res, readout.selected_neurons)
    feats, raster0, run = teacher_forced(res, seed_series, readout.selected_neurons,
                                         bool(readout.n_inputs))
    out = np.empty((horizon, n_out))
    raster = np.zeros((horizon, res.net.n_alive), dtype=np.int64)
    if horizon:
        frame = np.clip(readout.predict(feats[-1])[0], -clip, 1.0 + clip)
        for t in range(horizon):
            out[t] = frame
            raster[t] = res.advance(run, frame)
            frame = readout.predict(_features(run, pos, frame, readout.n_inputs))[0]
            frame = np.clip(frame, -clip, 1.0 + clip)
    pred = TimeSeries(res.denormalize(out).reshape(horizon, n_out), seed_series.dt)
    if return_spikes:
        return pred, np.vstack([raster0, raster])
    return pred


# -- metrics ------------------------------------------------------------------


def _values(x):
    return x.values if isinstance(x, TimeSeries) else np.atleast_2d(np.asarray(x, dtype=float))


def rmse_series(forecast, truth, sigma) -> np.ndarray:
    """Per-step normalized RMSE over channels."""
    f = _values(forecast)
    u = _values(truth)
    if f.shape != u.shape:
        raise ShapeMismatch(f"forecast {f.shape} vs truth {u.shape}")
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (f.shape[1],))
    if np.any(s <= 0):
        raise ZeroSigma("sigma must be positive in every channel")
    return np.sqrt(np.mean(((f - u) / s) ** 2, axis=1))


def vpt(rmse, epsilon: float = 0.1) -> int:
    """Number of steps with RMSE strictly below ``epsilon`` (not only the leading run)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return int(np.sum(np.asarray(rmse) < epsilon))


def count_sops(rec, net: Network) -> int:
    """Spikes of each alive presynaptic neuron times its outgoing synapses to alive targets.

    ``rec`` is a :class:`SpikeRecord` (or a raw steps x neurons raster) whose
    columns are the alive neurons of ``net`` in index order.
    """
    raster = rec.raster if isinstance(rec, SpikeRecord) else np.asarray(rec)
    idx = net.alive_idx
    if raster.ndim != 2 or raster.shape[1] != idx.size:
        raise ShapeMismatch(f"raster has {raster.shape[-1]} columns, network has {idx.size} alive")
    fanout = net.adjacency[np.ix_(idx, idx)].sum(axis=1).astype(np.int64)
    spikes = raster.sum(axis=0).astype(np.int64)
    return int(spikes @ fanout)


@dataclass
class EvalReport:
    rmse_series: np.ndarray
    vpt: int
    total_sops: int
    sop_ratio: float
    efficiency: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"rmse_series": [float(x) for x in self.rmse_series], "vpt": int(self.vpt),
             "total_sops": int(self.total_sops), "sop_ratio": float(self.sop_ratio),
             "efficiency": float(self.efficiency)}
        d.update(self.extra)
        return d

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, sort_keys=True)

    def rmse_csv(self, path=None) -> str:
        return rmse_to_csv(self.rmse_series, path)


def rmse_to_csv(rmse, path=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(["step", "rmse"])
    for t, v in enumerate(rmse):
        wr.writerow([t, repr(float(v))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


def report(dense_sops: int, sparse_sops: int, vpt: int, rmse) -> EvalReport:
    if sparse_sops <= 0:
        raise ZeroDivisionError("sparse_sops must be positive")
    return EvalReport(np.asarray(rmse, dtype=float), int(vpt), int(sparse_sops),
                      dense_sops / sparse_sops, vpt / sparse_sops)


# -- end-to-end ---------------------------------------------------------------


@dataclass
class ForecastTask:
    """Teacher-forced training, then closed-loop forecasts over test windows.

    Window ``w`` warms up on ``test[w*stride : w*stride + warmup]`` and is
    scored over the next ``horizon`` rows of ``truth`` (``test`` if unset),
    so noisy inputs can be scored against a clean target.
    """

    train: TimeSeries
    test: TimeSeries
    truth: TimeSeries | None = None
    warmup: int = 200
    horizon: int = 100
    n_windows: int = 1
    ridge_lambda: float = 1e-6
    readout_fraction: float = 0.1
    include_input: bool = True
    washout: int = 100
    epsilon: float = 0.1

    @property
    def sigma(self):
        return self.train.values.std(axis=0)

    def windows(self):
        stride = self.warmup + self.horizon
        if self.n_windows * stride > len(self.test):
            raise ValueError("test split too short for the requested windows")
        truth = self.test if self.truth is None else self.truth
        for w in range(self.n_windows):
            a = w * stride
            yield self.test.slice(a, a + self.warmup), truth.slice(a + self.warmup, a + stride)


def _run_windows(res: Reservoir, task: ForecastTask):
    sel = select_readout_neurons(res.net, task.readout_fraction)
    ro = fit_readout(res, task.train, sel, task.ridge_lambda, task.washout, task.include_input)
    errs, sops = [], 0
    for seed, truth in task.windows():
        pred, raster = forecast(res, ro, seed, len(truth), return_spikes=True)
        errs.append(rmse_series(pred, truth, task.sigma))
        sops += count_sops(raster, res.net)
    return ro, np.mean(errs, axis=0), sops


def evaluate_network(res: Reservoir, task: ForecastTask, dense: Reservoir | None = None,
                     dense_sops: int | None = None) -> EvalReport:
    """Train a readout on ``res`` and score it over the task's test windows.

    The RMSE series is averaged over windows and VPT is taken on that mean.
    SOPs are summed over warm-up and forecast steps of every window; the
    dense count comes from ``dense_sops`` or from running ``dense``.
    """
    ro, err, sops = _run_windows(res, task)
    if dense_sops is None:
        dense_sops = sops if dense is None else _run_windows(dense, task)[2]
    rep = report(dense_sops, max(sops, 1), vpt(err, task.epsilon), err)
    rep.extra["train_residual"] = ro.residual
    rep.extra["mean_rmse"] = float(np.mean(err)) if err.size else 0.0
    return rep
