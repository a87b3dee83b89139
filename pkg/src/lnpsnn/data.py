"""Chaotic benchmark series, chronological splits, SNR noise and CSV ingestion."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class BlowUp(ArithmeticError):
    def __init__(self, step):
        super().__init__(f"integration became non-finite at step {step}")
        self.step = step


class SpecOverflow(ValueError):
    pass


class ZeroSignalPower(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, msg, row=None, col=None):
        super().__init__(msg)
        self.row = row
        self.col = col


@dataclass(frozen=True, eq=False)
class TimeSeries:
    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("values must be steps x channels with >= 1 channel")
        if not np.all(np.isfinite(v)):
            raise ValueError("time series contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start, stop):
        return TimeSeries(self.values[start:stop], self.dt)

    def to_csv(self, path=None, header=None) -> str:
        header = header or [f"c{i}" for i in range(self.channels)]
        lines = [",".join(header)]
        lines += [",".join(repr(float(x)) for x in row) for row in self.values]
        text = "\r\n".join(lines) + "\r\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int
    n_discard: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test, self.n_discard) < 0:
            raise ValueError("split counts must be non-negative")

    @property
    def total(self):
        return self.n_discard + self.n_train + self.n_val + self.n_test


LORENZ_SPLIT = SplitSpec(11250, 3750, 5000, 0)
ROSSLER_SPLIT = SplitSpec(3000, 1000, 1000, 0)


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f, x0, n: int, dt: float) -> np.ndarray:
    """Fixed-step RK4; row 0 is ``x0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.array(x0, dtype=float)
    out = np.empty((n, x.size))
    out[0] = x
    # overflow is reported as BlowUp, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n):
            x = rk4_step(f, x, dt)
            if not np.all(np.isfinite(x)):
                raise BlowUp(i)
            out[i] = x
    return out


def lorenz_rhs(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    def f(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])
    return f


def rossler_rhs(a=0.15, b=0.2, c=10.0):
    def f(s):
        x, y, z = s
        return np.array([-y - z, x + a * y, b + z * (x - c)])
    return f


def lorenz63(n: int = 20000, x0=(12.0, 2.0, 9.0), dt: float = 0.01, sigma: float = 10.0,
             rho: float = 28.0, beta: float = 8.0 / 3.0) -> TimeSeries:
    return TimeSeries(integrate(lorenz_rhs(sigma, rho, beta), x0, n, dt), dt)


def rossler(n: int = 12700, x0=(1.0, 1.0, 1.0), dt: float = 0.03, a: float = 0.15,
            b: float = 0.2, c: float = 10.0, discard: int = 7700) -> TimeSeries:
    """Rossler series of ``n`` rows after dropping the first ``discard`` steps."""
    if discard < 0:
        raise ValueError("discard must be >= 0")
    vals = integrate(rossler_rhs(a, b, c), x0, n + discard, dt)
    return TimeSeries(vals[discard:], dt)


def split(series: TimeSeries, spec: SplitSpec):
    """Contiguous chronological (train, val, test) after ``n_discard`` rows."""
    if spec.total > len(series):
        raise SpecOverflow(f"split needs {spec.total} rows, series has {len(series)}")
    a = spec.n_discard
    b = a + spec.n_train
    c = b + spec.n_val
    d = c + spec.n_test
    return series.slice(a, b), series.slice(b, c), series.slice(c, d)


def add_noise_snr(series: TimeSeries, snr_db: float, seed: int = 0) -> TimeSeries:
    """Add white Gaussian noise at ``snr_db`` per channel; ``inf`` returns the input."""
    if math.isinf(snr_db) and snr_db > 0:
        return series
    x = series.values
    power = np.mean(x * x, axis=0)
    if np.any(power == 0):
        raise ZeroSignalPower("a channel has zero signal power")
    noise_var = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noisy = x + rng.standard_normal(x.shape) * np.sqrt(noise_var)
    return TimeSeries(noisy, series.dt)


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def load_csv(path, dt: float = 1.0) -> TimeSeries:
    """Numeric rectangular CSV; a non-numeric first row is treated as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    start = 0 if all(_is_number(c) for c in rows[0]) else 1
    if start == len(rows):
        raise ParseError(f"{path}: no data rows")
    width = len(rows[start])
    data = np.empty((len(rows) - start, width))
    for i, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"{path}: row {i} has {len(row)} fields, expected {width}", row=i)
        for j, tok in enumerate(row):
            try:
                data[i - start - 1, j] = float(tok)
            except ValueError:
                raise ParseError(f"{path}: row {i}, column {j + 1}: not a number: {tok!r}",
                                 row=i, col=j + 1) from None
    return TimeSeries(data, dt)


def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


GENERATORS = {"lorenz63": lorenz63, "rossler": rossler}


def generate(name: str, **params) -> TimeSeries:
    if name not in GENERATORS:
        raise ValueError(f"unknown dataset {name!r}")
    return GENERATORS[name](**params)
