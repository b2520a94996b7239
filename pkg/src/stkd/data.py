"""Synthetic traffic series, CSV ingestion, windowing, normalization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, FormatError, ParameterError
from .graph import Graph, symmetric_normalize

_SERIES_SEED_TAG = 0x73

DEFAULT_ALPHA = 0.85
DEFAULT_BETA_RANGE = (0.5, 1.5)
DEFAULT_GAMMA = 0.3


@dataclass(frozen=True)
class TrafficSeries:
    """Node x time flow readings at a fixed interval.

    values[t, i] is the flow (vehicles/interval) at node i, step t.
    ``fill_count`` records how many missing cells ingestion repaired.
    """

    values: np.ndarray  # [n_steps, n_nodes] f64
    step_minutes: int
    fill_count: int = 0

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-D, got shape {self.values.shape}")
        if self.step_minutes <= 0 or (24 * 60) % self.step_minutes != 0:
            raise ParameterError(f"step_minutes must divide a day, got {self.step_minutes}")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def steps_per_day(self) -> int:
        return (24 * 60) // self.step_minutes


def generate_synthetic(g: Graph, n_steps: int, step_minutes: int, seed: int,
                       alpha: float = DEFAULT_ALPHA,
                       beta_range: tuple[float, float] = DEFAULT_BETA_RANGE,
                       gamma: float = DEFAULT_GAMMA,
                       x0: np.ndarray | None = None) -> TrafficSeries:
    """Diffusion-plus-diurnal process on the graph, clipped at zero.

    x_{t+1} = alpha * A_hat x_t + beta_i * sin(2 pi (t + phi_i) / steps_per_day)
              + gamma * eps_t, elementwise max(., 0) at every step.
    Deterministic per seed; per-node amplitude beta_i and phase phi_i are
    drawn once from the same seeded stream. ``x0`` overrides the seeded
    initial state.
    """
    if n_steps <= 0:
        raise ParameterError(f"n_steps must be positive, got {n_steps}")
    if step_minutes <= 0 or (24 * 60) % step_minutes != 0:
        raise ParameterError(f"step_minutes must divide a day, got {step_minutes}")
    n = g.n_nodes
    spd = (24 * 60) // step_minutes
    adj = symmetric_normalize(g)._csr
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _SERIES_SEED_TAG])))
    beta = rng.uniform(beta_range[0], beta_range[1], size=n)
    phi = rng.uniform(0.0, spd, size=n)
    x = rng.uniform(0.0, 1.0, size=n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (n,):
        raise ParameterError(f"x0 must have shape ({n},), got {x.shape}")
    out = np.empty((n_steps, n), dtype=np.float64)
    out[0] = x
    for t in range(n_steps - 1):
        diurnal = np.sin(2.0 * np.pi * (t + phi) / spd)
        eps = rng.standard_normal(n) if gamma != 0.0 else 0.0
        x = alpha * (adj @ x) + beta * diurnal + gamma * eps
        x = np.maximum(x, 0.0)
        out[t + 1] = x
    return TrafficSeries(values=out, step_minutes=step_minutes)


def save_readings_csv(series: TrafficSeries, path) -> None:
    """Header ``timestamp,node_0,...``; timestamps are minutes since start."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"node_{i}" for i in range(series.n_nodes)])
        for t in range(series.n_steps):
            w.writerow([t * series.step_minutes] + [repr(float(v)) for v in series.values[t]])


def load_readings_csv(path) -> TrafficSeries:
    """Parse a readings CSV; forward-fill NaNs (then zero), count the fills."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip() != "timestamp":
            raise FormatError(f"{path}: expected header 'timestamp,node_0,...'")
        n = len(header) - 1
        expected = [f"node_{i}" for i in range(n)]
        if [h.strip() for h in header[1:]] != expected:
            raise FormatError(f"{path}: node columns must be named node_0..node_{n - 1}")
        timestamps: list[float] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 1:
                raise FormatError(f"{path}: line {lineno}: expected {n + 1} fields, got {len(row)}")
            try:
                ts = float(row[0])
                vals = [float(v) if v.strip() not in ("", "nan", "NaN") else math.nan
                        for v in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            timestamps.append(ts)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 rows, got {len(rows)}")
    ts = np.asarray(timestamps)
    if not np.all(np.diff(ts) > 0):
        raise DataError(f"{path}: timestamps must be strictly increasing")
    step = ts[1] - ts[0]
    step_minutes = int(round(step))
    values = np.asarray(rows, dtype=np.float64)
    fill_count = int(np.isnan(values).sum())
    if fill_count:
        for col in range(values.shape[1]):
            v = values[:, col]
            last = 0.0
            for t in range(v.size):
                if np.isnan(v[t]):
                    v[t] = last
                else:
                    last = v[t]
    return TrafficSeries(values=values, step_minutes=step_minutes, fill_count=fill_count)


@dataclass(frozen=True)
class WindowedDataset:
    """Stride-1 supervised windows with contiguous train/val/test index ranges.

    Window w: inputs cover steps [w, w+T_h), targets [w+T_h, w+T_h+T_p).
    Split boundaries sit at floors of the requested fractions of windows;
    windows near a boundary share raw steps (the usual forecasting setup)
    but every window belongs to exactly one split.
    """

    inputs: np.ndarray   # [n_windows, T_h, n_nodes]
    targets: np.ndarray  # [n_windows, T_p, n_nodes]
    history: int
    horizon: int
    n_train: int
    n_val: int
    step_minutes: int

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.inputs.shape[2]

    @property
    def n_test(self) -> int:
        return self.n_windows - self.n_train - self.n_val

    @property
    def steps_per_day(self) -> int:
        return (24 * 60) // self.step_minutes

    @property
    def train_indices(self) -> range:
        return range(0, self.n_train)

    @property
    def val_indices(self) -> range:
        return range(self.n_train, self.n_train + self.n_val)

    @property
    def test_indices(self) -> range:
        return range(self.n_train + self.n_val, self.n_windows)

    def target_start_step(self, w: int) -> int:
        """Absolute series step of window w's first target entry."""
        return w + self.history


def make_windows(series: TrafficSeries, history: int, horizon: int,
                 splits: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> WindowedDataset:
    if history < 1 or horizon < 1:
        raise ParameterError(f"history and horizon must be >= 1, got {history}, {horizon}")
    if len(splits) != 3 or any(s < 0 for s in splits) or abs(sum(splits) - 1.0) > 1e-9:
        raise ParameterError(f"splits must be three non-negative fractions summing to 1, got {splits}")
    n_windows = series.n_steps - history - horizon + 1
    if n_windows < 1:
        raise DataError(
            f"series too short: {series.n_steps} steps cannot fit history {history} + horizon {horizon}")
    v = series.values
    inputs = np.stack([v[w:w + history] for w in range(n_windows)])
    targets = np.stack([v[w + history:w + history + horizon] for w in range(n_windows)])
    n_train = int(math.floor(splits[0] * n_windows))
    n_val = int(math.floor(splits[1] * n_windows))
    return WindowedDataset(inputs=inputs, targets=targets, history=history, horizon=horizon,
                           n_train=n_train, n_val=n_val, step_minutes=series.step_minutes)


@dataclass(frozen=True)
class Normalizer:
    """Z-score transform fitted on the train split only."""

    mean: float
    std: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def zscore_fit_apply(ds: WindowedDataset) -> tuple[Normalizer, WindowedDataset]:
    """Fit mean/std on train inputs+targets; return the transformed dataset."""
    if ds.n_train < 1:
        raise DataError("train split is empty")
    train_vals = np.concatenate([ds.inputs[:ds.n_train].ravel(),
                                 ds.targets[:ds.n_train].ravel()])
    mean = float(train_vals.mean())
    std = float(train_vals.std())
    if std <= 0.0:
        raise DataError("train split has zero variance; cannot z-score")
    nz = Normalizer(mean=mean, std=std)
    transformed = replace(ds, inputs=nz.apply(ds.inputs), targets=nz.apply(ds.targets))
    return nz, transformed
