"""Forecast accuracy metrics, latency benchmarking, over-smoothing study."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Normalizer
from .distill import mad_metric
from .errors import DimensionError, ParameterError
from .graph import Graph, NormalizedAdjacency, symmetric_normalize
from .models import StudentModel, TeacherConfig, TeacherModel
from .tensor import Tensor

MAPE_MASK_THRESHOLD = 1e-3  # original units; near-zero flow is excluded

_STUDY_SEED_TAG = 0x6D


@dataclass(frozen=True)
class StepMetrics:
    mae: float
    rmse: float
    mape: float | None


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    mape: float | None
    per_step: tuple[StepMetrics, ...]

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "mape": self.mape,
            "per_step": [{"mae": s.mae, "rmse": s.rmse, "mape": s.mape}
                         for s in self.per_step],
        }


def _metrics_on(diff: np.ndarray, target: np.ndarray) -> StepMetrics:
    mae = float(np.abs(diff).mean())
    rmse = float(np.sqrt((diff * diff).mean()))
    mask = np.abs(target) >= MAPE_MASK_THRESHOLD
    if mask.any():
        mape = float((np.abs(diff)[mask] / np.abs(target)[mask]).mean())
    else:
        mape = None
    return StepMetrics(mae=mae, rmse=rmse, mape=mape)


def compute_metrics(pred: np.ndarray, target: np.ndarray,
                    normalizer: Normalizer | None = None) -> MetricsReport:
    """MAE/RMSE/MAPE in original units, plus a per-horizon-step breakdown.

    Accepts [k], [T_p, n] or [n_windows, T_p, n] arrays; when a normalizer
    is given both arrays are inverse-transformed first.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"compute_metrics: shapes {pred.shape} vs {target.shape}")
    if normalizer is not None:
        pred = normalizer.invert(pred)
        target = normalizer.invert(target)
    diff = pred - target
    overall = _metrics_on(diff, target)
    if pred.ndim <= 1:
        steps = [overall]
    else:
        axis = 0 if pred.ndim == 2 else 1
        steps = [_metrics_on(np.take(diff, k, axis=axis), np.take(target, k, axis=axis))
                 for k in range(pred.shape[axis])]
    return MetricsReport(mae=overall.mae, rmse=overall.rmse, mape=overall.mape,
                         per_step=tuple(steps))


@dataclass(frozen=True)
class LatencyReport:
    teacher_kind: str
    student_kind: str
    n_nodes: int
    reps: int
    warmup: int
    teacher_ns: tuple[int, ...]
    student_ns: tuple[int, ...]
    teacher_median_ns: float
    teacher_p10_ns: float
    teacher_p90_ns: float
    student_median_ns: float
    student_p10_ns: float
    student_p90_ns: float
    speedup: float

    def as_dict(self) -> dict:
        return {
            "teacher_kind": self.teacher_kind,
            "student_kind": self.student_kind,
            "n_nodes": self.n_nodes,
            "reps": self.reps,
            "warmup": self.warmup,
            "teacher_median_ns": self.teacher_median_ns,
            "teacher_p10_ns": self.teacher_p10_ns,
            "teacher_p90_ns": self.teacher_p90_ns,
            "student_median_ns": self.student_median_ns,
            "student_p10_ns": self.student_p10_ns,
            "student_p90_ns": self.student_p90_ns,
            "speedup": self.speedup,
            "teacher_ns": list(self.teacher_ns),
            "student_ns": list(self.student_ns),
        }


def bench_latency(teacher, student, adj: NormalizedAdjacency | None,
                  window: Tensor, reps: int, warmup: int,
                  time_index: int = 0) -> LatencyReport:
    """Single-window inference latency, interleaved to cancel drift.

    Both callables run on the same window; the reported speedup is
    teacher_median / student_median. Either slot may hold either model kind
    (self-comparison is the sanity check). Timed region runs on one BLAS
    thread, wall-clocked with the monotonic ns counter.
    """
    if reps < 30:
        raise ParameterError(f"need at least 30 reps for stable medians, got {reps}")
    if warmup < 0:
        raise ParameterError(f"warmup must be >= 0, got {warmup}")

    def run(model):
        if isinstance(model, TeacherModel):
            model.forward(adj, window, time_index)
        else:
            model.forward(window, time_index)

    teacher_ns: list[int] = []
    student_ns: list[int] = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            run(teacher)
            run(student)
        for _ in range(reps):
            t0 = time.perf_counter_ns()
            run(teacher)
            t1 = time.perf_counter_ns()
            run(student)
            t2 = time.perf_counter_ns()
            teacher_ns.append(t1 - t0)
            student_ns.append(t2 - t1)
    t_arr = np.asarray(teacher_ns, dtype=np.float64)
    s_arr = np.asarray(student_ns, dtype=np.float64)
    t_med, s_med = float(np.median(t_arr)), float(np.median(s_arr))
    return LatencyReport(
        teacher_kind=teacher.kind, student_kind=student.kind,
        n_nodes=window.shape[1], reps=reps, warmup=warmup,
        teacher_ns=tuple(teacher_ns), student_ns=tuple(student_ns),
        teacher_median_ns=t_med,
        teacher_p10_ns=float(np.percentile(t_arr, 10)),
        teacher_p90_ns=float(np.percentile(t_arr, 90)),
        student_median_ns=s_med,
        student_p10_ns=float(np.percentile(s_arr, 10)),
        student_p90_ns=float(np.percentile(s_arr, 90)),
        speedup=t_med / s_med,
    )


def oversmoothing_study(depths: list[int], graph: Graph, seed: int,
                        h_T: int = 32, K_t: int = 3) -> list[tuple[int, float]]:
    """MAD of final-block node representations for untrained depth-L teachers.

    Depth 0 reports the MAD of the raw per-node input histories (no mixing
    at all). One fixed seeded window is shared across depths, sized so the
    deepest stack still has at least one step left after its valid
    convolutions. Untrained networks isolate the architectural smoothing
    effect from anything training could compensate.
    """
    if not depths:
        raise ParameterError("depths must be non-empty")
    if any(d < 0 for d in depths) or list(depths) != sorted(depths):
        raise ParameterError(f"depths must be non-negative and ascending, got {depths}")
    max_depth = max(max(depths), 1)
    t_len = max_depth * (K_t - 1) + 4
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _STUDY_SEED_TAG])))
    window_arr = rng.standard_normal((t_len, graph.n_nodes, 1))
    window = Tensor(window_arr)
    adj = symmetric_normalize(graph)
    rows: list[tuple[int, float]] = []
    for depth in depths:
        if depth == 0:
            mad = mad_metric(window_arr[:, :, 0].T)
        else:
            model = TeacherModel.init(TeacherConfig(L=depth, h_T=h_T, K_t=K_t, T_p=1), seed)
            _, reps = model.forward(adj, window)
            mad = mad_metric(reps[-1])
        rows.append((depth, mad))
    return rows


def save_oversmoothing_csv(rows: list[tuple[int, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth", "mad"])
        for depth, mad in rows:
            w.writerow([depth, repr(mad)])
