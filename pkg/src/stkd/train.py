"""Adam optimization, teacher pre-training, student distillation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Normalizer, WindowedDataset
from .distill import (DistillConfig, adaptive_weights, prediction_loss,
                      spatial_kd_loss, temporal_kd_loss, total_loss)
from .errors import ContractError, DataError, NumericError
from .graph import NormalizedAdjacency
from .models import StudentModel, TeacherModel
from . import tensor as T
from .tensor import Tape, Tensor, backward

_SHUFFLE_SEED_TAG = 0x62


class DivergenceError(NumericError):
    """Training hit a non-finite loss; carries the history so far."""

    def __init__(self, msg: str, history: list[dict]):
        super().__init__(msg)
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    patience: int = 10
    seed: int = 42
    grad_clip: float | None = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.patience < 0:
            raise ContractError(f"invalid train config: {self}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ContractError(f"grad_clip must be positive or None, got {self.grad_clip}")


@dataclass
class AdamState:
    """First/second moment buffers mirroring the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


class Adam:
    """Bias-corrected Adam with optional global-norm gradient clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.state = AdamState(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def step(self) -> None:
        grads = {}
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {k}; aborting step")
            grads[k] = g
        if self.grad_clip is not None:
            gnorm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if gnorm > self.grad_clip:
                scale = self.grad_clip / gnorm
                grads = {k: g * scale for k, g in grads.items()}
        self.state.t += 1
        t = self.state.t
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = grads[k]
            m = self.state.m[k] = self.beta1 * self.state.m[k] + (1.0 - self.beta1) * g
            v = self.state.v[k] = self.beta2 * self.state.v[k] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, _SHUFFLE_SEED_TAG, epoch])))


def _window_tensor(ds: WindowedDataset, w: int) -> Tensor:
    return Tensor(ds.inputs[w][:, :, None])


def predict_teacher(model: TeacherModel, adj: NormalizedAdjacency | None,
                    ds: WindowedDataset, indices) -> np.ndarray:
    """Stacked [len(indices), T_p, n] predictions, no tape."""
    out = np.empty((len(indices), ds.horizon, ds.n_nodes))
    for row, w in enumerate(indices):
        pred, _ = model.forward(adj, _window_tensor(ds, w), ds.target_start_step(w))
        out[row] = pred.data
    return out


def predict_student(model: StudentModel, ds: WindowedDataset, indices) -> np.ndarray:
    out = np.empty((len(indices), ds.horizon, ds.n_nodes))
    for row, w in enumerate(indices):
        pred, _, _ = model.forward(_window_tensor(ds, w), ds.target_start_step(w))
        out[row] = pred.data
    return out


def _val_mae(pred_norm: np.ndarray, target_norm: np.ndarray, nz: Normalizer) -> float:
    return float(np.abs(nz.invert(pred_norm) - nz.invert(target_norm)).mean())


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = snap[k].copy()


def _fit(model, forward_loss, predict_val, cfg: TrainConfig,
         n_train: int, component_names: tuple[str, ...]) -> list[dict]:
    """Shared epoch loop: seeded shuffling, batching, early stop on val MAE.

    ``forward_loss(w)`` returns (scalar loss tensor, component dict) for one
    training window; ``predict_val()`` returns the current val MAE. Leaves
    the model at its best-validation parameters.
    """
    opt = Adam(model.params, lr=cfg.lr, grad_clip=cfg.grad_clip)
    history: list[dict] = []
    best_val = math.inf
    best_params = _snapshot(model.params)
    bad_epochs = 0
    with threadpool_limits(limits=1):
        for epoch in range(cfg.epochs):
            order = _shuffle_rng(cfg.seed, epoch).permutation(n_train)
            comp_sums = {name: 0.0 for name in component_names}
            loss_sum = 0.0
            for start in range(0, n_train, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                opt.zero_grad()
                with Tape() as tape:
                    total = None
                    for w in batch:
                        loss_w, comps = forward_loss(int(w))
                        total = loss_w if total is None else T.add(total, loss_w)
                        for name, val in comps.items():
                            comp_sums[name] += val
                    batch_loss = T.mul_scalar(total, 1.0 / len(batch))
                value = batch_loss.item()
                if not math.isfinite(value):
                    _restore(model.params, best_params)
                    raise DivergenceError(
                        f"non-finite training loss at epoch {epoch}", history)
                loss_sum += value * len(batch)
                backward(batch_loss, tape)
                opt.step()
            val_mae = predict_val()
            row = {"epoch": epoch, "train_loss": loss_sum / n_train, "val_mae": val_mae}
            row.update({name: comp_sums[name] / n_train for name in component_names})
            history.append(row)
            if val_mae < best_val:
                best_val = val_mae
                best_params = _snapshot(model.params)
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs > cfg.patience:
                    break
    _restore(model.params, best_params)
    return history


def train_teacher(model: TeacherModel, adj: NormalizedAdjacency,
                  ds: WindowedDataset, nz: Normalizer,
                  cfg: TrainConfig) -> list[dict]:
    """Supervised MAE training on the train split; returns epoch history."""
    if ds.n_train < 1 or ds.n_val < 1:
        raise DataError("teacher training needs non-empty train and val splits")
    val_idx = list(ds.val_indices)
    val_targets = ds.targets[ds.n_train:ds.n_train + ds.n_val]

    def forward_loss(w: int):
        pred, _ = model.forward(adj, _window_tensor(ds, w), ds.target_start_step(w))
        loss = prediction_loss(pred, Tensor(ds.targets[w]))
        return loss, {"pred_loss": loss.item()}

    def predict_val():
        return _val_mae(predict_teacher(model, adj, ds, val_idx), val_targets, nz)

    return _fit(model, forward_loss, predict_val, cfg, ds.n_train, ("pred_loss",))


@dataclass
class KDTargets:
    """Frozen teacher signals for every training window."""

    preds: np.ndarray                       # [n_train, T_p, n]
    reps: np.ndarray                        # [n_train, n, h_T]
    weights: np.ndarray                     # [n]
    teacher_val_error: np.ndarray = field(repr=False, default=None)  # [n]


def teacher_node_errors(model: TeacherModel, adj: NormalizedAdjacency,
                        ds: WindowedDataset, nz: Normalizer) -> np.ndarray:
    """Per-node MAE of the teacher on the validation split, original units."""
    preds = predict_teacher(model, adj, ds, list(ds.val_indices))
    targets = ds.targets[ds.n_train:ds.n_train + ds.n_val]
    return np.abs(nz.invert(preds) - nz.invert(targets)).mean(axis=(0, 1))


def build_kd_targets(teacher: TeacherModel, adj: NormalizedAdjacency,
                     ds: WindowedDataset, nz: Normalizer,
                     dcfg: DistillConfig) -> KDTargets:
    """One frozen-teacher pass over the train split: soft targets + weights."""
    errors = teacher_node_errors(teacher, adj, ds, nz)
    w = adaptive_weights(errors, mode=dcfg.adaptive_mode, rho=dcfg.rho)
    layer = dcfg.teacher_rep_layer if dcfg.teacher_rep_layer >= 0 \
        else teacher.cfg.L + dcfg.teacher_rep_layer
    if not (0 <= layer < teacher.cfg.L):
        raise ContractError(
            f"teacher_rep_layer {dcfg.teacher_rep_layer} out of range for L={teacher.cfg.L}")
    preds = np.empty((ds.n_train, ds.horizon, ds.n_nodes))
    reps = np.empty((ds.n_train, ds.n_nodes, teacher.cfg.h_T))
    with threadpool_limits(limits=1):
        for w_idx in range(ds.n_train):
            pred, rep_list = teacher.forward(adj, _window_tensor(ds, w_idx),
                                             ds.target_start_step(w_idx))
            preds[w_idx] = pred.data
            reps[w_idx] = rep_list[layer].data
    return KDTargets(preds=preds, reps=reps, weights=w.w, teacher_val_error=errors)


def _fit_student(model: StudentModel, ds: WindowedDataset, nz: Normalizer,
                 cfg: TrainConfig, kd: KDTargets | None,
                 dcfg: DistillConfig | None) -> list[dict]:
    """Student loop; with kd=None no distillation term is ever constructed."""
    if ds.n_train < 1 or ds.n_val < 1:
        raise DataError("student training needs non-empty train and val splits")
    val_idx = list(ds.val_indices)
    val_targets = ds.targets[ds.n_train:ds.n_train + ds.n_val]
    components = ("pred_loss", "spatial_loss", "temporal_loss", "total_loss")

    def forward_loss(w: int):
        pred, _, projected = model.forward(_window_tensor(ds, w), ds.target_start_step(w))
        p_loss = prediction_loss(pred, Tensor(ds.targets[w]))
        if kd is None:
            return p_loss, {"pred_loss": p_loss.item(), "spatial_loss": 0.0,
                            "temporal_loss": 0.0, "total_loss": p_loss.item()}
        s_loss = spatial_kd_loss(projected, Tensor(kd.reps[w]), kd.weights)
        t_loss = temporal_kd_loss(pred, Tensor(kd.preds[w]), dcfg.tau, kd.weights)
        loss = total_loss(p_loss, s_loss, t_loss, dcfg)
        return loss, {"pred_loss": p_loss.item(), "spatial_loss": s_loss.item(),
                      "temporal_loss": t_loss.item(), "total_loss": loss.item()}

    def predict_val():
        return _val_mae(predict_student(model, ds, val_idx), val_targets, nz)

    return _fit(model, forward_loss, predict_val, cfg, ds.n_train, components)


def train_student(model: StudentModel, ds: WindowedDataset, nz: Normalizer,
                  cfg: TrainConfig) -> list[dict]:
    """Plain supervised student training; contains no distillation code path."""
    return _fit_student(model, ds, nz, cfg, kd=None, dcfg=None)


def distill_student(model: StudentModel, teacher: TeacherModel,
                    adj: NormalizedAdjacency, ds: WindowedDataset, nz: Normalizer,
                    cfg: TrainConfig, dcfg: DistillConfig) -> list[dict]:
    """Train the student against ground truth plus frozen-teacher signals.

    The teacher is evaluated once for soft targets and adaptive weights and
    asserted bitwise unchanged afterwards. With both lambdas zero this
    reduces exactly to ``train_student``.
    """
    before = {k: p.data.tobytes() for k, p in teacher.params.items()}
    use_kd = dcfg.lambda_spatial > 0.0 or dcfg.lambda_temporal > 0.0
    kd = build_kd_targets(teacher, adj, ds, nz, dcfg) if use_kd else None
    history = _fit_student(model, ds, nz, cfg, kd=kd, dcfg=dcfg if use_kd else None)
    after = {k: p.data.tobytes() for k, p in teacher.params.items()}
    if before != after:
        raise ContractError("teacher parameters changed during distillation")
    return history
