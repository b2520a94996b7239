"""Graph-aware teacher and graph-free student forecasters.

The teacher stacks gated temporal convolutions with normalized-adjacency
message passing; the student is a per-node MLP over its own history, a
learned node embedding, and time-of-day features. The student also carries
a linear projection from its hidden width to the teacher's, used only by
feature-level distillation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .graph import NormalizedAdjacency, spmm
from . import tensor as T
from .tensor import Tensor

_MAGIC = b"STKD"
_VERSION = 1
_KIND_TEACHER = 1
_KIND_STUDENT = 2

_INIT_SEED_TAG = 0x70
_HEAD_BLOCK_ID = 10_000


_IN_CHANNELS = 3  # flow + sin/cos time of day


@dataclass(frozen=True)
class TeacherConfig:
    L: int = 2          # number of ST blocks
    h_T: int = 40       # hidden width
    K_t: int = 3        # temporal kernel size
    T_p: int = 3        # forecast horizon
    steps_per_day: int = 288

    def __post_init__(self):
        if self.L < 1 or self.h_T < 1 or self.K_t < 1 or self.T_p < 1:
            raise ParameterError(f"teacher config fields must be >= 1: {self}")
        if self.steps_per_day < 1:
            raise ParameterError(f"steps_per_day must be >= 1, got {self.steps_per_day}")

    def min_history(self) -> int:
        """Shortest window the valid temporal convolutions can consume."""
        return self.L * (self.K_t - 1) + 1


@dataclass(frozen=True)
class StudentConfig:
    n_nodes: int
    T_h: int = 12
    T_p: int = 3
    h_S: int = 20       # hidden width
    d_e: int = 4        # node-embedding dim (0 disables the table)
    n_layers: int = 2
    h_T: int = 40       # teacher width the projection maps onto
    steps_per_day: int = 288

    def __post_init__(self):
        if self.n_nodes < 1 or self.T_h < 1 or self.T_p < 1 or self.h_S < 1:
            raise ParameterError(f"student config fields must be >= 1: {self}")
        if self.d_e < 0 or self.n_layers < 1 or self.h_T < 1 or self.steps_per_day < 1:
            raise ParameterError(f"invalid student config: {self}")

    def input_dim(self) -> int:
        return self.T_h + self.d_e + 2  # history + embedding + sin/cos time


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *tags])))


class TeacherModel:
    """L blocks of [gated temporal conv -> graph conv -> relu] plus a head."""

    kind = "teacher"

    def __init__(self, cfg: TeacherConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: TeacherConfig, seed: int) -> "TeacherModel":
        """Glorot-uniform weights, zero biases.

        Each block draws from its own seeded stream so different depths
        share block weights where shapes allow (used by the depth study).
        """
        params: dict[str, Tensor] = {}
        h, k = cfg.h_T, cfg.K_t
        for blk in range(cfg.L):
            f_in = _IN_CHANNELS if blk == 0 else h
            rng = _rng(seed, _INIT_SEED_TAG, blk)
            for bank in ("a", "b"):
                params[f"block{blk}.conv_{bank}.W"] = Tensor(
                    _glorot(rng, (k, f_in, h), k * f_in, h), requires_grad=True)
                params[f"block{blk}.conv_{bank}.b"] = Tensor(np.zeros(h), requires_grad=True)
            params[f"block{blk}.graph.W"] = Tensor(
                _glorot(rng, (h, h), h, h), requires_grad=True)
            params[f"block{blk}.graph.b"] = Tensor(np.zeros(h), requires_grad=True)
        rng = _rng(seed, _INIT_SEED_TAG, _HEAD_BLOCK_ID)
        # the head reads every block's last-time-step state (skip connections),
        # so shallow, lightly-mixed features stay available next to deep ones
        params["head.W"] = Tensor(
            _glorot(rng, (cfg.L * h, cfg.T_p), cfg.L * h, cfg.T_p), requires_grad=True)
        params["head.b"] = Tensor(np.zeros(cfg.T_p), requires_grad=True)
        return cls(cfg, params)

    def forward(self, adj: NormalizedAdjacency | None, window: Tensor,
                time_index: int = 0) -> tuple[Tensor, list[Tensor]]:
        """window [T_h, n, 1] -> (pred [T_p, n], per-block node reps [n, h]).

        ``time_index`` is the series step of the first target entry; the
        forward appends sin/cos time-of-day channels so the node-agnostic
        network sees the same clock the student does. ``adj=None`` skips
        message passing entirely (identity mixing), which turns the teacher
        into a pure temporal model.
        """
        cfg = self.cfg
        if window.rank != 3 or window.shape[2] != 1:
            raise DimensionError(f"teacher window must be [T, n, 1], got {window.shape}")
        t_len, n, _ = window.shape
        if t_len < cfg.min_history():
            raise DimensionError(
                f"window length {t_len} too short for L={cfg.L}, K_t={cfg.K_t} "
                f"(needs >= {cfg.min_history()})")
        if adj is not None and adj.n != n:
            raise DimensionError(f"adjacency is {adj.n} nodes but window has {n}")
        if not isinstance(time_index, (int, np.integer)) or time_index < 0:
            raise ParameterError(f"time_index must be a non-negative step, got {time_index}")

        # the window is data, never a differentiation target, so the clock
        # channels can be appended outside the tape
        steps = int(time_index) - t_len + np.arange(t_len)
        tod = 2.0 * np.pi * (steps % cfg.steps_per_day) / cfg.steps_per_day
        combined = np.empty((t_len, n, _IN_CHANNELS))
        combined[:, :, 0] = window.data[:, :, 0]
        combined[:, :, 1] = np.sin(tod)[:, None]
        combined[:, :, 2] = np.cos(tod)[:, None]

        x = Tensor(combined)
        reps: list[Tensor] = []
        for blk in range(cfg.L):
            f_in = _IN_CHANNELS if blk == 0 else cfg.h_T
            t_in = x.shape[0]
            t_out = t_in - cfg.K_t + 1
            rows = t_out * n
            # im2col over time: one wide matmul per kernel bank
            patches = T.hstack([
                T.reshape(T.slice0_range(x, k, k + t_out), (rows, f_in))
                for k in range(cfg.K_t)])
            wa = T.reshape(self.params[f"block{blk}.conv_a.W"], (cfg.K_t * f_in, cfg.h_T))
            wb = T.reshape(self.params[f"block{blk}.conv_b.W"], (cfg.K_t * f_in, cfg.h_T))
            gate_in = T.add(T.matmul(patches, wa),
                            T.tile_rows(self.params[f"block{blk}.conv_a.b"], rows))
            gate_ctl = T.add(T.matmul(patches, wb),
                             T.tile_rows(self.params[f"block{blk}.conv_b.b"], rows))
            gated = T.mul(T.tanh(gate_in), T.sigmoid(gate_ctl))
            if adj is not None:
                h3 = T.reshape(gated, (t_out, n, cfg.h_T))
                by_node = T.reshape(T.swap01(h3), (n, t_out * cfg.h_T))
                mixed = spmm(adj, by_node)
                gated = T.reshape(T.swap01(T.reshape(mixed, (n, t_out, cfg.h_T))), (rows, cfg.h_T))
            z = T.relu(T.add(T.matmul(gated, self.params[f"block{blk}.graph.W"]),
                             T.tile_rows(self.params[f"block{blk}.graph.b"], rows)))
            x = T.reshape(z, (t_out, n, cfg.h_T))
            reps.append(T.slice0(x, t_out - 1))
        skip = reps[0] if cfg.L == 1 else T.hstack(reps)
        head = T.add(T.matmul(skip, self.params["head.W"]),
                     T.tile_rows(self.params["head.b"], n))
        return T.transpose(head), reps


class StudentModel:
    """Per-node MLP; node i's output depends only on node i's inputs."""

    kind = "student"

    def __init__(self, cfg: StudentConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: StudentConfig, seed: int) -> "StudentModel":
        params: dict[str, Tensor] = {}
        rng = _rng(seed, _INIT_SEED_TAG)
        if cfg.d_e > 0:
            params["embed"] = Tensor(
                _glorot(rng, (cfg.n_nodes, cfg.d_e), cfg.n_nodes, cfg.d_e), requires_grad=True)
        d_in = cfg.input_dim()
        for layer in range(cfg.n_layers):
            d_out = cfg.h_S
            params[f"layer{layer}.W"] = Tensor(
                _glorot(rng, (d_in, d_out), d_in, d_out), requires_grad=True)
            params[f"layer{layer}.b"] = Tensor(np.zeros(d_out), requires_grad=True)
            d_in = d_out
        params["head.W"] = Tensor(
            _glorot(rng, (cfg.h_S, cfg.T_p), cfg.h_S, cfg.T_p), requires_grad=True)
        params["head.b"] = Tensor(np.zeros(cfg.T_p), requires_grad=True)
        params["proj.W"] = Tensor(
            _glorot(rng, (cfg.h_S, cfg.h_T), cfg.h_S, cfg.h_T), requires_grad=True)
        params["proj.b"] = Tensor(np.zeros(cfg.h_T), requires_grad=True)
        return cls(cfg, params)

    def forward(self, window: Tensor, time_index: int) -> tuple[Tensor, Tensor, Tensor]:
        """window [T_h, n, 1], time_index = series step of the first target.

        Returns (pred [T_p, n], hidden Z [n, h_S], projected Z [n, h_T]).
        There is deliberately no adjacency parameter here.
        """
        cfg = self.cfg
        if window.rank != 3 or window.shape[2] != 1:
            raise DimensionError(f"student window must be [T, n, 1], got {window.shape}")
        if window.shape[0] != cfg.T_h or window.shape[1] != cfg.n_nodes:
            raise DimensionError(
                f"student expects [{cfg.T_h}, {cfg.n_nodes}, 1], got {window.shape}")
        if not isinstance(time_index, (int, np.integer)) or time_index < 0:
            raise ParameterError(f"time_index must be a non-negative step, got {time_index}")
        n = cfg.n_nodes
        hist = T.transpose(T.reshape(window, (cfg.T_h, n)))
        tod = 2.0 * np.pi * (int(time_index) % cfg.steps_per_day) / cfg.steps_per_day
        time_feat = Tensor(np.tile([np.sin(tod), np.cos(tod)], (n, 1)))
        parts = [hist]
        if cfg.d_e > 0:
            parts.append(self.params["embed"])
        parts.append(time_feat)
        h = T.hstack(parts)
        for layer in range(cfg.n_layers):
            h = T.relu(T.add(T.matmul(h, self.params[f"layer{layer}.W"]),
                             T.tile_rows(self.params[f"layer{layer}.b"], n)))
        z = h
        pred = T.transpose(T.add(T.matmul(z, self.params["head.W"]),
                                 T.tile_rows(self.params["head.b"], n)))
        projected = T.add(T.matmul(z, self.params["proj.W"]),
                          T.tile_rows(self.params["proj.b"], n))
        return pred, z, projected


def param_count(model) -> int:
    return sum(p.size for p in model.params.values())


# ---------------------------------------------------------------------------
# checkpoint io
#
# magic 'STKD' | version u32 LE | kind u8 | hyperparam JSON (u32 length
# prefix) | per-parameter records: name (u32 length + utf-8), rank u8,
# dims u32 each, values f64 LE. Records run to end of file.

def save_checkpoint(model, path) -> None:
    kind = _KIND_TEACHER if isinstance(model, TeacherModel) else _KIND_STUDENT
    blob = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<B", kind))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, p in model.params.items():
            enc = name.encode()
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", p.rank))
            for d in p.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Rebuild a model from disk; raises FormatError, never a partial model."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise FormatError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (kind,) = struct.unpack("<B", _read_exact(fh, 1, "kind"))
        if kind not in (_KIND_TEACHER, _KIND_STUDENT):
            raise FormatError(f"{path}: unknown model kind {kind}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "hyperparam length"))
        try:
            hp = json.loads(_read_exact(fh, blob_len, "hyperparams"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad hyperparameter block: {exc}") from exc
        loaded: dict[str, Tensor] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError("truncated checkpoint while reading name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "name").decode()
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"{name} rank"))
            dims = [struct.unpack("<I", _read_exact(fh, 4, f"{name} dim"))[0]
                    for _ in range(rank)]
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, count * 8, f"{name} values")
            loaded[name] = Tensor(np.frombuffer(raw, dtype="<f8").reshape(dims).copy(),
                                  requires_grad=True)
    try:
        if kind == _KIND_TEACHER:
            model = TeacherModel.init(TeacherConfig(**hp), seed=0)
        else:
            model = StudentModel.init(StudentConfig(**hp), seed=0)
    except TypeError as exc:
        raise FormatError(f"{path}: hyperparameters do not match model kind: {exc}") from exc
    expected = {name: p.shape for name, p in model.params.items()}
    got = {name: p.shape for name, p in loaded.items()}
    if expected != got:
        raise FormatError(f"{path}: parameter records do not match hyperparameters")
    model.params = {name: loaded[name] for name in model.params}
    return model
