"""Command-line surface: gen-data, train-teacher, distill, eval, bench,
oversmoothing. Every subcommand takes --config and writes its artifacts
under the resolved output_dir. Exit codes: 0 success, 1 training
divergence, 2 usage / format / I-O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import (DataConfig, RunConfig, load_run_config, write_resolved)
from .data import (DEFAULT_ALPHA, DEFAULT_BETA_RANGE, DEFAULT_GAMMA,
                   TrafficSeries, generate_synthetic, load_readings_csv,
                   make_windows, save_readings_csv, zscore_fit_apply)
from .distill import DistillConfig
from .errors import NumericError, StkdError
from .evalbench import (bench_latency, compute_metrics, oversmoothing_study,
                        save_oversmoothing_csv)
from .graph import (Graph, erdos_renyi_geometric, load_edge_csv, save_edge_csv,
                    symmetric_normalize)
from .models import (StudentConfig, StudentModel, TeacherConfig, TeacherModel,
                     load_checkpoint, param_count, save_checkpoint)
from .tensor import Tensor
from .train import (DivergenceError, TrainConfig, distill_student,
                    predict_student, predict_teacher, train_student,
                    train_teacher)


def _build_graph(d: DataConfig) -> Graph:
    if d.source == "synthetic":
        return erdos_renyi_geometric(d.n_nodes, d.radius, d.seed)
    return load_edge_csv(d.paths.graph_csv)


def _build_series(d: DataConfig, graph: Graph) -> TrafficSeries:
    if d.source == "synthetic":
        return generate_synthetic(graph, d.n_steps, d.step_minutes, d.seed)
    series = load_readings_csv(d.paths.readings_csv)
    if series.n_nodes != graph.n_nodes:
        raise StkdError(
            f"readings have {series.n_nodes} nodes but graph has {graph.n_nodes}")
    return series


def _load_dataset(cfg: RunConfig):
    graph = _build_graph(cfg.data)
    series = _build_series(cfg.data, graph)
    ds = make_windows(series, cfg.data.T_h, cfg.data.T_p, cfg.data.splits)
    nz, ds_norm = zscore_fit_apply(ds)
    return graph, symmetric_normalize(graph), ds_norm, nz


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    return out


def _write_jsonl(rows: list[dict], path: Path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _teacher_train_cfg(cfg: RunConfig) -> TrainConfig:
    t = cfg.teacher
    return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                       patience=t.patience, seed=cfg.data.seed, grad_clip=t.grad_clip)


def _student_train_cfg(cfg: RunConfig) -> TrainConfig:
    s = cfg.student
    return TrainConfig(epochs=s.epochs, batch_size=s.batch_size, lr=s.lr,
                       patience=s.patience, seed=cfg.data.seed, grad_clip=s.grad_clip)


def _distill_cfg(cfg: RunConfig) -> DistillConfig:
    d = cfg.distill
    rho = None if d.rho_mode == "median" else float(d.rho_mode)
    return DistillConfig(lambda_spatial=d.lambda_spatial, lambda_temporal=d.lambda_temporal,
                         tau=d.tau, adaptive_mode=d.adaptive_mode, rho=rho,
                         teacher_rep_layer=d.teacher_rep_layer)


def _student_cfg(cfg: RunConfig, n_nodes: int, teacher_h: int,
                 steps_per_day: int) -> StudentConfig:
    s = cfg.student
    return StudentConfig(n_nodes=n_nodes, T_h=cfg.data.T_h, T_p=cfg.data.T_p,
                         h_S=s.h_S, d_e=s.d_e, n_layers=s.n_layers,
                         h_T=teacher_h, steps_per_day=steps_per_day)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _test_metrics(preds, targets, nz):
    return compute_metrics(preds, targets, nz).as_dict()


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.no_kd)
    out = _out_dir(cfg)
    d = cfg.data
    graph = _build_graph(d)
    series = _build_series(d, graph)
    save_edge_csv(graph, out / "graph.csv")
    save_readings_csv(series, out / "readings.csv")
    manifest = {
        "seed": d.seed,
        "generator": {
            "source": d.source,
            "n_nodes": graph.n_nodes,
            "n_edges": len(graph.undirected_edges()),
            "radius": d.radius,
            "sigma": d.radius / 2.0,
            "n_steps": series.n_steps,
            "step_minutes": d.step_minutes,
            "steps_per_day": series.steps_per_day,
            "alpha": DEFAULT_ALPHA,
            "beta_range": list(DEFAULT_BETA_RANGE),
            "gamma": DEFAULT_GAMMA,
        },
        "files": {"graph_csv": "graph.csv", "readings_csv": "readings.csv"},
    }
    _write_json(manifest, out / "manifest.json")
    print(f"wrote graph.csv ({len(graph.undirected_edges())} edges), "
          f"readings.csv ({series.n_steps} x {series.n_nodes}) to {out}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.no_kd)
    out = _out_dir(cfg)
    _, adj, ds, nz = _load_dataset(cfg)
    t = cfg.teacher
    model = TeacherModel.init(
        TeacherConfig(L=t.L, h_T=t.h_T, K_t=t.K_t, T_p=cfg.data.T_p,
                      steps_per_day=ds.steps_per_day),
        seed=cfg.data.seed)
    print(f"teacher: {param_count(model)} parameters, "
          f"{ds.n_train}/{ds.n_val}/{ds.n_test} train/val/test windows")
    ckpt = out / "teacher.ckpt"
    try:
        history = train_teacher(model, adj, ds, nz, _teacher_train_cfg(cfg))
    except DivergenceError as exc:
        save_checkpoint(model, ckpt)
        _write_jsonl(exc.history, out / "teacher_metrics.jsonl")
        print(f"training diverged: {exc}; last good checkpoint at {ckpt}", file=sys.stderr)
        return 1
    save_checkpoint(model, ckpt)
    _write_jsonl(history, out / "teacher_metrics.jsonl")
    best = min(h["val_mae"] for h in history)
    print(f"done: {len(history)} epochs, best val MAE {best:.4f}, checkpoint {ckpt}")
    return 0


def _train_one_student(cfg, teacher, adj, ds, nz, use_kd: bool):
    scfg = _student_cfg(cfg, ds.n_nodes, teacher.cfg.h_T, ds.steps_per_day)
    student = StudentModel.init(scfg, seed=cfg.data.seed)
    if use_kd:
        history = distill_student(student, teacher, adj, ds, nz,
                                  _student_train_cfg(cfg), _distill_cfg(cfg))
    else:
        history = train_student(student, ds, nz, _student_train_cfg(cfg))
    return student, history


def cmd_distill(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.no_kd)
    out = _out_dir(cfg)
    teacher_path = _require(Path(args.teacher_ckpt or out / "teacher.ckpt"),
                            "teacher checkpoint")
    teacher = load_checkpoint(teacher_path)
    if not isinstance(teacher, TeacherModel):
        raise StkdError(f"{teacher_path} holds a {teacher.kind} checkpoint, expected teacher")
    _, adj, ds, nz = _load_dataset(cfg)
    dcfg = _distill_cfg(cfg)
    kd_enabled = dcfg.lambda_spatial > 0.0 or dcfg.lambda_temporal > 0.0

    test_idx = list(ds.test_indices)
    test_targets = ds.targets[ds.n_train + ds.n_val:]
    report: dict = {"kd_enabled": kd_enabled}
    report["teacher"] = _test_metrics(
        predict_teacher(teacher, adj, ds, test_idx), test_targets, nz)

    try:
        if kd_enabled:
            student_kd, hist_kd = _train_one_student(cfg, teacher, adj, ds, nz, use_kd=True)
            save_checkpoint(student_kd, out / "student.ckpt")
            _write_jsonl(hist_kd, out / "student_metrics.jsonl")
            report["student_kd"] = _test_metrics(
                predict_student(student_kd, ds, test_idx), test_targets, nz)
        else:
            report["student_kd"] = None
        student_ab, hist_ab = _train_one_student(cfg, teacher, adj, ds, nz, use_kd=False)
        save_checkpoint(student_ab, out / "student_nokd.ckpt")
        _write_jsonl(hist_ab, out / "student_nokd_metrics.jsonl")
        report["student_nokd"] = _test_metrics(
            predict_student(student_ab, ds, test_idx), test_targets, nz)
    except DivergenceError as exc:
        print(f"student training diverged: {exc}", file=sys.stderr)
        return 1
    _write_json(report, out / "distill_report.json")

    print(f"{'model':<14}{'test MAE':>10}{'RMSE':>10}")
    print(f"{'teacher':<14}{report['teacher']['mae']:>10.4f}{report['teacher']['rmse']:>10.4f}")
    if report["student_kd"] is not None:
        print(f"{'student+KD':<14}{report['student_kd']['mae']:>10.4f}"
              f"{report['student_kd']['rmse']:>10.4f}")
    print(f"{'student noKD':<14}{report['student_nokd']['mae']:>10.4f}"
          f"{report['student_nokd']['rmse']:>10.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.no_kd)
    out = _out_dir(cfg)
    teacher_path = _require(Path(args.teacher_ckpt or out / "teacher.ckpt"),
                            "teacher checkpoint")
    student_path = _require(Path(args.student_ckpt or out / "student.ckpt"),
                            "student checkpoint")
    teacher = load_checkpoint(teacher_path)
    student = load_checkpoint(student_path)
    _, adj, ds, nz = _load_dataset(cfg)
    test_idx = list(ds.test_indices)
    test_targets = ds.targets[ds.n_train + ds.n_val:]
    report = {
        "teacher": _test_metrics(predict_teacher(teacher, adj, ds, test_idx),
                                 test_targets, nz),
        "student": _test_metrics(predict_student(student, ds, test_idx),
                                 test_targets, nz),
        "teacher_params": param_count(teacher),
        "student_params": param_count(student),
    }
    _write_json(report, out / "eval_report.json")
    print(f"{'model':<10}{'params':>8}{'MAE':>10}{'RMSE':>10}{'MAPE':>10}")
    for name in ("teacher", "student"):
        m = report[name]
        mape = f"{m['mape']:.4f}" if m["mape"] is not None else "n/a"
        print(f"{name:<10}{report[name + '_params']:>8}{m['mae']:>10.4f}"
              f"{m['rmse']:>10.4f}{mape:>10}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.no_kd)
    out = _out_dir(cfg)
    teacher_path = _require(Path(args.teacher_ckpt or out / "teacher.ckpt"),
                            "teacher checkpoint")
    student_path = _require(Path(args.student_ckpt or out / "student.ckpt"),
                            "student checkpoint")
    teacher = load_checkpoint(teacher_path)
    student = load_checkpoint(student_path)
    _, adj, ds, _ = _load_dataset(cfg)
    w = ds.n_train + ds.n_val  # first test window
    window = Tensor(ds.inputs[min(w, ds.n_windows - 1)][:, :, None])
    t_index = ds.target_start_step(min(w, ds.n_windows - 1))
    main = bench_latency(teacher, student, adj, window,
                         cfg.bench.reps, cfg.bench.warmup, time_index=t_index)
    self_check = bench_latency(student, student, adj, window,
                               cfg.bench.reps, cfg.bench.warmup, time_index=t_index)
    report = {"teacher_vs_student": main.as_dict(), "student_self": self_check.as_dict()}
    _write_json(report, out / "bench_report.json")
    print(f"{'pair':<22}{'median us':>12}{'p10':>10}{'p90':>10}")
    print(f"{'teacher':<22}{main.teacher_median_ns / 1e3:>12.1f}"
          f"{main.teacher_p10_ns / 1e3:>10.1f}{main.teacher_p90_ns / 1e3:>10.1f}")
    print(f"{'student':<22}{main.student_median_ns / 1e3:>12.1f}"
          f"{main.student_p10_ns / 1e3:>10.1f}{main.student_p90_ns / 1e3:>10.1f}")
    print(f"speedup (teacher/student): {main.speedup:.2f}x; "
          f"student self-comparison: {self_check.speedup:.3f}")
    return 0


def cmd_oversmoothing(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.no_kd)
    out = _out_dir(cfg)
    graph = _build_graph(cfg.data)
    rows = oversmoothing_study(list(cfg.oversmoothing.depths), graph, cfg.data.seed,
                               h_T=cfg.teacher.h_T, K_t=cfg.teacher.K_t)
    save_oversmoothing_csv(rows, out / "oversmoothing.csv")
    _write_json({"depths": [{"depth": d, "mad": m} for d, m in rows]},
                out / "oversmoothing_report.json")
    print(f"{'depth':<8}{'MAD':>10}")
    for depth, mad in rows:
        print(f"{depth:<8}{mad:>10.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stkd",
        description="Teacher-student spatio-temporal distillation for traffic forecasting")
    parser.add_argument("--version", action="version", version=f"stkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": (cmd_gen_data, "generate a synthetic graph + readings CSV"),
        "train-teacher": (cmd_train_teacher, "train the graph teacher"),
        "distill": (cmd_distill, "distill the student (plus no-KD ablation)"),
        "eval": (cmd_eval, "test-split metrics for saved checkpoints"),
        "bench": (cmd_bench, "inference latency comparison"),
        "oversmoothing": (cmd_oversmoothing, "representation MAD vs teacher depth"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--teacher-ckpt", default=None, help="teacher checkpoint path")
        p.add_argument("--student-ckpt", default=None, help="student checkpoint path")
        p.add_argument("--no-kd", action="store_true",
                       help="ablation: force both distillation weights to 0")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StkdError, FileNotFoundError, NotADirectoryError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
