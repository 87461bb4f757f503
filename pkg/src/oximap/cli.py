"""Command-line pipeline: generate synthetic subjects, extract maps from
frame dumps, train/evaluate the estimators, run the baselines, and sweep
the reconstruction weight.

Every command is deterministic given its --seed; outputs carry a resolved
config copy for provenance. Failures print a one-line JSON object on
stderr and exit non-zero. The only environment knob is OXIMAP_NUM_THREADS,
which caps the BLAS thread pools (set before numpy loads).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _apply_thread_override() -> None:
    n = os.environ.get("OXIMAP_NUM_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _provenance(cfg, out_path: Path) -> None:
    if out_path.is_dir():
        _write_json(out_path / "run_config.json", cfg.resolved())
    else:
        _write_json(out_path.parent / (out_path.stem + "_config.json"), cfg.resolved())


def _load_run_config(args):
    from .config import load_config

    return load_config(args.config) if getattr(args, "config", None) else load_config({})


def _load_records(data_dir: Path):
    from dataclasses import fields

    from .errors import DataError
    from .io import read_spo2_csv, read_stm
    from .synth import SubjectRecord, SynthParams

    stm_files = sorted(data_dir.glob("*.stm"))
    if not stm_files:
        raise DataError(f"{data_dir}: no .stm files found")
    params_path = data_dir / "params.json"
    if params_path.exists():
        doc = json.loads(params_path.read_text(encoding="utf-8"))
        known = {f.name for f in fields(SynthParams)}
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items() if k in known}
        meta = SynthParams(**doc)
    else:
        meta = SynthParams()
    records = []
    for stm in stm_files:
        csv = stm.with_name(stm.stem + "_spo2.csv")
        if not csv.exists():
            raise DataError(f"{csv}: missing SpO2 trace for {stm.name}")
        m = read_stm(stm)
        records.append(SubjectRecord(subject_id=m.subject_id, map=m, spo2=read_spo2_csv(csv), meta=meta))
    return records


def _fold_of(plan, index: int):
    from .errors import ParameterError

    if not 0 <= index < plan.k:
        raise ParameterError(f"fold index {index} outside 0..{plan.k - 1}")
    return plan.folds[index]


def _plan_for(records, cfg):
    from .harness import kfold_split

    return kfold_split([r.subject_id for r in records], k=cfg.train.k, seed=cfg.train.seed)


def _records_by_id(records):
    return {r.subject_id: r for r in records}


def _windows(records, ids, step_s: float, mode: str):
    from .harness import window_dataset

    by_id = _records_by_id(records)
    out = []
    for sid in ids:
        out.extend(window_dataset(by_id[sid], step_s, mode))
    return out


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    from dataclasses import asdict, fields, replace

    from .errors import DataError, ParameterError
    from .io import write_spo2_csv, write_stm
    from .synth import SynthParams, gen_subject

    if args.subjects < 1:
        raise ParameterError(f"--subjects must be >= 1, got {args.subjects}")
    if args.params:
        doc = json.loads(Path(args.params).read_text(encoding="utf-8"))
        known = {f.name for f in fields(SynthParams)}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown synth parameter(s): {sorted(unknown)}")
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        params = SynthParams(**doc)
    else:
        params = SynthParams()
    if args.seed is not None:
        params = replace(params, seed=args.seed)

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise DataError(f"{out}: directory not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)

    files = []
    for i in range(args.subjects):
        rec = gen_subject(params, f"s{i:03d}", index=i)
        stm_name = f"{rec.subject_id}.stm"
        csv_name = f"{rec.subject_id}_spo2.csv"
        write_stm(rec.map, out / stm_name)
        write_spo2_csv(rec.spo2, out / csv_name)
        files.extend([stm_name, csv_name])

    doc = asdict(params)
    doc["hr_hz"] = list(doc["hr_hz"])
    _write_json(out / "params.json", doc)
    manifest = {"count": args.subjects, "seed": params.seed, "files": sorted(files + ["params.json"])}
    _write_json(out / "manifest.json", manifest)
    print(json.dumps(manifest, sort_keys=True))
    return 0


def cmd_extract(args) -> int:
    from .errors import ParameterError
    from .io import read_frames, write_stm
    from .stmap import FaceRect, build_map, make_grid

    parts = args.rect.split(",")
    if len(parts) != 4:
        raise ParameterError(f'--rect must be "x,y,w,h", got {args.rect!r}')
    x, y, w, h = (int(p) for p in parts)
    grid = make_grid(FaceRect(x0=x, y0=y, width=w, height=h))
    frames = read_frames(Path(args.frames))
    stmap = build_map(frames, grid, subject_id=args.subject_id)
    out = Path(args.out)
    write_stm(stmap, out)
    _write_json(
        out.parent / (out.stem + "_config.json"),
        {
            "command": "extract",
            "frames": str(args.frames),
            "rect": {"x0": x, "y0": y, "width": w, "height": h},
            "subject_id": args.subject_id,
        },
    )
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace

    from .harness import TEST_STEP_S, TRAIN_STEP_S, train_model
    from .models import save_model

    cfg = _load_run_config(args)
    if args.variant:
        cfg = type(cfg)(model=replace(cfg.model, variant=args.variant), synth=cfg.synth, train=cfg.train)
    records = _load_records(Path(args.data))
    fold = _fold_of(_plan_for(records, cfg), args.fold)
    train_set = _windows(records, fold.train_ids, TRAIN_STEP_S, "train")
    val_set = _windows(records, fold.val_ids, TEST_STEP_S, "test")
    result = train_model(
        cfg.model,
        train_set,
        val_set,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        seed=cfg.train.seed,
    )
    out = Path(args.out)
    save_model(result.model, out)
    _write_json(out / "history.json", result.history)
    _provenance(cfg, out)
    return 0


def cmd_eval(args) -> int:
    from .harness import TEST_STEP_S, evaluate
    from .models import load_model

    cfg = _load_run_config(args)
    model = load_model(args.model)
    records = _load_records(Path(args.data))
    fold = _fold_of(_plan_for(records, cfg), args.fold)
    test_set = _windows(records, fold.test_ids, TEST_STEP_S, "test")
    metrics, rows = evaluate(model, test_set, batch_size=cfg.train.batch_size)
    out = Path(args.out)
    _write_json(out, {"mae": metrics.mae, "rmse": metrics.rmse, "corrcoef": metrics.corrcoef})
    if args.trace_csv:
        _write_trace_csv(args.trace_csv, rows)
    _provenance(cfg, out)
    return 0


def _write_trace_csv(path, rows) -> None:
    lines = ["subject_id,t_s,pred_pct,gt_pct"]
    for sid, t_s, pred, gt in rows:
        lines.append(f"{sid},{t_s:g},{pred:.6f},{gt:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_baseline(args) -> int:
    from .harness import (
        evaluate_lr_baseline,
        evaluate_ror_baseline,
        fit_lr_baseline,
        fit_ror_baseline,
    )

    cfg = _load_run_config(args)
    records = _load_records(Path(args.data))
    by_id = _records_by_id(records)
    fold = _fold_of(_plan_for(records, cfg), args.fold)
    fit_recs = [by_id[s] for s in fold.train_ids + fold.val_ids]
    test_recs = [by_id[s] for s in fold.test_ids]
    if args.method == "ror":
        cal = fit_ror_baseline(fit_recs)
        metrics, rows = evaluate_ror_baseline(cal, test_recs)
    else:
        lr = fit_lr_baseline(fit_recs)
        metrics, rows = evaluate_lr_baseline(lr, test_recs)
    out = Path(args.out)
    _write_json(out, {"mae": metrics.mae, "rmse": metrics.rmse, "corrcoef": metrics.corrcoef})
    if args.trace_csv:
        _write_trace_csv(args.trace_csv, rows)
    _provenance(cfg, out)
    return 0


def cmd_sweep_alpha(args) -> int:
    from dataclasses import replace

    from .errors import ParameterError
    from .harness import TEST_STEP_S, TRAIN_STEP_S, evaluate, train_model

    cfg = _load_run_config(args)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a != ""]
    except ValueError as e:
        raise ParameterError(f"bad --alphas list {args.alphas!r}") from e
    if not alphas or args.seeds < 1:
        raise ParameterError("need at least one alpha and one seed")
    records = _load_records(Path(args.data))
    fold = _fold_of(_plan_for(records, cfg), args.fold)
    train_set = _windows(records, fold.train_ids, TRAIN_STEP_S, "train")
    val_set = _windows(records, fold.val_ids, TEST_STEP_S, "test")
    test_set = _windows(records, fold.test_ids, TEST_STEP_S, "test")

    lines = ["alpha,seed,corrcoef,mae,rmse"]
    for alpha in alphas:
        for seed in range(args.seeds):
            mcfg = replace(cfg.model, variant="end2end", alpha=alpha, seed=seed)
            result = train_model(
                mcfg,
                train_set,
                val_set,
                epochs=cfg.train.epochs,
                batch_size=cfg.train.batch_size,
                lr=cfg.train.lr,
                seed=seed,
            )
            metrics, _ = evaluate(result.model, test_set, batch_size=cfg.train.batch_size)
            lines.append(f"{alpha:g},{seed},{metrics.corrcoef:.6f},{metrics.mae:.6f},{metrics.rmse:.6f}")
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _provenance(cfg, out)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oximap", description="SpO2 estimation from spatio-temporal maps")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic subjects")
    s.add_argument("--subjects", type=int, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--params", default=None, help="JSON file of generator parameters")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="build a map from a frame dump")
    s.add_argument("--frames", required=True)
    s.add_argument("--rect", required=True, help='face rectangle "x,y,w,h"')
    s.add_argument("--out", required=True)
    s.add_argument("--subject-id", default="")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="train one variant on one fold")
    s.add_argument("--data", required=True)
    s.add_argument("--variant", choices=["plain", "early", "filter", "end2end"], default=None)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a fold's test subjects")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--trace-csv", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="fit and evaluate a baseline on one fold")
    s.add_argument("--data", required=True)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--method", choices=["ror", "lr"], required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--trace-csv", default=None)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("sweep-alpha", help="train end2end across reconstruction weights")
    s.add_argument("--alphas", default="0,0.01,0.05,0.1,0.5,1")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--data", required=True)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep_alpha)

    return p


def main(argv=None) -> int:
    _apply_thread_override()
    args = build_parser().parse_args(argv)
    from .errors import OximapError

    try:
        return args.func(args)
    except OximapError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
