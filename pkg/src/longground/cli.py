"""Command-line entry point: ``longground <command> [options]``.

Commands: datagen, train, eval, bench, gradcheck. Every command takes an
optional ``--config`` file plus ``--set key=value`` overrides. Exit codes:
0 ok, 1 usage, 2 data or format, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, from_sources, overrides_from_pairs
from .data import generate_synthetic, load_dataset, save_dataset
from .errors import DataError, GroundingError, NumericError, UsageError
from .train import evaluate, train

DATA_ENV = "LONGGROUND_DATA"
log = logging.getLogger("longground")


def _data_dir(args) -> Path:
    d = args.data or os.environ.get(DATA_ENV)
    if not d:
        raise UsageError(f"no data directory: pass --data or set {DATA_ENV}")
    return Path(d)


def _config(args) -> RunConfig:
    return from_sources(args.config, args.set)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_datagen(args) -> int:
    out = _data_dir(args)
    if (out / "manifest.json").exists() and not args.force:
        raise UsageError(f"{out} already holds a dataset; pass --force to overwrite")
    cfg = _config(args)
    duration = args.frames / args.fps
    lo, hi = args.span_min * duration, args.span_max * duration
    ds = generate_synthetic(args.seed, args.videos, args.frames, cfg.dim, args.queries, (lo, hi),
                            args.signal, fps=args.fps, split=args.split, dtype=cfg.dtype)
    written = save_dataset(ds, out)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(_data_dir(args))
    start = 0
    if args.resume:
        model, opt, meta = load_checkpoint(args.resume, with_optimizer=True)
        over = overrides_from_pairs(args.set)
        cfg = RunConfig.from_text(model.cfg.to_text(), **over)
        model.cfg = cfg
        start = int(meta["step"])
    else:
        cfg = _config(args)
        model, opt = None, None
    if ds.dim != cfg.dim:
        raise DataError(f"dataset features have dim {ds.dim}, config expects dim={cfg.dim}")
    freeze = "reg." if args.freeze_regressor else None
    result = train(cfg, ds, model, opt, start_step=start, steps=args.steps, freeze=freeze)
    save_checkpoint(args.out, result.model, result.optimizer, step=result.steps_done)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.tsv")
    log_path.write_text(result.log_text())
    print(f"trained to step {result.steps_done}; checkpoint {args.out}; log {log_path}")
    return 0


def _model_from(args):
    model, _ = load_checkpoint(args.model)
    over = overrides_from_pairs(args.set)
    if over:
        model.cfg = RunConfig.from_text(model.cfg.to_text(), **over)
    return model


def cmd_eval(args) -> int:
    ds = load_dataset(_data_dir(args))
    model = _model_from(args)
    cfg = model.cfg
    res = evaluate(model, ds, rr=cfg.rr, br=cfg.br)
    record = {"pr": True, "rr": cfg.rr, "br": cfg.br, "queries": sum(1 for _ in ds.queries()), **res.as_dict()}
    _emit(json.dumps(record, sort_keys=True) + "\n", args.out)
    return 0


def cmd_bench(args) -> int:
    ds = load_dataset(_data_dir(args))
    if args.model:
        model = _model_from(args)
    else:
        cfg = _config(args)
        if "precision" not in overrides_from_pairs(args.set):
            cfg = cfg.replace(precision="float32")
        from .model import GroundingModel
        model = GroundingModel.init(cfg)
    if ds.dim != model.cfg.dim:
        raise DataError(f"dataset features have dim {ds.dim}, model expects dim={model.cfg.dim}")
    videos = ds.videos[:args.videos] if args.videos else ds.videos
    queries = [[a.query_vec for a in ds.annotations.get(v.video_id, [])[:args.queries or None]]
               for v in videos]
    sc = bench.SlidingConfig(args.window or model.cfg.slide_window, args.stride or model.cfg.slide_stride,
                             nms_threshold=model.cfg.nms_threshold)
    reports = bench.benchmark(videos, queries, model, sc, repeats=args.repeats, warmup=1,
                              memory=not args.no_memory)
    _emit(bench.format_report(reports, bench.compare(reports)), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import CASES, run_suite
    names = args.only or None
    if names:
        bad = sorted(set(names) - set(CASES))
        if bad:
            raise UsageError(f"unknown cases: {', '.join(bad)}; choose from {', '.join(CASES)}")
    results = run_suite(range(args.seeds), names, args.tol)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise NumericError(f"{len(failed)} gradient checks exceeded tol={args.tol:g}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file with a [run] section")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--data", help=f"dataset directory (default: ${DATA_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="longground", description="One-pass temporal grounding toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", parents=[common], help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--queries", type=int, default=32)
    p.add_argument("--signal", type=float, default=0.8)
    p.add_argument("--fps", type=float, default=5.0)
    p.add_argument("--span-min", type=float, default=0.01, help="shortest span, fraction of video length")
    p.add_argument("--span-max", type=float, default=0.03, help="longest span, fraction of video length")
    p.add_argument("--split", default="train")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="loss log path (default: <out>.log.tsv)")
    p.add_argument("--steps", type=int, help="steps to run (default: up to config steps)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--freeze-regressor", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="recall report for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="one-pass vs sliding-window timing")
    p.add_argument("--model", help="checkpoint (default: fresh weights from the config)")
    p.add_argument("--videos", type=int, help="use only the first K videos")
    p.add_argument("--queries", type=int, help="queries per video")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--no-memory", action="store_true", help="skip the peak-memory run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--only", nargs="*", help="case names")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GroundingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
