"""Command line surface: generate | train | eval | check.

Conventions shared by all commands: machine-parseable JSON lines go to
stdout, human-readable progress goes to stderr, every run writes a manifest
(atomically, at the end) sufficient to reproduce it, and flag precedence is
command line > --config file > built-in defaults. Exit code 0 means no
errors and, for check, no property failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .networks import broad_config, build_model, deep_config
from .toydata import (DataGenConfig, SPLIT_NAMES, generate_dataset,
                      load_dataset, save_dataset)
from .training import (TrainConfig, evaluate, load_model, load_training_state,
                       save_checkpoint, train)
from .verify import SUITES, run_suites

MODEL_BUILDERS = {"broad": broad_config, "deep": deep_config}


def _emit(obj: dict):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _note(msg: str):
    sys.stderr.write(msg + "\n")
    sys.stderr.flush()


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    outputs: list, started: float):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "started_unix": started,
        "finished_unix": time.time(),
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / f"manifest-{command}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    os.replace(tmp, path)
    return path


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SystemExit(f"config file {path} must hold a JSON object")
    return cfg


def _pick(flag_value, file_config: dict, key: str, default):
    """flags > config file > default; flags left at None fall through."""
    if flag_value is not None:
        return flag_value
    if key in file_config:
        return file_config[key]
    return default


def _load_data(path) -> dict:
    """Dataset from a single record file or a directory of them."""
    p = Path(path)
    if not p.exists():
        raise SystemExit(f"dataset not found: {p}")
    if p.is_file():
        return load_dataset(p)
    merged = {}
    for f in sorted(p.glob("*.jsonl")):
        for split, ds in load_dataset(f).items():
            if ds.n:
                if split in merged:
                    raise SystemExit(f"split {split!r} appears in two files under {p}")
                merged[split] = ds
    if not merged:
        raise SystemExit(f"no .jsonl dataset files under {p}")
    return merged


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    started = time.time()
    fc = _load_config_file(args.config)
    counts = _pick(args.counts, fc, "counts", "2000,500,300")
    if isinstance(counts, str):
        counts = tuple(int(c) for c in counts.split(","))
    try:
        cfg = DataGenConfig(
            m=_pick(args.m, fc, "m", 100),
            outlier_ratio=_pick(args.outlier_ratio, fc, "outlier_ratio", 0.0),
            sigma=_pick(args.sigma, fc, "sigma", 0.03),
            counts=tuple(counts),
            seed=_pick(args.seed, fc, "seed", 0),
        )
    except ValueError as e:
        raise SystemExit(f"invalid generation config: {e}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = args.threads or 1
    _note(f"generating {sum(cfg.counts)} examples (m={cfg.m}, r={cfg.outlier_ratio}, "
          f"sigma={cfg.sigma}, seed={cfg.seed}, threads={threads})")
    splits = generate_dataset(cfg, threads=threads)
    outputs = []
    for split in SPLIT_NAMES:
        path = out_dir / f"{split}.jsonl"
        save_dataset(path, {split: splits[split]})
        outputs.append(path)
        _emit({"event": "split_written", "split": split,
               "count": len(splits[split]), "path": str(path)})
    manifest = _write_manifest(out_dir, "generate", cfg.to_dict(), cfg.seed,
                               outputs, started)
    _emit({"event": "done", "manifest": str(manifest)})
    _note(f"wrote {sum(cfg.counts)} examples to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    started = time.time()
    fc = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _load_data(_pick(args.data, fc, "data", None) or
                      _fail("--data is required"))
    for split in ("train", "val"):
        if split not in data or not data[split].n:
            raise SystemExit(f"dataset has no {split!r} split")

    start_epoch, adam, resumed_from = 1, None, None
    if args.resume:
        model, meta, adam = load_training_state(args.resume)
        extra = meta.get("extra", {})
        saved = extra.get("train_config")
        if saved is None or adam is None:
            raise SystemExit("checkpoint was not saved with training state; "
                             "cannot resume")
        if extra.get("params_are") == "best":
            raise SystemExit("checkpoint holds early-stopped weights, which do "
                             "not match its optimizer state; resume needs a "
                             "run without --early-stop")
        base = TrainConfig.from_dict(saved)
        start_epoch = int(extra["epoch"]) + 1
        resumed_from = args.resume
        model_name = extra.get("model", "custom")
    else:
        base = TrainConfig()
        model_name = _pick(args.model, fc, "model", "deep")
        if model_name not in MODEL_BUILDERS:
            raise SystemExit(f"unknown model {model_name!r}; choose from "
                             f"{sorted(MODEL_BUILDERS)}")

    cfg = TrainConfig(
        epochs=_pick(args.epochs, fc, "epochs", base.epochs),
        batch_size=_pick(args.batch_size, fc, "batch_size", base.batch_size),
        lr=_pick(args.lr, fc, "lr", base.lr),
        halve_after=base.halve_after,
        seed=_pick(args.seed, fc, "seed", base.seed),
        early_stop=bool(_pick(args.early_stop, fc, "early_stop", base.early_stop)),
    )
    if not args.resume:
        model = build_model(MODEL_BUILDERS[model_name](), seed=cfg.seed)
    if cfg.early_stop and resumed_from:
        raise SystemExit("--early-stop cannot be combined with --resume")

    metrics_path = out_dir / "metrics.jsonl"
    mode = "a" if resumed_from else "w"
    _note(f"training {model_name} model: {model.n_params} parameters, "
          f"epochs {start_epoch}..{cfg.epochs}, lr {cfg.lr}, "
          f"batch {cfg.batch_size}, seed {cfg.seed}")
    with open(metrics_path, mode, encoding="utf-8") as mf:
        def log_epoch(row):
            mf.write(json.dumps(row, sort_keys=True) + "\n")
            mf.flush()
            _emit({"event": "epoch", **row})

        result = train(model, data["train"], data["val"], cfg,
                       callback=log_epoch, start_epoch=start_epoch, adam=adam)

    ckpt_path = out_dir / "checkpoint.zzn"
    extra = {
        "model": model_name,
        "train_config": cfg.to_dict(),
        "epoch": cfg.epochs,
        "best_epoch": result.best_epoch,
        "best_val_error": result.best_val_error,
        "params_are": "best" if cfg.early_stop else "final",
        "resumed_from": str(resumed_from) if resumed_from else None,
    }
    save_checkpoint(ckpt_path, model, extra=extra,
                    adam=None if cfg.early_stop else result.adam)
    manifest = _write_manifest(out_dir, "train",
                               {"model": model_name, "data": str(args.data),
                                "train_config": cfg.to_dict(),
                                "resumed_from": extra["resumed_from"]},
                               cfg.seed, [ckpt_path, metrics_path], started)
    _emit({"event": "done", "checkpoint": str(ckpt_path),
           "best_epoch": result.best_epoch,
           "best_val_error": result.best_val_error,
           "manifest": str(manifest)})
    _note(f"checkpoint written to {ckpt_path}")
    return 0


def _fail(msg: str):
    raise SystemExit(msg)


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    started = time.time()
    if not Path(args.checkpoint).exists():
        raise SystemExit(f"checkpoint not found: {args.checkpoint}")
    model, meta = load_model(args.checkpoint)
    data = _load_data(args.data)
    if args.split not in data or not data[args.split].n:
        raise SystemExit(f"dataset has no {args.split!r} split")
    report = evaluate(model, data[args.split])
    report.update({"split": args.split, "checkpoint": str(args.checkpoint),
                   "model": meta.get("extra", {}).get("model", "custom")})
    _emit({"event": "report", **report})
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _write_manifest(out_dir, "eval",
                               {"checkpoint": str(args.checkpoint),
                                "data": str(args.data), "split": args.split},
                               None, [], started)
    _note(f"{args.split}: {report['count']} examples, mean error "
          f"{report['mean_error']:.4f}, accuracy @1/5/10 degrees = "
          f"{report['acc_1deg']:.3f}/{report['acc_5deg']:.3f}/{report['acc_10deg']:.3f}")
    _emit({"event": "done", "manifest": str(manifest)})
    return 0


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    started = time.time()
    suites = args.suite or ["all"]
    names = []
    for s in suites:
        names.extend(part.strip() for part in s.split(",") if part.strip())
    try:
        results = run_suites(names, seed=args.seed if args.seed is not None else 0)
    except ValueError as e:
        raise SystemExit(str(e))
    failures = 0
    for r in results:
        _emit({"event": "check", **r.to_dict()})
        _note(r.line())
        failures += 0 if r.passed else 1
    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _write_manifest(out_dir, "check",
                               {"suites": names, "seed": args.seed or 0},
                               args.seed or 0, [], started)
    _emit({"event": "done", "passed": len(results) - failures,
           "failed": failures, "manifest": str(manifest)})
    _note(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zznet",
        description="Rotation-equivariant point-cloud networks: data "
                    "generation, training, evaluation, verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write the synthetic dataset splits")
    g.add_argument("--m", type=int, help="points per cloud (default 100)")
    g.add_argument("--outlier-ratio", type=float, dest="outlier_ratio",
                   help="replacement probability in [0,1] (default 0)")
    g.add_argument("--sigma", type=float, help="coordinate noise std (default 0.03)")
    g.add_argument("--counts", type=str, help="train,val,test sizes (default 2000,500,300)")
    g.add_argument("--seed", type=int, help="root seed (default 0)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="JSON file with default flag values")
    g.add_argument("--threads", type=int, help="parallel example generation; "
                                               "1 (default) is fully deterministic")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--model", choices=sorted(MODEL_BUILDERS), help="architecture (default deep)")
    t.add_argument("--data", help="dataset file or directory")
    t.add_argument("--epochs", type=int, help="total epochs (default 300)")
    t.add_argument("--lr", type=float, help="base learning rate (default 5e-3)")
    t.add_argument("--batch-size", type=int, dest="batch_size", help="default 32")
    t.add_argument("--seed", type=int, help="weights and batch-order seed (default 0)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--early-stop", action="store_const", const=True, dest="early_stop",
                   help="keep the weights of the best validation epoch")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--config", help="JSON file with default flag values")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset file or directory")
    e.add_argument("--split", default="test", choices=list(SPLIT_NAMES))
    e.add_argument("--out", help="manifest directory (default: checkpoint's)")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("check", help="run verification suites")
    c.add_argument("--suite", action="append",
                   help=f"suite name or comma list: {sorted(SUITES) + ['all']} "
                        f"(default all; 'equivariance' is an alias for 'models')")
    c.add_argument("--seed", type=int, help="suite seed (default 0)")
    c.add_argument("--out", help="manifest directory (default: current)")
    c.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except KeyboardInterrupt:
        _note("interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
