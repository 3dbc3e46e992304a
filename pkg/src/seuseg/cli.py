"""Command-line entry point: ``seuseg <command> ...``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import RunConfig, load_config
from .errors import SeusegError


def _log(msg: str) -> None:
    print(msg, flush=True)


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_gen_data(args) -> int:
    from .data import save_dataset, synth_generate

    samples, manifest = synth_generate(args.seed, args.count, args.size, max_tokens=args.max_tokens)
    save_dataset(args.out, samples, manifest)
    _log(f"wrote {manifest.count} samples ({manifest.n_train}/{manifest.n_val}/{manifest.n_test}) "
         f"at {args.size}x{args.size} to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .data import load_dataset
    from .trainer import train

    cfg = _config(args.config)
    report, _ = train(cfg, load_dataset(args.data), args.out, log=_log)
    _log(f"best epoch {report.best_epoch} val dice {report.best_val_dice:.4f} "
         f"after {len(report.epochs)} epochs in {report.wall_time:.1f}s; checkpoint in {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .trainer import evaluate, load_checkpoint

    params, cfg = load_checkpoint(args.ckpt)
    data = load_dataset(args.data).split(args.split)
    res = evaluate(params, data, cfg.train.text_mode, args.dump)
    _log(f"{args.split}: n={len(data)} dice {res.mean_dice:.4f} miou {res.mean_miou:.4f}")
    if args.dump:
        _log(f"predictions and metrics.csv in {args.dump}")
    return 0


def cmd_ablate(args) -> int:
    from .data import load_dataset
    from .trainer import ablation_markdown, run_ablation

    rows = run_ablation(_config(args.config), load_dataset(args.data), args.out, log=_log)
    print(ablation_markdown(rows), end="")
    return 1 if any(r.error for r in rows) else 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import OP_CHECKS, run_check, tolerance_for

    if args.op:
        names = [args.op]
    else:
        names = list(OP_CHECKS) + (["model"] if args.full else [])
    failed = 0
    for name in names:
        t0 = time.perf_counter()
        err = run_check(name, args.seed)
        tol = tolerance_for(name)
        ok = err <= tol
        failed += not ok
        _log(f"{'PASS' if ok else 'FAIL'} {name:22s} rel err {err:.2e} (tol {tol:.0e}) {time.perf_counter() - t0:.1f}s")
    _log(f"{len(names) - failed}/{len(names)} checks passed")
    return 1 if failed else 0


def cmd_summary(args) -> int:
    from .trainer import format_summary, model_summary

    print(format_summary(model_summary(_config(args.config))), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seuseg", description="Text-prompted segmentation on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--max-tokens", type=int, default=12)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train with early stopping and write a checkpoint")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--dump", type=Path, help="write PGM predictions and metrics.csv here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the seven-condition ablation table")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--op", help="check one op by name ('model' for the whole network)")
    group.add_argument("--full", action="store_true", help="every op plus the whole network")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("summary", help="parameter and multiply-accumulate counts")
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_summary)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SeusegError as exc:
        print(f"seuseg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"seuseg {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
