"""Command-line entry point: ``inttrain <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .baseline import estimate_memory
from .config import ConfigError, load_config
from .experiment import evaluate_saved, run_experiment, summarize
from .inttensor import QTensor8, ScaleExp, int_matmul
from .rescale import build_rescale_table

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(path: str):
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.metrics:
        cfg.metrics_path = args.metrics
    if args.weights:
        cfg.weights_path = args.weights
    records = run_experiment(cfg)
    print(summarize(records))
    print(f"metrics written to {cfg.metrics_path}")
    if cfg.weights_path:
        print(f"weights written to {cfg.weights_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    if not Path(args.weights).is_file():
        raise UsageError(f"weights file not found: {args.weights}")
    print(json.dumps(evaluate_saved(cfg, args.weights)))
    return EXIT_OK


def cmd_estimate_mem(args) -> int:
    cfg = _config(args.config)
    spec = cfg.model_spec()
    batch = args.batch or cfg.batch_size
    rows = [("int8", estimate_memory(spec, batch, 1)), ("fp32", estimate_memory(spec, batch, 4))]
    print(f"{'type':<6}{'params':>10}{'acts':>10}{'dynamic':>10}{'total':>10}")
    for name, est in rows:
        print(f"{name:<6}{est.params_bytes:>10}{est.activations_bytes:>10}{est.dynamic_bytes:>10}{est.total_bytes:>10}")
    print(f"int8/fp32 = {rows[0][1].total_bytes / rows[1][1].total_bytes:.3f}")
    return EXIT_OK


def cmd_table(args) -> int:
    print(f"{'q_ratio':>10}  {'scale adj':>10}  {'(S, U, D)':<12}")
    for entry in build_rescale_table():
        d = entry.delta
        print(f"{str(entry.q_ratio):>10}  {str(entry.adjustment):>10}  ({d.S}, {d.U}, {d.D})")
    return EXIT_OK


def cmd_bench_matmul(args) -> int:
    if args.size <= 0 or args.reps <= 0:
        raise UsageError("--size and --reps must be positive")
    rng = np.random.default_rng(args.seed)
    n = args.size
    a = QTensor8(rng.integers(-127, 128, size=(n, n)), ScaleExp(), signed=True)
    w = QTensor8(rng.integers(-127, 128, size=(n, n)), ScaleExp(), signed=True)
    af = a.data.astype(np.float32)
    wf = w.data.astype(np.float32)

    def best(fn):
        times = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times) * 1e6

    t_int = best(lambda: int_matmul(a, w))
    t_fp = best(lambda: af @ wf)
    print(f"size {n}x{n}, best of {args.reps}")
    print(f"int8 matmul: {t_int:.1f} us")
    print(f"fp32 matmul: {t_fp:.1f} us")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="inttrain", description="Integer-only neural network training.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train per a config file, writing JSONL metrics")
    t.add_argument("config")
    t.add_argument("--metrics", help="override metrics_path")
    t.add_argument("--weights", help="override weights_path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate saved weights on the config's eval sets")
    e.add_argument("config")
    e.add_argument("weights")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("estimate-mem", help="training memory estimate, int8 vs fp32")
    m.add_argument("config")
    m.add_argument("--batch", type=int, help="override batch size")
    m.set_defaults(func=cmd_estimate_mem)

    tb = sub.add_parser("table", help="print the rescale table")
    tb.set_defaults(func=cmd_table)

    b = sub.add_parser("bench-matmul", help="int8 vs fp32 matmul wall-clock")
    b.add_argument("--size", type=int, default=64)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench_matmul)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits 0 through argparse
        return int(exc.code or 0)
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
