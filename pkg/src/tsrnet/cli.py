"""Command-line entry point: ``tsrnet {train,eval,infer,gradcheck,params,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig, apply_overrides, load_config
from .data import ImageRGB, load_png, save_png
from .model import build, closed_form_param_count, count_flops, forward

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# reference model size and cost used by `params` to pick the FLOPs input convention
REFERENCE_PARAMS = 2_253_000
REFERENCE_GFLOPS = 181.25
REFERENCE_SIDE = 1024

log = logging.getLogger("tsrnet")


class UsageError(Exception):
    pass


def _resolve_config(args) -> TrainConfig:
    overrides = list(args.override or [])
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = apply_overrides(TrainConfig(), overrides)
    if getattr(args, "output_dir", None):
        cfg.data.output_dir = args.output_dir
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="applied after the config file, in order (repeatable)")


# -- subcommands -----------------------------------------------------------------

def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .trainer import TrainingAborted, train

    cfg = _resolve_config(args)
    print("# effective config")
    print(cfg.to_text(), end="", flush=True)

    def report(row):
        print(f"epoch {row['epoch']}: loss={float(row['mean_loss']):.6g} lr={float(row['lr']):.3g} "
              f"steps={row['steps']} time={row['wall_time_s']}s", flush=True)

    try:
        result = train(cfg, resume=args.resume, on_epoch=report)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.no_plot:
        print(f"loss curve: {plot_training_log(result.log_path)}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .plotting import plot_metric_report
    from .trainer import evaluate

    if not args.bicubic_only and not args.checkpoint:
        raise UsageError("eval needs --checkpoint or --bicubic-only")
    report = evaluate(args.dataset, args.scale, checkpoint=args.checkpoint, lr_dir=args.lr_dir,
                      bicubic_only=args.bicubic_only)
    out = Path(args.output_dir)
    csv_path = out / f"{args.name or Path(args.dataset).name}_x{args.scale}.csv"
    report.write_csv(csv_path)
    print(f"x{args.scale} {report.summary()}")
    print(f"csv: {csv_path}")
    if not args.no_plot:
        print(f"figure: {plot_metric_report(report, csv_path.with_suffix('.png'))}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .trainer import predict

    ck = load_checkpoint(args.checkpoint)
    img = load_png(args.input)
    sr = predict(ck.params, ck.model_config, img.to_float())
    save_png(ImageRGB.from_float(sr), args.output)
    print(f"{args.input} {img.width}x{img.height} -> {args.output} {sr.shape[2]}x{sr.shape[1]}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import CASES, run_suite

    names = args.ops or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown op(s): {', '.join(unknown)}; choose from {', '.join(CASES)}")

    def show(r):
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<14} seed={r.seed} max_rel_err={r.report.max_rel_err:.3e} "
              f"tol={r.tolerance:.0e} checked={r.report.n_checked}", flush=True)

    t0 = time.perf_counter()
    results = run_suite(range(args.seeds), names, on_result=show)
    ok = all(r.passed for r in results)
    print(f"{'all passed' if ok else 'FAILED'}: {sum(r.passed for r in results)}/{len(results)} "
          f"in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_params(args) -> int:
    model = _resolve_config(args).model
    if args.scale:
        model.scale = args.scale
    if args.channels:
        model.channels = args.channels
    model.validate()
    n = closed_form_param_count(model)
    print(f"config: {model.to_dict()}")
    print(f"params: {n} ({n / 1e3:.2f}K, {100 * (n - REFERENCE_PARAMS) / REFERENCE_PARAMS:+.2f}% "
          f"vs {REFERENCE_PARAMS // 1000}K)")
    side = args.side
    conventions = {
        f"LR input {side}x{side}": (side, side),
        f"SR output {side}x{side}": (side // model.scale, side // model.scale),
    }
    best = None
    for label, (h, w) in conventions.items():
        fc = count_flops(model, h, w)
        g = fc.flops / 1e9
        gap = abs(g - REFERENCE_GFLOPS) / REFERENCE_GFLOPS
        print(f"{label}: MACs={fc.macs} FLOPs={fc.flops} ({g:.2f}G, {100 * gap:.1f}% from "
              f"{REFERENCE_GFLOPS}G)")
        if best is None or gap < best[1]:
            best = (label, gap)
    print(f"closer convention: {best[0]}")
    return EXIT_OK


def _bench_model(args):
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        return ck.params, ck.model_config
    model = _resolve_config(args).model
    return build(model, seed=0), model


def cmd_bench(args) -> int:
    from .plotting import plot_bench

    params, model = _bench_model(args)
    dtype = next(iter(params.tensors.values())).dtype
    rng = np.random.default_rng(0)
    rows = []
    for side in args.sizes:
        x = Tensor._wrap(rng.uniform(0, 1, (1, model.in_channels, side, side)).astype(dtype), False)
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            forward(params, model, x)
            times.append(1e3 * (time.perf_counter() - t0))
        row = {"height": side, "width": side, "scale": model.scale, "channels": model.channels,
               "repeats": args.repeats, "median_ms": statistics.median(times)}
        rows.append(row)
        print(f"{side}x{side} x{model.scale}: median {row['median_ms']:.1f} ms over {args.repeats} runs",
              flush=True)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"csv: {out / 'bench.csv'}")
    if not args.no_plot:
        print(f"figure: {plot_bench(rows, out / 'bench.png')}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsrnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    _add_config_args(p)
    p.add_argument("--output-dir", help="overrides data.output_dir")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM over a folder of HR PNGs")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", required=True, help="folder of HR PNG images")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--lr-dir", help="folder of matching LR PNGs (skips synthetic degradation)")
    p.add_argument("--bicubic-only", action="store_true", help="score plain bicubic upscaling")
    p.add_argument("--output-dir", default="eval_out")
    p.add_argument("--name", help="CSV base name (default: dataset folder name)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the model")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--ops", nargs="*", help="subset of cases to run")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter and FLOP counts")
    _add_config_args(p)
    p.add_argument("--scale", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--side", type=int, default=REFERENCE_SIDE)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("bench", help="forward-pass timing (report only)")
    _add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--sizes", type=int, nargs="+", default=[256, 512])
    p.add_argument("--repeats", type=int, default=11)
    p.add_argument("--output-dir", default="bench_out")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, CheckpointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
