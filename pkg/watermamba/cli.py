import argparse
import logging
import statistics
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from ._version import __version__
from .census import ABLATION_OVERALL_PARAMS, ABLATIONS, REFERENCE_MACS_256, REFERENCE_PARAMS, count_breakdown
from .checks import SUITE_NAMES, run_suite
from .config import DEFAULT_CONFIG_PATH, ModelConfig, RuntimeConfig
from .exceptions import ImageFormatException, WeightFileException, WeightStoreException
from .imageio import crop, from_tensor, pad_to_multiple, read_image, resize_for_model, restore_size, to_tensor, write_image
from .metrics import ALL_METRICS, NO_REFERENCE, evaluate_dir
from .network import SIZE_MULTIPLE, build
from .rng import Rng
from .weights import init_weights, load_weights, save_weights

logger = logging.getLogger("watermamba")
console = Console()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CHECK_FAILED = 3


class _Parser(argparse.ArgumentParser):
    """ argparse exits with 2 on bad usage; usage errors here exit with 1. """
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{ self.prog }: error: { message }\n")
        raise SystemExit(EXIT_USAGE)


def setup_logging(level: str):
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )

def _apply_threads(runtime: RuntimeConfig):
    if runtime.WATERMAMBA_THREADS > 0:
        torch.set_num_threads(runtime.WATERMAMBA_THREADS)

def _load_model(weights_path: str):
    store = load_weights(weights_path)
    if store.config is None:
        raise WeightFileException(f"{ weights_path } carries no model config")
    return build(store.config, store), store


def cmd_enhance(args, runtime: RuntimeConfig) -> int:
    _apply_threads(runtime)
    model, _ = _load_model(args.weights)
    image = to_tensor(read_image(args.input))

    started = time.perf_counter()
    policy = runtime.WATERMAMBA_SIZE_POLICY
    if policy == "pad8":
        padded, size = pad_to_multiple(image, SIZE_MULTIPLE)
        enhanced = crop(model(padded), size)
    elif policy == "resize256":
        resized, size = resize_for_model(image)
        enhanced = restore_size(model(resized), size)
    else:
        enhanced = model(image)
    elapsed = time.perf_counter() - started

    write_image(from_tensor(enhanced.clamp(0.0, 1.0)), args.output)
    logger.info(f"Enhanced { args.input } -> { args.output }")
    console.print(f"Wall time: { elapsed:.3f} s")
    return EXIT_OK


def _metric_list(text: Optional[str], has_reference: bool) -> List[str]:
    if text is None:
        return list(ALL_METRICS if has_reference else NO_REFERENCE)
    return [metric.strip().lower() for metric in text.split(",") if metric.strip()]

def cmd_eval(args, runtime: RuntimeConfig) -> int:
    metrics = _metric_list(args.metrics, args.ref is not None)
    workers = runtime.WATERMAMBA_THREADS or None
    report = evaluate_dir(args.in_dir, args.ref, metrics=metrics, strict=args.strict, workers=workers)
    if args.csv is not None:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
        logger.info(f"Wrote { len(report.rows) } rows to { args.csv }")
    console.print(report.to_table(title=f"Metrics for { args.in_dir }"))
    return EXIT_OK


def _census_table(config: ModelConfig, h: int, w: int) -> Table:
    report = count_breakdown(config, h, w)
    table = Table(title=f"Census at { h }x{ w }")
    table.add_column("Module")
    table.add_column("Params", justify="right")
    table.add_column("MACs", justify="right")
    for module, counts in report.by_module().items():
        table.add_row(module, f"{ counts.params:,}", f"{ counts.macs:,}")
    table.add_section()
    table.add_row("total", f"{ report.total_params:,}", f"{ report.total_macs:,}")
    return table

def _ablation_table(config: ModelConfig) -> Table:
    table = Table(title="Ablation variants at 256x256")
    table.add_column("Variant")
    table.add_column("Params", justify="right")
    table.add_column("MACs", justify="right")
    table.add_column("Listed params", justify="right")
    table.add_column("Listed MACs", justify="right")
    for ablation in ABLATIONS:
        report = count_breakdown(ablation.apply(config), 256, 256)
        table.add_row(
            ablation.name,
            f"{ report.total_params / 1e6:.3f}M",
            f"{ report.total_macs / 1e9:.3f}G",
            f"{ ablation.listed_params / 1e6:.2f}M",
            f"{ ablation.listed_macs / 1e9:.2f}G",
        )
    return table

def cmd_inspect(args, runtime: RuntimeConfig) -> int:
    if args.weights is not None:
        store = load_weights(args.weights)
        if store.config is None:
            raise WeightFileException(f"{ args.weights } carries no model config")
        store.validate(store.config)
        config = store.config
    else:
        config = ModelConfig.from_file(args.config)
    h, w = args.size
    console.print(_census_table(config, h, w))
    report = count_breakdown(config, 256, 256)
    console.print(
        f"Reference figures: { REFERENCE_PARAMS / 1e6:.2f}M params and { REFERENCE_MACS_256 / 1e9:.2f}G MACs at 256x256 "
        f"(the ablation listing gives { ABLATION_OVERALL_PARAMS / 1e6:.2f}M params for the same model). "
        f"This config: { report.total_params / 1e6:.3f}M params "
        f"({ 100 * (report.total_params / REFERENCE_PARAMS - 1):+.1f}%), "
        f"{ report.total_macs / 1e9:.3f}G MACs ({ 100 * (report.total_macs / REFERENCE_MACS_256 - 1):+.1f}%)."
    )
    if args.ablations:
        console.print(_ablation_table(config))
    return EXIT_OK


def _parse_sizes(text: str) -> List[int]:
    try:
        sizes = [int(size) for size in text.split(",") if size.strip()]
    except ValueError:
        raise ValueError(f"Sizes must be comma-separated integers, got '{ text }'")
    bad = [size for size in sizes if size <= 0 or size % SIZE_MULTIPLE != 0]
    if not sizes or bad:
        raise ValueError(f"Bench sizes must be positive multiples of { SIZE_MULTIPLE }, got { text }")
    return sizes

def cmd_bench(args, runtime: RuntimeConfig) -> int:
    sizes = _parse_sizes(args.sizes)
    if args.repeats < 1:
        raise ValueError("--repeats must be at least 1")
    _apply_threads(runtime)
    config = ModelConfig.from_file(args.config)
    model = build(config, init_weights(config, args.seed))
    rng = Rng(args.seed)

    lines = ["size,median_seconds,seconds_per_pixel,repeats"]
    for size in sizes:
        image = torch.from_numpy(rng.uniform(3 * size * size).astype(np.float32).reshape(1, 3, size, size))
        timings = []
        for _ in range(args.repeats):
            started = time.perf_counter()
            model(image)
            timings.append(time.perf_counter() - started)
        median = statistics.median(timings)
        lines.append(f"{ size },{ median!r},{ median / (size * size)!r},{ args.repeats }")
        logger.info(f"{ size }x{ size }: median { median:.4f} s over { args.repeats } runs")

    text = "\n".join(lines) + "\n"
    if args.csv is not None:
        Path(args.csv).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args, runtime: RuntimeConfig) -> int:
    results = run_suite(args.suite)
    table = Table(title=f"Check suite: { args.suite }")
    table.add_column("Suite")
    table.add_column("Property")
    table.add_column("Result")
    table.add_column("Detail")
    for result in results:
        for prop in result.properties:
            table.add_row(result.suite, prop.name, "[green]pass[/green]" if prop.passed else "[red]FAIL[/red]", prop.detail)
    console.print(table)
    return EXIT_OK if all(result.passed for result in results) else EXIT_CHECK_FAILED


def cmd_init_weights(args, runtime: RuntimeConfig) -> int:
    config = ModelConfig.from_file(args.config)
    store = init_weights(config, args.seed)
    save_weights(store, args.output)
    console.print(_census_table(config, 256, 256))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="watermamba", description="WaterMamba underwater image enhancement toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default=None, help="overrides WATERMAMBA_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    enhance = commands.add_parser("enhance", help="enhance one image")
    enhance.add_argument("-i", "--input", required=True)
    enhance.add_argument("-o", "--output", required=True)
    enhance.add_argument("-w", "--weights", required=True)
    policy = enhance.add_mutually_exclusive_group()
    policy.add_argument("--pad8", dest="size_policy", action="store_const", const="pad8",
                        help="reflect-pad to a multiple of 8 and crop back (default)")
    policy.add_argument("--resize-256", dest="size_policy", action="store_const", const="resize256",
                        help="resize to 256x256 and back")
    policy.add_argument("--no-pad", dest="size_policy", action="store_const", const="none",
                        help="feed the image as is; H and W must be multiples of 8")
    enhance.add_argument("--threads", type=int, default=None)
    enhance.set_defaults(handler=cmd_enhance)

    evaluate = commands.add_parser("eval", help="score a directory of images")
    evaluate.add_argument("--in", dest="in_dir", required=True)
    evaluate.add_argument("--ref", default=None)
    evaluate.add_argument("--metrics", default=None, help=f"comma-separated subset of { ','.join(ALL_METRICS) }")
    evaluate.add_argument("--csv", default=None)
    evaluate.add_argument("--strict", action="store_true", help="fail on malformed images instead of skipping them")
    evaluate.add_argument("--threads", type=int, default=None)
    evaluate.set_defaults(handler=cmd_eval)

    inspect = commands.add_parser("inspect", help="parameter and MAC census")
    source = inspect.add_mutually_exclusive_group(required=True)
    source.add_argument("--config")
    source.add_argument("--weights")
    inspect.add_argument("--size", nargs=2, type=int, default=[256, 256], metavar=("H", "W"))
    inspect.add_argument("--ablations", action="store_true", help="also count the variants of the ablation listing")
    inspect.set_defaults(handler=cmd_inspect)

    bench = commands.add_parser("bench", help="time forward passes at several sizes")
    bench.add_argument("--sizes", default="128,256,512")
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--config", default=str(DEFAULT_CONFIG_PATH))
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--csv", default=None)
    bench.add_argument("--threads", type=int, default=None)
    bench.set_defaults(handler=cmd_bench)

    check = commands.add_parser("check", help="run the property suites")
    check.add_argument("--suite", choices=SUITE_NAMES, default="all")
    check.set_defaults(handler=cmd_check)

    init = commands.add_parser("init-weights", help="write a seeded weight file")
    init.add_argument("--config", default=str(DEFAULT_CONFIG_PATH))
    init.add_argument("--seed", type=int, default=0)
    init.add_argument("-o", "--output", required=True)
    init.set_defaults(handler=cmd_init_weights)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        runtime = RuntimeConfig({
            "threads": getattr(args, "threads", None),
            "size_policy": getattr(args, "size_policy", None),
            "log_level": args.log_level,
        })
    except ValueError as e:
        setup_logging("INFO")
        logger.error(str(e))
        return EXIT_USAGE
    setup_logging(runtime.WATERMAMBA_LOG_LEVEL)

    try:
        return args.handler(args, runtime)
    except (OSError, ImageFormatException, WeightFileException, WeightStoreException) as e:
        logger.error(str(e))
        return EXIT_IO
    except ValueError as e:
        logger.error(str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
