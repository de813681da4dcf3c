"""
Command-line driver.

    fit     run one engine on a tensor file and write a run directory
    eval    score a saved model against a tensor file (JSON on stdout)
    synth   generate a ground-truth tensor
    topics  list the top entities of each factor for one mode
    plot    render trace.csv files as an HTML chart

Exit codes: 0 success, 1 data or numeric failure, 2 usage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

import config
from bnbcp.errors import BNBCPError
from bnbcp.evaluation import FitTrace
from bnbcp.model import Hyperparams, load_model_dir
from bnbcp.orchestrator import EXPORT_SAMPLES, METHODS, FitOrchestrator, FitSettings, evaluate_saved_model
from bnbcp.plots import create_rank_histogram_chart, create_trace_chart, write_html
from bnbcp.sparse_tensor import TensorShape
from bnbcp.synthetic import generate, save_synthetic
from bnbcp.topics import load_vocabulary, topic_listing, topics_frame

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def parse_comma_ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def configure_logging(verbose: bool = False, quiet: bool = False):
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format=config.LOG_FORMAT, stream=sys.stderr, force=True)


def add_hyper_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--rank", type=int, required=True, help="Rank upper bound R")
    parser.add_argument("--a", type=float, default=None, help=f"Dirichlet concentration (default {config.DEFAULT_A})")
    parser.add_argument("--g", type=float, default=None, help=f"Gamma shape (default {config.DEFAULT_G})")
    parser.add_argument("--c", type=float, default=None, help=f"Beta concentration (default {config.DEFAULT_C})")
    parser.add_argument("--epsilon", type=float, default=None, help="Beta mean parameter (default 1/R)")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnbcp", description="Beta-negative-binomial CP factorization of count tensors")
    parser.add_argument("--verbose", action="store_true", help="Log per-iteration metrics")
    parser.add_argument("--quiet", action="store_true", help="Log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit a model to a tensor file")
    fit.add_argument("--input", required=True, help="Tensor file")
    fit.add_argument("--outdir", default=config.DEFAULT_OUTDIR, help="Run directory")
    fit.add_argument("--method", required=True, choices=METHODS, help="Inference engine")
    add_hyper_arguments(fit)
    fit.add_argument("--burnin", type=int, default=config.DEFAULT_BURNIN, help="Gibbs burn-in sweeps")
    fit.add_argument("--samples", type=int, default=config.DEFAULT_SAMPLES, help="Gibbs collection sweeps")
    fit.add_argument("--iters", type=int, default=config.DEFAULT_MAX_ITERS, help="VB iterations or online steps")
    fit.add_argument("--tolerance", type=float, default=config.VB_TOLERANCE, help="VB plateau tolerance")
    fit.add_argument("--minibatch", type=int, default=config.DEFAULT_MINIBATCH, help="Online minibatch size B")
    fit.add_argument("--t0", type=float, default=config.DEFAULT_T0, help="Learning-rate delay")
    fit.add_argument("--kappa", type=float, default=config.DEFAULT_KAPPA, help="Learning-rate decay exponent")
    fit.add_argument("--sampling", choices=("uniform", "epoch"), default="uniform", help="Minibatch sampling scheme")
    fit.add_argument("--vb-derivation", choices=("printed", "mean_field"), default="printed",
                     help="Variational allocation weights")
    fit.add_argument("--blend-rate-from-shape", action="store_true", help="Blend lambda_b from the previous lambda_a in SVI")
    fit.add_argument("--heldout-frac", type=float, default=config.DEFAULT_HELDOUT_FRAC, help="Heldout fraction")
    fit.add_argument("--workers", type=int, default=1, help="Allocation threads (1 is bit-reproducible)")
    fit.add_argument("--eval-every", type=int, default=1, help="Trace row every N iterations")
    fit.add_argument("--rank-threshold", type=float, default=config.DEFAULT_RANK_THRESHOLD,
                     help="Relative lambda threshold for effective rank")
    fit.add_argument("--export-sample", choices=EXPORT_SAMPLES, default="mean",
                     help="Gibbs export: posterior mean or last sample")
    fit.add_argument("--sum-duplicates", action="store_true", help="Sum repeated coordinates instead of failing")

    ev = sub.add_parser("eval", help="Score a saved model against a tensor file")
    ev.add_argument("--model", required=True, help="Run directory with mode_k.csv, lambda.csv, p.csv")
    ev.add_argument("--input", required=True, help="Heldout tensor file")
    ev.add_argument("--rank-threshold", type=float, default=config.DEFAULT_RANK_THRESHOLD)

    synth = sub.add_parser("synth", help="Generate a synthetic tensor with planted rank")
    synth.add_argument("--dims", type=parse_comma_ints, required=True, help="Mode sizes, e.g. 30,30,30")
    add_hyper_arguments(synth)
    synth.add_argument("--significant", type=int, required=True, help="Number of planted components R*")
    synth.add_argument("--lambda-scale", type=float, default=config.SYNTH_LAMBDA_SCALE,
                       help="lambda of each planted component")
    synth.add_argument("--blockwise", action="store_true", help="Allow shapes above the dense size cap")
    synth.add_argument("--outdir", default=config.DEFAULT_OUTDIR, help="Output directory")

    topics = sub.add_parser("topics", help="Top entities per factor for one mode")
    topics.add_argument("--model", required=True, help="Run directory")
    topics.add_argument("--mode", type=int, required=True, help="Mode index k")
    topics.add_argument("--top", type=int, default=10, help="Entities per factor")
    topics.add_argument("--vocab", default=None, help="Label file, one label per line")
    topics.add_argument("--significant-only", action="store_true", help="Only factors above the rank threshold")
    topics.add_argument("--rank-threshold", type=float, default=config.DEFAULT_RANK_THRESHOLD)
    topics.add_argument("--output", default=None, help="Also write the listing as CSV")

    plot = sub.add_parser("plot", help="Chart heldout log-likelihood from trace files")
    plot.add_argument("--trace", action="append", required=True, help="trace.csv (repeatable)")
    plot.add_argument("--histogram", default=None, help="rank_histogram.csv of a Gibbs run, charted to a second file")
    plot.add_argument("--output", required=True, help="HTML output path")

    return parser


def cmd_fit(args: argparse.Namespace) -> int:
    settings = FitSettings(
        input_path=args.input, method=args.method, rank=args.rank, outdir=args.outdir,
        seed=args.seed, workers=args.workers, heldout_frac=args.heldout_frac,
        sum_duplicates=args.sum_duplicates, a=args.a, g=args.g, c=args.c, epsilon=args.epsilon,
        eval_every=args.eval_every, rank_threshold=args.rank_threshold,
        burnin=args.burnin, samples=args.samples, export_sample=args.export_sample,
        iters=args.iters, tolerance=args.tolerance, vb_derivation=args.vb_derivation,
        minibatch=args.minibatch, t0=args.t0, kappa=args.kappa, sampling=args.sampling,
        blend_rate_from_shape=args.blend_rate_from_shape
    )
    FitOrchestrator(settings).fit()
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    scores = evaluate_saved_model(args.model, args.input, args.rank_threshold)
    print(json.dumps(scores))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    shape = TensorShape(tuple(args.dims))
    hyper = Hyperparams.defaults(shape.num_modes, args.rank, a=args.a, g=args.g, c=args.c, epsilon=args.epsilon)
    tensor, truth = generate(shape, args.rank, args.significant, args.lambda_scale, hyper, args.seed,
                             blockwise=args.blockwise)
    metadata = {
        'dims': ",".join(str(n) for n in shape.dims),
        'rank': args.rank,
        'significant': args.significant,
        'lambda_scale': args.lambda_scale,
        'seed': args.seed
    }
    save_synthetic(tensor, truth, args.significant, args.outdir, metadata)
    return EXIT_OK


def cmd_topics(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    model = load_model_dir(args.model)
    if not 0 <= args.mode < model.num_modes:
        parser.error(f"--mode must lie in [0, {model.num_modes - 1}] for this model, got {args.mode}")

    vocab = load_vocabulary(args.vocab, model.dims[args.mode]) if args.vocab else None
    topics = topic_listing(model, args.mode, args.top, vocab, args.significant_only, args.rank_threshold)
    for topic in topics:
        print(topic.format())

    if args.output:
        topics_frame(topics).to_csv(args.output, index=False)
        logger.info(f"Topic listing written to {args.output}")
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    traces = {}
    for path in args.trace:
        path = Path(path)
        name = path.parent.name or path.stem
        if name in traces:
            name = str(path)
        traces[name] = FitTrace.from_csv(path)
    write_html(create_trace_chart(traces), args.output)

    if args.histogram:
        histogram = pd.read_csv(args.histogram)
        fig = create_rank_histogram_chart(histogram, title=f"Effective rank ({Path(args.histogram).parent.name})")
        if fig is None:
            logger.warning(f"{args.histogram} holds no samples; no histogram chart written")
        else:
            output = Path(args.output)
            write_html(fig, output.with_name(f"{output.stem}_rank_histogram{output.suffix}"))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    configure_logging(args.verbose, args.quiet)

    try:
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "topics":
            return cmd_topics(args, parser)
        return cmd_plot(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except (BNBCPError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
