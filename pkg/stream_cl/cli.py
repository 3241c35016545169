import argparse
import logging
import sys
import typing
from pathlib import Path

from rich.console import Console
from rich.table import Table

from stream_cl._logging import configure_logging
from stream_cl.config import DEFAULT_SEEDS, NetScoreParams, load_config
from stream_cl.errors import StreamCLError
from stream_cl.feature_store import ingest, save_dataset, synthesize_gaussian_dataset
from stream_cl.harness import AggregateTable, build_tables, run_matrix, write_tables
from stream_cl.metrics import netscore, read_records, record_netscore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CELL_FAILURES = 1
EXIT_USAGE = 2


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.1f}"


def render_table(table: AggregateTable, console: Console) -> None:
    view = Table(title=table.title)
    view.add_column("")
    for column in table.columns:
        view.add_column(column, justify="right")
    for label, values in table.rows:
        view.add_row(label, *(_fmt(v) for v in values))
    console.print(view)


def _cmd_synth(args: argparse.Namespace, console: Console) -> int:
    ds = synthesize_gaussian_dataset(
        args.classes,
        args.dim,
        args.train_per_class,
        args.test_per_class,
        class_mean_scale=args.scale,
        noise_sigma=args.sigma,
        seed=args.seed,
        group_size=args.group_size,
        video_sigma=args.video_sigma,
        imbalance_ratio=args.imbalance_ratio,
    )
    features_path, manifest_path = save_dataset(ds.features, ds.manifest, args.out, args.name)
    console.print(f"Wrote {features_path} and {manifest_path}")
    return EXIT_OK


def _cmd_ingest(args: argparse.Namespace, console: Console) -> int:
    header = ingest(args.source, args.out, manifest_path=args.manifest)
    console.print(
        f"Wrote {args.out}: {header.n_samples} samples of dimension {header.dim}"
    )
    return EXIT_OK


def _cmd_run(args: argparse.Namespace, console: Console) -> int:
    config = load_config(args.config).with_overrides(
        workers=args.workers, base_seed=args.seed, out=args.out
    )
    result = run_matrix(config, force=args.force, progress=not args.quiet)
    for table in result.tables:
        render_table(table, console)
    console.print(f"Results in {result.run_dir}")
    if not result.ok:
        console.print(f"[red]{len(result.failures)} cell(s) failed[/red]")
        return EXIT_CELL_FAILURES
    return EXIT_OK


def _netscore_params(args: argparse.Namespace) -> NetScoreParams:
    return NetScoreParams(alpha=args.alpha, beta=args.beta, gamma=args.gamma, s=args.scale)


def _cmd_netscore(args: argparse.Namespace, console: Console) -> int:
    params = _netscore_params(args)
    if args.records is not None:
        view = Table(title="netscore")
        for column in ("learner", "ordering", "backbone", "seed", "netscore"):
            view.add_column(column)
        for record in read_records(args.records):
            omega = record_netscore(record, **params.as_kwargs())
            view.add_row(
                record.learner,
                record.ordering,
                record.backbone.name,
                str(record.seed),
                _fmt(omega),
            )
        console.print(view)
        return EXIT_OK

    if args.accuracy is None or args.params is None or args.seconds is None:
        logger.error("Pass --accuracy, --params and --seconds, or --records")
        return EXIT_USAGE
    omega = netscore(args.accuracy, args.params, args.seconds, **params.as_kwargs())
    console.print(f"{omega:.4f}")
    return EXIT_OK


def _cmd_aggregate(args: argparse.Namespace, console: Console) -> int:
    records = read_records(args.records)
    tables = build_tables(records)
    for table in tables:
        render_table(table, console)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        console.print(f"Wrote {write_tables(tables, out)}")
    return EXIT_OK


COMMANDS: dict[str, typing.Callable[[argparse.Namespace, Console], int]] = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "run": _cmd_run,
    "netscore": _cmd_netscore,
    "aggregate": _cmd_aggregate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stream-cl",
        description="Online continual learning over fixed feature vectors.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic Gaussian dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--scale", type=float, default=20.0, help="Norm of class means")
    p.add_argument("--sigma", type=float, default=1.0, help="Per-dimension noise")
    p.add_argument("--group-size", type=int, default=10, help="Frames per pseudo-video")
    p.add_argument("--video-sigma", type=float, default=0.0)
    p.add_argument(
        "--imbalance-ratio",
        type=float,
        default=1.0,
        help="Head-to-tail ratio of per-class train counts (1 = balanced)",
    )
    p.add_argument("--seed", type=int, default=DEFAULT_SEEDS[0])
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", type=Path, default=Path("."))

    p = sub.add_parser("ingest", help="Validate or convert a feature file")
    p.add_argument("source", type=Path, help=".npy, .fvecs or .oclf input")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)

    p = sub.add_parser("run", help="Execute the experiment matrix of a config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="Base seed")
    p.add_argument("--force", action="store_true", help="Rerun cached cells")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("netscore", help="NetScore of a triplet or a records file")
    p.add_argument("--accuracy", type=float, default=None, help="Percent")
    p.add_argument("--params", type=float, default=None)
    p.add_argument("--seconds", type=float, default=None)
    p.add_argument("--records", type=Path, default=None)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--scale", type=float, default=20.0)

    p = sub.add_parser("aggregate", help="Rebuild tables from a records file")
    p.add_argument("records", type=Path, help="records.jsonl or a run directory")
    p.add_argument("--out", type=Path, default=None)

    return parser


def main(argv: typing.Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    configure_logging(level)
    console = Console()
    try:
        return COMMANDS[args.command](args, console)
    except (StreamCLError, FileNotFoundError, FileExistsError, KeyError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
