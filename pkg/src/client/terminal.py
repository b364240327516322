"""Command-line entry point: ``nlab run|probe|grid|gen-data``."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import structlog
from rich.console import Console
from rich.table import Table

from src.models.experiment import DataSource, ExperimentConfig, ExperimentReport
from src.services.data import write_idx
from src.services.harness import build_datasets, grid, load_config, output_root, run, warmup_probe
from src.utils.errors import ConfigurationError, NlabError, UsageError
from src.utils.logging import configure_logging

console = Console()
log = structlog.get_logger(__name__)


def _floats(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _names(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI experiment file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config key (repeatable)",
    )
    parser.add_argument("--seed", help="seed or comma-separated seeds")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--strategy", help="e.g. ce, dividemix-WS-WAW, coteaching+-SS")
    parser.add_argument("--noise-rate", type=float)
    parser.add_argument("--noise-kind", choices=["sym", "asym"])
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING ...")
    parser.add_argument("--json-logs", action="store_true", help="emit JSON log lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlab", description="Desk-scale noisy-label training lab"
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    run_parser = sub.add_parser("run", help="train every configured seed")
    _add_common(run_parser)

    probe = sub.add_parser("probe", help="warm-up loss separation under stochastic strong views")
    _add_common(probe)
    probe.add_argument("--p-strong", type=_floats, default=[0.0, 0.5, 1.0])

    grid_parser = sub.add_parser("grid", help="strategy x noise-rate sweep")
    _add_common(grid_parser)
    grid_parser.add_argument("--strategies", type=_names, required=True)
    grid_parser.add_argument("--noise-rates", type=_floats, required=True)

    gen = sub.add_parser("gen-data", help="export the (noisy) glyph train/test sets as IDX")
    _add_common(gen)
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    items = list(args.overrides)
    named = {
        "run.seeds": args.seed,
        "run.output_dir": args.out,
        "run.strategy": args.strategy,
        "noise.rate": args.noise_rate,
        "noise.kind": args.noise_kind,
    }
    items.extend(f"{key}={value}" for key, value in named.items() if value is not None)
    return items


def _report_table(reports: Sequence[ExperimentReport], title: str) -> Table:
    table = Table(title=title, show_header=True, header_style="bold cyan")
    for column in ("strategy", "seed", "best", "last", "violations"):
        table.add_column(column)
    for report in reports:
        for result in report.results:
            table.add_row(
                report.strategy,
                str(result.seed),
                f"{result.best:.2f}",
                f"{result.last:.2f}",
                str(result.audit_violations),
            )
        stats = report.aggregate()
        table.add_row(
            f"[bold]{report.strategy}[/bold]",
            "mean±sd",
            f"{stats['best_mean']:.2f}±{stats['best_std']:.2f}",
            f"{stats['last_mean']:.2f}±{stats['last_std']:.2f}",
            "",
        )
    return table


def _gen_data(config: ExperimentConfig, out: Path) -> None:
    if config.data.source != DataSource.GLYPHS:
        raise ConfigurationError("gen-data exports glyph datasets only")
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        train, test = build_datasets(config, seed)
        stem = out / f"seed_{seed}"
        write_idx(train, f"{stem}-train-images.idx", f"{stem}-train-labels.idx")
        write_idx(test, f"{stem}-test-images.idx", f"{stem}-test-labels.idx")
        console.print(
            f"[green]seed {seed}: {len(train)} train / {len(test)} test images, "
            f"noise rate {train.noise_rate:.3f} -> {out}[/green]"
        )


def dispatch(args: argparse.Namespace) -> None:
    config = load_config(args.config, _overrides(args))
    if args.command == "run":
        report = run(config)
        console.print(_report_table([report], "Run"))
    elif args.command == "probe":
        results = warmup_probe(config, args.p_strong)
        table = Table(title=f"Warm-up probe at epoch {config.probe_epoch}", header_style="bold cyan")
        table.add_column("p_strong")
        table.add_column("seed")
        table.add_column("AUC")
        for p, items in results.items():
            for item in items:
                auc = "n/a" if item.auc is None else f"{item.auc:.4f}"
                table.add_row(f"{p:g}", str(item.seed), auc)
        console.print(table)
    elif args.command == "grid":
        reports = grid(config, args.strategies, args.noise_rates)
        console.print(_report_table(list(reports.values()), "Grid"))
    elif args.command == "gen-data":
        _gen_data(config, output_root(config))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(level=args.log_level, json=True if args.json_logs else None)
    try:
        dispatch(args)
    except UsageError as e:
        console.print(f"[red]Usage error: {e}[/red]")
        parser.print_usage(sys.stderr)
        return 2
    except NlabError as e:
        console.print(f"[red]Error: {e}[/red]")
        log.error("command_failed", command=args.command, error=str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
