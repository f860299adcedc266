"""Main entry point for DriveStyle."""

import argparse
import logging
import sys
from collections.abc import Sequence

from rich.console import Console
from rich.markup import escape

from drivestyle.console import DriveStyleCommands, parse_prior
from drivestyle.dataio import dumps_json
from drivestyle.errors import DriveStyleError, MissingPathError
from drivestyle.models import EmissionMode, ModelKind

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False, quiet: bool = False):
    """Configure logging for the application.

    Logs go to stderr; stdout carries only the JSON summary lines.
    """
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )

    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.getLogger("drivestyle").setLevel(level)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iters", type=int, help="Gibbs sweeps (default from config)")
    parser.add_argument("--burn-in", type=int, help="Sweeps discarded as burn-in (default: half of --iters)")


def build_parser(commands: DriveStyleCommands) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivestyle", description="Segment car-following data into primitive driving patterns"
    )
    parser.add_argument("--seed", type=int, default=0, help="Master random seed")
    parser.add_argument("--threads", type=int, default=1, help="Worker processes for cross-validation")
    parser.add_argument("--out", default="out", help="Output directory")
    parser.add_argument("--config", help="YAML file merged over the packaged defaults")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="Warnings and errors only")

    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str) -> argparse.ArgumentParser:
        command = commands.commands[name]
        return sub.add_parser(name, help=command.description, description=command.help_text)

    synth = add("synth")
    synth.add_argument("--states", type=int, help="Number of true states")
    synth.add_argument("--events", type=int, help="Number of events")
    synth.add_argument("--frames", type=int, help="Frames per event")
    synth.add_argument("--duration-rate", type=float, help="Poisson duration rate shared by all states")
    synth.add_argument("--physical", action="store_true", help="Map the events onto car-following magnitudes")

    fit = add("fit")
    fit.add_argument("data_dir", help="Directory of event CSVs")
    fit.add_argument("--model", choices=[str(k) for k in ModelKind], default=str(ModelKind.HDP_HSMM))
    fit.add_argument("--l-max", type=int, help="Weak-limit truncation level")
    fit.add_argument("--d-max", type=int, help="Maximum segment duration in frames (HSMM)")
    _add_model_flags(fit)
    fit.add_argument("--gamma-prior", type=parse_prior, help="Gamma prior 'shape,rate' on gamma")
    fit.add_argument("--alpha-prior", type=parse_prior, help="Gamma prior 'shape,rate' on alpha")
    fit.add_argument("--kappa-prior", type=parse_prior, help="Gamma prior 'shape,rate' on kappa (sticky)")
    fit.add_argument("--fixed-hypers", action="store_true", help="Keep concentrations at their prior means")
    fit.add_argument("--emission-mode", choices=[str(m) for m in EmissionMode])
    fit.add_argument("--checkpoint", help="Checkpoint path (default: <out>/<model>.json)")

    segment = add("segment")
    segment.add_argument("checkpoint", help="Checkpoint written by fit")
    segment.add_argument("data_dir", help="Directory of event CSVs")
    segment.add_argument("--truth", help="truth.json from synth; reports matched frame accuracy")

    label = add("label")
    label.add_argument("segments_dir", help="Directory of segment CSVs")
    label.add_argument("data_dir", help="Directory of event CSVs in physical units")
    source = label.add_mutually_exclusive_group(required=True)
    source.add_argument("--thresholds", help="Threshold table JSON")
    source.add_argument(
        "--paper-defaults",
        "--default-thresholds",
        dest="default_thresholds",
        action="store_true",
        help="Use the bundled default thresholds",
    )
    source.add_argument("--fit-thresholds", action="store_true", help="Fit thresholds to the pooled data")
    label.add_argument("--print-table", action="store_true", help="Print the threshold table")
    label.add_argument("--family-report", action="store_true", help="Compare four distribution families per variable")

    analyze = add("analyze")
    analyze.add_argument("labeled", nargs="+", help="Labeled CSVs written by label")
    analyze.add_argument("--kl", action="store_true", help="Pairwise KL divergence between drivers")
    analyze.add_argument("--epsilon", type=float, help="KL smoothing constant")
    analyze.add_argument("--pdf", action="store_true", help="Also write style_report.pdf")

    compare = add("compare")
    compare.add_argument("data_dir", help="Directory of event CSVs")
    compare.add_argument("--k", type=int, help="Number of folds (default 10)")
    _add_model_flags(compare)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Main entry point."""
    console = Console(stderr=True)
    commands = DriveStyleCommands(console)
    args = build_parser(commands).parse_args(argv)
    setup_logging(args.verbose, args.quiet)

    try:
        return commands.run(args)
    except MissingPathError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        sys.stderr.write(dumps_json({"status": "error", "errors": [str(e)]}) + "\n")
        return 2
    except (DriveStyleError, OSError) as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        sys.stderr.write(dumps_json({"status": "error", "errors": [f"{type(e).__name__}: {e}"]}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
