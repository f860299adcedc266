"""Command handlers for the drivestyle CLI.

Status lines and tables go to a rich console on stderr. Machine-readable
summaries are written to stdout as single JSON lines.
"""

import argparse
import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from drivestyle.config import Settings, SyntheticBenchmark, load_settings
from drivestyle.dataio import (
    DriverDataset,
    apply_normalization,
    default_benchmark_params,
    dumps_json,
    generate_synthetic,
    load_checkpoint,
    load_events,
    load_segments,
    load_truth,
    normalize,
    pooled_frames,
    to_physical,
    write_checkpoint,
    write_events,
    write_segments,
    write_truth,
)
from drivestyle.distributions import make_rng
from drivestyle.errors import EventFileError, InputError, MissingPathError
from drivestyle.evaluation import compare_models, frame_accuracy
from drivestyle.export import export_style_report_pdf, write_comparison, write_frequency_heatmap, write_kl_matrix
from drivestyle.inference import fit
from drivestyle.markov import Segmentation, emission_loglik, map_segmentation
from drivestyle.models import ComparisonReport, InferenceConfig, ModelKind, ThresholdTable
from drivestyle.semantics import (
    AccelLevel,
    DistanceLevel,
    LabeledSegment,
    PrimitivePattern,
    RateLevel,
    compute_thresholds,
    default_thresholds,
    describe_event,
    family_report,
    label_event,
    load_thresholds,
    preference_index,
    semantic_sentence,
    threshold_rows,
)
from drivestyle.styles import (
    DURATION_BIN_LABELS,
    DurationStats,
    FrequencyDistribution,
    driver_distinctness,
    frequency_distribution,
    kl_matrix,
    preferred_pattern,
    summarize_durations,
)

logger = logging.getLogger(__name__)

LABELED_COLUMNS = [
    "driver_id",
    "event_id",
    "seg_idx",
    "state",
    "start_s",
    "duration_s",
    "delta_d",
    "delta_v",
    "a_x",
    "distance",
    "rate",
    "accel",
    "i",
    "j",
    "sentence",
]

Handler = Callable[[argparse.Namespace], int]


@dataclass(frozen=True)
class Command:
    name: str
    handler: Handler
    description: str
    help_text: str


def parse_prior(text: str) -> tuple[float, float]:
    """Parse an ``a,b`` Gamma prior flag."""
    try:
        shape, rate = (float(x) for x in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected 'shape,rate', got {text!r}") from e
    if shape <= 0 or rate <= 0:
        raise argparse.ArgumentTypeError(f"prior parameters must be positive, got {text!r}")
    return shape, rate


def _require_dir(path: str) -> Path:
    directory = Path(path)
    if not directory.is_dir():
        raise MissingPathError(f"directory not found: {directory}")
    return directory


def _require_file(path: str) -> Path:
    file = Path(path)
    if not file.is_file():
        raise MissingPathError(f"file not found: {file}")
    return file


class DriveStyleCommands:
    """Registry of the pipeline commands and their handlers."""

    def __init__(self, console: Console | None = None):
        self.console = console or Console(stderr=True)
        self.commands: dict[str, Command] = {}
        self.settings = Settings()
        self.out = Path("out")
        self.seed = 0
        self.threads = 1

        self.register_command(
            "synth",
            self._handle_synth,
            "Generate the synthetic HSMM benchmark",
            "Writes <out>/events/*.csv, <out>/events/manifest.json and <out>/truth.json",
        )
        self.register_command(
            "fit",
            self._handle_fit,
            "Fit a segmentation model to a driver's events",
            "Normalizes the events, runs the Gibbs sampler and writes a checkpoint",
        )
        self.register_command(
            "segment",
            self._handle_segment,
            "Write MAP segmentations of every event",
            "Writes <out>/segments/<event_id>.csv; with --truth also reports frame accuracy",
        )
        self.register_command(
            "label",
            self._handle_label,
            "Label segments with primitive driving patterns",
            "Writes <out>/labeled.csv and <out>/sentences.txt",
        )
        self.register_command(
            "analyze",
            self._handle_analyze,
            "Pattern frequencies, preferences, durations and KL divergence",
            "Reads labeled CSVs of one or more drivers and writes the analysis artifacts to <out>",
        )
        self.register_command(
            "compare",
            self._handle_compare,
            "Cross-validate the three models",
            "Writes comparison.json, comparison.csv, comparison.svg and durations_by_model.csv",
        )

    def register_command(self, name: str, handler: Handler, description: str, help_text: str) -> None:
        self.commands[name] = Command(name, handler, description, help_text)

    def run(self, args: argparse.Namespace) -> int:
        """Apply the global flags and dispatch to the command's handler."""
        command = self.commands.get(args.command)
        if command is None:
            raise InputError(f"unknown command {args.command!r}")
        self.settings = load_settings(Path(args.config) if args.config else None)
        self.out = Path(args.out)
        self.seed = args.seed
        self.threads = max(1, args.threads)
        return command.handler(args)

    def _emit(self, payload: dict[str, object]) -> None:
        sys.stdout.write(dumps_json(payload) + "\n")
        sys.stdout.flush()

    @property
    def _progress(self) -> bool:
        return sys.stderr.isatty()

    # ============================================================================
    # synth
    # ============================================================================

    def _handle_synth(self, args: argparse.Namespace) -> int:
        overrides = {
            "n_states": args.states,
            "n_events": args.events,
            "n_frames": args.frames,
            "duration_rate": args.duration_rate,
        }
        try:
            spec = SyntheticBenchmark.model_validate(
                {**self.settings.synthetic.model_dump(), **{k: v for k, v in overrides.items() if v is not None}}
            )
        except ValidationError as e:
            raise InputError(f"invalid synthetic settings: {e}") from e
        self.console.print(
            f"[dim]▶ Generating {spec.n_events} events x {spec.n_frames} frames with {spec.n_states} states...[/dim]"
        )
        params = default_benchmark_params(spec)
        dataset, truth = generate_synthetic(
            params, spec.n_events, spec.n_frames, self.seed, spec.rate_hz, spec.driver_id
        )
        if args.physical:
            dataset = to_physical(dataset, spec.physical_offset, spec.physical_scale)

        written = write_events(dataset, self.out / "events")
        truth_path = self.out / "truth.json"
        write_truth(truth, truth_path, spec.rate_hz)
        self.console.print(f"[green]✓ Wrote {len(written)} event files and {truth_path}[/green]")
        self._emit({"status": "ok", "command": "synth", "events": len(dataset.events), "truth": str(truth_path)})
        return 0

    # ============================================================================
    # fit
    # ============================================================================

    def _inference_config(self, args: argparse.Namespace, kind: ModelKind) -> InferenceConfig:
        overrides: dict[str, object] = {
            "l_max": getattr(args, "l_max", None),
            "d_max": getattr(args, "d_max", None),
            "n_iters": getattr(args, "iters", None),
            "burn_in": getattr(args, "burn_in", None),
            "gamma_prior": getattr(args, "gamma_prior", None),
            "alpha_prior": getattr(args, "alpha_prior", None),
            "kappa_prior": getattr(args, "kappa_prior", None),
            "emission_mode": getattr(args, "emission_mode", None),
        }
        if getattr(args, "fixed_hypers", False):
            overrides["resample_hypers"] = False
        if overrides["n_iters"] is not None and overrides["burn_in"] is None:
            overrides["burn_in"] = int(overrides["n_iters"]) // 2  # type: ignore[arg-type]
        try:
            return InferenceConfig.from_defaults(self.settings.inference, kind, self.seed, **overrides)
        except ValueError as e:
            raise InputError(f"invalid model settings: {e}") from e

    def _handle_fit(self, args: argparse.Namespace) -> int:
        dataset = load_events(_require_dir(args.data_dir))
        config = self._inference_config(args, ModelKind(args.model))
        normalized = normalize(dataset)
        self.console.print(
            f"[dim]▶ Fitting {config.model_kind} to {len(dataset.events)} events ({config.n_iters} sweeps)...[/dim]"
        )
        result = fit(config, normalized.frames(), make_rng(self.seed), progress=self._progress)

        checkpoint = Path(args.checkpoint) if args.checkpoint else self.out / f"{config.model_kind}.json"
        write_checkpoint(result, normalized, checkpoint)
        self.console.print(f"[green]✓ Checkpoint saved to {checkpoint}[/green]")
        self._emit(
            {
                "status": "ok",
                "command": "fit",
                "model": str(config.model_kind),
                "occupied_states": len(result.occupied_states),
                "final_loglik": result.loglik_trace[-1],
                "checkpoint": str(checkpoint),
            }
        )
        return 0

    # ============================================================================
    # segment
    # ============================================================================

    def _handle_segment(self, args: argparse.Namespace) -> int:
        state, record = load_checkpoint(_require_file(args.checkpoint))
        dataset = load_events(_require_dir(args.data_dir))
        mean = np.array(record.normalization.mean)
        std = np.array(record.normalization.std)
        dim = dataset.events[0].frames.shape[1]
        if mean.shape[0] != dim:
            raise InputError(f"checkpoint expects {mean.shape[0]} features, data has {dim}")
        normalized = apply_normalization(dataset, mean, std)

        out_dir = self.out / "segments"
        params = state.params
        decoded: dict[str, Segmentation] = {}
        for event in normalized.events:
            segmentation = map_segmentation(emission_loglik(params, event.frames), params)
            write_segments(out_dir, event, segmentation)
            decoded[event.event_id] = segmentation
        n_segments = sum(len(s.segments) for s in decoded.values())
        self.console.print(f"[green]✓ Wrote {n_segments} segments for {len(decoded)} events to {out_dir}[/green]")

        payload: dict[str, object] = {"status": "ok", "command": "segment", "events": len(decoded)}
        if args.truth:
            truth = load_truth(_require_file(args.truth))
            missing = sorted(set(decoded) - set(truth.segmentations))
            if missing:
                raise InputError(f"truth file has no segmentation for {', '.join(missing)}")
            ids = sorted(decoded)
            payload["frame_accuracy"] = frame_accuracy([truth.segmentations[i] for i in ids], [decoded[i] for i in ids])
        self._emit(payload)
        return 0

    # ============================================================================
    # label
    # ============================================================================

    def _thresholds(self, args: argparse.Namespace, dataset: DriverDataset) -> ThresholdTable:
        if args.default_thresholds:
            return default_thresholds()
        if args.thresholds:
            return load_thresholds(_require_file(args.thresholds))
        pooled = pooled_frames(dataset)
        table = compute_thresholds(pooled[:, 0], pooled[:, 1], pooled[:, 2], self.settings.thresholds)
        path = self.out / "thresholds.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(table.model_dump_json(indent=2) + "\n", encoding="utf-8")
        self.console.print(f"[green]✓ Fitted thresholds saved to {path}[/green]")
        return table

    def _print_thresholds(self, table: ThresholdTable) -> None:
        grid = Table(title=f"Variable segmentation ({table.source})")
        for column in ("Variable", "Level", "Lower", "Upper"):
            grid.add_column(column)
        for variable, level, lower, upper in threshold_rows(table):
            grid.add_row(variable, level, f"{lower:.2f}", f"{upper:.2f}")
        self.console.print(grid)

    def _write_family_report(self, dataset: DriverDataset) -> None:
        pooled = pooled_frames(dataset)
        report = family_report(pooled[:, 0], pooled[:, 1], pooled[:, 2])
        rows = [
            {
                "variable": str(variable),
                "family": str(f.family),
                "loglik": f.loglik,
                "params": " ".join(map(repr, f.params)),
            }
            for variable, fits in report.items()
            for f in fits
        ]
        path = self.out / "family_report.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=["variable", "family", "loglik", "params"]).to_csv(
            path, index=False, lineterminator="\n"
        )
        grid = Table(title="Distribution fits (best first)")
        for column in ("Variable", "Family", "Log-likelihood"):
            grid.add_column(column)
        for row in rows:
            grid.add_row(str(row["variable"]), str(row["family"]), f"{row['loglik']:.1f}")
        self.console.print(grid)

    def _handle_label(self, args: argparse.Namespace) -> int:
        segments_dir = _require_dir(args.segments_dir)
        dataset = load_events(_require_dir(args.data_dir))
        table = self._thresholds(args, dataset)
        if args.print_table:
            self._print_thresholds(table)
        if args.family_report:
            self._write_family_report(dataset)

        files = sorted(segments_dir.glob("*.csv"))
        if not files:
            raise EventFileError(str(segments_dir), "no segment CSV files found")

        rows: list[dict[str, object]] = []
        narrative: list[str] = []
        for path in files:
            event_id, segmentation = load_segments(path, dataset.rate_hz)
            event = dataset.event(event_id)
            if segmentation.n_frames != event.n_frames:
                raise EventFileError(
                    str(path), f"segments cover {segmentation.n_frames} frames, event has {event.n_frames}"
                )
            labeled = label_event(event_id, event.frames, segmentation.segments, table)
            rows.extend(self._labeled_row(dataset, item, k) for k, item in enumerate(labeled))
            narrative.append(f"# {event_id}")
            narrative.extend(describe_event(labeled, dataset.rate_hz))

        self.out.mkdir(parents=True, exist_ok=True)
        labeled_path = self.out / "labeled.csv"
        pd.DataFrame(rows, columns=LABELED_COLUMNS).to_csv(labeled_path, index=False, lineterminator="\n")
        (self.out / "sentences.txt").write_text("\n".join(narrative) + "\n", encoding="utf-8")
        self.console.print(f"[green]✓ Labeled {len(rows)} segments into {labeled_path}[/green]")
        self._emit({"status": "ok", "command": "label", "segments": len(rows), "thresholds": table.source})
        return 0

    @staticmethod
    def _labeled_row(dataset: DriverDataset, item: LabeledSegment, k: int) -> dict[str, object]:
        i, j = preference_index(item.pattern)
        rep = item.representative
        return {
            "driver_id": dataset.driver_id,
            "event_id": item.event_id,
            "seg_idx": k,
            "state": item.segment.state,
            "start_s": item.segment.start / dataset.rate_hz,
            "duration_s": item.segment.duration / dataset.rate_hz,
            "delta_d": float(rep[0]),
            "delta_v": float(rep[1]),
            "a_x": float(rep[2]),
            "distance": str(item.pattern.distance),
            "rate": str(item.pattern.rate),
            "accel": str(item.pattern.accel),
            "i": i,
            "j": j,
            "sentence": semantic_sentence(item.pattern),
        }

    # ============================================================================
    # analyze
    # ============================================================================

    def _read_labeled(self, paths: list[str]) -> pd.DataFrame:
        frames: list[pd.DataFrame] = []
        for name in paths:
            path = _require_file(name)
            try:
                df = pd.read_csv(path, dtype={"driver_id": str, "event_id": str}, float_precision="round_trip")
            except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
                raise EventFileError(str(path), f"malformed labeled file: {e}") from e
            missing = [c for c in LABELED_COLUMNS if c not in df.columns]
            if missing:
                raise EventFileError(str(path), f"missing columns {', '.join(missing)}", line=1)
            frames.append(df)
        return pd.concat(frames, ignore_index=True)

    def _handle_analyze(self, args: argparse.Namespace) -> int:
        labeled = self._read_labeled(args.labeled)
        if labeled.empty:
            raise InputError("labeled inputs contain no segments")
        driver_ids = list(dict.fromkeys(labeled["driver_id"]))
        if args.kl and len(driver_ids) < 2:
            raise InputError(f"--kl needs at least 2 drivers, got {len(driver_ids)}")

        out = self.out
        distributions: list[FrequencyDistribution] = []
        durations: dict[str, DurationStats] = {}
        for driver_id in driver_ids:
            rows = labeled[labeled["driver_id"] == driver_id]
            try:
                patterns = [
                    PrimitivePattern(DistanceLevel(r.distance), RateLevel(r.rate), AccelLevel(r.accel))
                    for r in rows.itertuples(index=False)
                ]
            except ValueError as e:
                raise InputError(f"driver {driver_id}: unknown level in labeled input ({e})") from e
            f = frequency_distribution(driver_id, patterns)
            distributions.append(f)
            durations[driver_id] = summarize_durations(rows["duration_s"].to_numpy(dtype=np.float64))
            for level in DistanceLevel:
                write_frequency_heatmap(f, level, out / "frequencies")

        self._write_preferences(distributions, out / "preferences.csv")
        self._write_durations(durations, out / "durations.csv")
        labeled[["driver_id", "event_id", "seg_idx", "delta_d", "delta_v", "a_x", "distance", "rate", "accel"]].to_csv(
            out / "representatives.csv", index=False, lineterminator="\n"
        )

        if args.kl:
            epsilon = args.epsilon if args.epsilon is not None else self.settings.styles.kl_epsilon
            matrices = kl_matrix(distributions, epsilon)
            for level, matrix in matrices.items():
                write_kl_matrix(matrix, driver_ids, level, out / "kl")
            distinct = driver_distinctness(matrices, driver_ids)
            pd.DataFrame(
                [(d.driver_id, str(d.distance), d.divergence_to_others, d.divergence_from_others) for d in distinct],
                columns=["driver_id", "distance", "divergence_to_others", "divergence_from_others"],
            ).to_csv(out / "distinctness.csv", index=False, lineterminator="\n")

        if args.pdf:
            export_style_report_pdf(distributions, durations, out / "style_report.pdf")

        self._print_preferences(distributions)
        self.console.print(f"[green]✓ Analysis of {len(driver_ids)} drivers written to {out}[/green]")
        self._emit({"status": "ok", "command": "analyze", "drivers": len(driver_ids), "kl": bool(args.kl)})
        return 0

    @staticmethod
    def _write_preferences(distributions: list[FrequencyDistribution], path: Path) -> None:
        rows = []
        for f in distributions:
            for level in DistanceLevel:
                if f.is_empty(level):
                    rows.append((f.driver_id, str(level), "", "", None, False))
                    continue
                pref = preferred_pattern(f, level)
                codes = " ".join(p.code for p in pref.patterns)
                rows.append((f.driver_id, str(level), pref.format_indices(), codes, pref.probability, pref.is_tie))
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=["driver_id", "distance", "index_ij", "patterns", "probability", "tie"]).to_csv(
            path, index=False, lineterminator="\n"
        )

    @staticmethod
    def _write_durations(durations: dict[str, DurationStats], path: Path) -> None:
        rows = []
        for driver_id, s in durations.items():
            row: dict[str, object] = {"driver_id": driver_id}
            row.update(zip(DURATION_BIN_LABELS, s.fractions, strict=True))
            row.update({"mean_s": s.mean_s, "std_s": s.std_s, "n_segments": s.n_segments})
            rows.append(row)
        pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")

    def _print_preferences(self, distributions: list[FrequencyDistribution]) -> None:
        grid = Table(title="Preferred patterns (i, j)")
        grid.add_column("Driver")
        for level in DistanceLevel:
            grid.add_column(str(level))
        for f in distributions:
            cells = [
                "-" if f.is_empty(level) else preferred_pattern(f, level).format_indices() for level in DistanceLevel
            ]
            grid.add_row(f.driver_id, *cells)
        self.console.print(grid)

    # ============================================================================
    # compare
    # ============================================================================

    def _handle_compare(self, args: argparse.Namespace) -> int:
        dataset = load_events(_require_dir(args.data_dir))
        k = args.k if args.k is not None else self.settings.evaluation.k
        configs = {kind: self._inference_config(args, kind) for kind in ModelKind}
        self.console.print(f"[dim]▶ Cross-validating {len(configs)} models over {k} folds...[/dim]")
        report = compare_models(
            dataset,
            configs,
            k=k,
            seed=self.seed,
            threads=self.threads,
            batch_size=self.settings.evaluation.batch_size,
            predictive=self.settings.evaluation.predictive,
            progress=self._progress,
        )
        paths = write_comparison(report, self.out)
        self._print_comparison(report)
        errors = [
            f"fold {fold} {model.kind}: {error}"
            for model in report.models
            for fold, error in enumerate(model.errors)
            if error is not None
        ]
        if errors:
            self.console.print(f"[red]Error: {len(errors)} cross-validation cells failed[/red]")
            sys.stderr.write(dumps_json({"status": "error", "errors": errors}) + "\n")
            return 1
        self.console.print(f"[green]✓ Comparison written to {paths[0].parent}[/green]")
        self._emit({"status": "ok", "command": "compare", "k": k, "models": [str(m.kind) for m in report.models]})
        return 0

    def _print_comparison(self, report: ComparisonReport) -> None:
        grid = Table(title=f"{report.k}-fold comparison")
        for column in ("Model", "Training loglik", "Predictive loglik / frame", "Segments < 1 s"):
            grid.add_column(column)

        def fmt(mean: float | None, std: float | None) -> str:
            return "n/a" if mean is None else f"{mean:.4f} ± {std or 0.0:.4f}"

        for m in report.models:
            short = "n/a" if m.short_segment_fraction is None else f"{m.short_segment_fraction:.4f}"
            training = fmt(m.training_mean, m.training_std)
            grid.add_row(str(m.kind), training, fmt(m.predictive_mean, m.predictive_std), short)
        self.console.print(grid)
