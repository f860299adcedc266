"""CSV, SVG and PDF artifacts for analyses and model comparisons.

Every figure is a rendering of a CSV written next to it. SVGs are saved
without a date and with a fixed hash salt so reruns are byte-identical.
"""

import io
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib import font_manager
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.pdfbase import pdfmetrics
from reportlab.pdfbase.pdfmetrics import registerFontFamily
from reportlab.pdfbase.ttfonts import TTFont
from reportlab.platypus import Image, PageBreak, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from drivestyle.distributions import FloatArray
from drivestyle.errors import ContractError, InputError
from drivestyle.models import ComparisonReport
from drivestyle.semantics import DistanceLevel
from drivestyle.styles import (
    DURATION_BIN_LABELS,
    GRID_ACCELS,
    GRID_RATES,
    DurationStats,
    FrequencyDistribution,
    frequency_grid,
    preferred_pattern,
)

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "drivestyle"
HEATMAP_CMAP = "jet"
HEADER_COLOR = "#1f77b4"


def _register_unicode_fonts() -> tuple[str, str]:
    """Register the DejaVu fonts bundled with matplotlib for reportlab.

    Returns the (regular, bold) font names to use, falling back to Helvetica.
    """
    try:
        dejavu_dir = Path(font_manager.findfont(font_manager.FontProperties(family="DejaVu Sans"))).parent
        pdfmetrics.registerFont(TTFont("DejaVuSans", str(dejavu_dir / "DejaVuSans.ttf")))
        pdfmetrics.registerFont(TTFont("DejaVuSans-Bold", str(dejavu_dir / "DejaVuSans-Bold.ttf")))
        registerFontFamily("DejaVuSans", normal="DejaVuSans", bold="DejaVuSans-Bold")
        logger.debug(f"Registered DejaVu fonts from {dejavu_dir}")
        return "DejaVuSans", "DejaVuSans-Bold"
    except Exception as e:
        logger.warning(f"Could not register DejaVu fonts: {e}. Falling back to Helvetica.")
        return "Helvetica", "Helvetica-Bold"


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _save_svg(fig: plt.Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# ============================================================================
# FREQUENCY HEATMAPS
# ============================================================================


def frequency_rows(f: FrequencyDistribution, level: DistanceLevel) -> pd.DataFrame:
    """25 rows of (rate_level, accel_level, probability) in grid order."""
    grid = frequency_grid(f, level)
    rows = [
        {"rate_level": str(rate), "accel_level": str(accel), "probability": float(grid[r, c])}
        for r, rate in enumerate(GRID_RATES)
        for c, accel in enumerate(GRID_ACCELS)
    ]
    return pd.DataFrame(rows, columns=["rate_level", "accel_level", "probability"])


def _heatmap(ax: plt.Axes, grid: FloatArray, title: str) -> None:
    ax.imshow(grid, cmap=HEATMAP_CMAP, origin="lower", vmin=0.0, vmax=max(float(grid.max()), 1e-12))
    ax.set_xticks(range(5), [str(a) for a in GRID_ACCELS])
    ax.set_yticks(range(5), [str(r) for r in GRID_RATES])
    ax.set_xlabel("Acceleration level (i = -2 ... 2)")
    ax.set_ylabel("Range rate level (j = -2 ... 2)")
    ax.set_title(title)
    for r in range(5):
        for c in range(5):
            ax.text(c, r, f"{grid[r, c]:.2f}", ha="center", va="center", fontsize=7, color="white")


def write_frequency_heatmap(f: FrequencyDistribution, level: DistanceLevel, out_dir: Path) -> tuple[Path, Path]:
    """Write ``freq_<driver>_<level>.csv`` and its SVG rendering."""
    stem = f"freq_{f.driver_id}_{level}"
    csv_path = _write_csv(frequency_rows(f, level), out_dir / f"{stem}.csv")
    fig, ax = plt.subplots(figsize=(5, 4.5))
    empty = " (no segments)" if f.is_empty(level) else ""
    _heatmap(ax, frequency_grid(f, level), f"Driver {f.driver_id}, {level}{empty}")
    fig.tight_layout()
    return csv_path, _save_svg(fig, out_dir / f"{stem}.svg")


# ============================================================================
# KL MATRICES
# ============================================================================


def write_kl_matrix(matrix: FloatArray, driver_ids: Sequence[str], level: DistanceLevel, out_dir: Path):
    """M x M divergence CSV (rows: from, columns: to) plus an SVG heatmap."""
    if matrix.shape != (len(driver_ids), len(driver_ids)):
        raise InputError(f"KL matrix shape {matrix.shape} does not match {len(driver_ids)} drivers")
    frame = pd.DataFrame(matrix, columns=list(driver_ids))
    frame.insert(0, "driver", list(driver_ids))
    csv_path = _write_csv(frame, out_dir / f"kl_{level}.csv")

    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * len(driver_ids), 1.0 + 0.6 * len(driver_ids)))
    finite = matrix[np.isfinite(matrix)]
    vmax = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
    image = ax.imshow(np.ma.masked_invalid(matrix), cmap=HEATMAP_CMAP, vmin=0.0, vmax=vmax)
    ax.set_xticks(range(len(driver_ids)), list(driver_ids), rotation=90)
    ax.set_yticks(range(len(driver_ids)), list(driver_ids))
    ax.set_title(f"KL divergence, {level}")
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    return csv_path, _save_svg(fig, out_dir / f"kl_{level}.svg")


# ============================================================================
# MODEL COMPARISON
# ============================================================================


def comparison_rows(report: ComparisonReport) -> pd.DataFrame:
    rows = [
        {
            "model": str(model.kind),
            "fold": fold,
            "training_loglik": model.training_loglik[fold],
            "predictive_loglik": model.predictive_loglik[fold],
            "error": model.errors[fold] or "",
        }
        for model in report.models
        for fold in range(report.k)
    ]
    return pd.DataFrame(rows, columns=["model", "fold", "training_loglik", "predictive_loglik", "error"])


def duration_rows(report: ComparisonReport) -> pd.DataFrame:
    rows = []
    for model in report.models:
        row: dict[str, object] = {"model": str(model.kind), "short_segment_fraction": model.short_segment_fraction}
        row["mean_duration_s"] = model.mean_duration_s
        for label, fraction in zip(DURATION_BIN_LABELS, model.duration_histogram, strict=False):
            row[label] = fraction
        rows.append(row)
    return pd.DataFrame(rows)


def write_comparison(report: ComparisonReport, out_dir: Path) -> list[Path]:
    """comparison.json, comparison.csv, durations_by_model.csv and a bar chart SVG."""
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "comparison.json"
    json_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    paths = [
        json_path,
        _write_csv(comparison_rows(report), out_dir / "comparison.csv"),
        _write_csv(duration_rows(report), out_dir / "durations_by_model.csv"),
    ]

    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 4))
    names = [str(m.kind) for m in report.models]
    for ax, metric, title in (
        (left, "training", "Training log-likelihood"),
        (right, "predictive", "Predictive duration log-likelihood per frame"),
    ):
        means = [getattr(m, f"{metric}_mean") for m in report.models]
        stds = [getattr(m, f"{metric}_std") for m in report.models]
        heights = [np.nan if v is None else v for v in means]
        errors = [0.0 if v is None else v for v in stds]
        ax.bar(names, heights, yerr=errors, capsize=4, color=HEADER_COLOR, alpha=0.8)
        ax.set_title(title, fontsize=10)
        ax.grid(True, axis="y", alpha=0.3)
        ax.tick_params(axis="x", labelrotation=15)
    fig.tight_layout()
    paths.append(_save_svg(fig, out_dir / "comparison.svg"))
    return paths


# ============================================================================
# PDF STYLE REPORT
# ============================================================================


def _heatmap_png(f: FrequencyDistribution) -> io.BytesIO:
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, level in zip(axes, DistanceLevel, strict=True):
        _heatmap(ax, frequency_grid(f, level), str(level))
    fig.suptitle(f"Driver {f.driver_id}")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight", metadata={"Software": None})
    buf.seek(0)
    plt.close(fig)
    return buf


def _styled_table(data: list[list[str]], font: str, bold: str, col_widths: list[float]) -> Table:
    table = Table(data, colWidths=col_widths)
    table.setStyle(
        TableStyle(
            [
                ("FONTNAME", (0, 0), (-1, 0), bold),
                ("FONTNAME", (0, 1), (-1, -1), font),
                ("FONTSIZE", (0, 0), (-1, -1), 8),
                ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor(HEADER_COLOR)),
                ("TEXTCOLOR", (0, 0), (-1, 0), colors.white),
                ("ALIGN", (0, 0), (-1, -1), "CENTER"),
                ("ALIGN", (0, 0), (0, -1), "LEFT"),
                ("GRID", (0, 0), (-1, -1), 0.5, colors.grey),
                ("BOTTOMPADDING", (0, 0), (-1, -1), 4),
                ("TOPPADDING", (0, 0), (-1, -1), 4),
            ]
        )
    )
    return table


def export_style_report_pdf(
    distributions: Sequence[FrequencyDistribution],
    durations: Mapping[str, DurationStats],
    filename: Path,
) -> Path:
    """Preference table, duration table and heatmaps for every driver."""
    if not distributions:
        raise ContractError("style report needs at least one driver")
    font, bold = _register_unicode_fonts()
    doc = SimpleDocTemplate(
        str(filename), pagesize=letter, topMargin=0.75 * inch, bottomMargin=0.75 * inch, invariant=1
    )
    sheet = getSampleStyleSheet()
    title_style = ParagraphStyle(
        "StyleTitle", parent=sheet["Heading1"], fontSize=20, textColor=colors.HexColor(HEADER_COLOR), fontName=bold
    )
    heading_style = ParagraphStyle("StyleHeading", parent=sheet["Heading2"], fontSize=14, fontName=bold)
    story: list[object] = [Paragraph("Driving Style Report", title_style), Spacer(1, 0.2 * inch)]

    story.append(Paragraph("Preferred patterns (i, j)", heading_style))
    preference_data = [["Driver", *[str(level) for level in DistanceLevel]]]
    for f in distributions:
        cells = []
        for level in DistanceLevel:
            cells.append("-" if f.is_empty(level) else preferred_pattern(f, level).format_indices())
        preference_data.append([f.driver_id, *cells])
    story.append(_styled_table(preference_data, font, bold, [1.5 * inch] + [1.6 * inch] * 3))
    story.append(Spacer(1, 0.3 * inch))

    story.append(Paragraph("Segment durations (s)", heading_style))
    duration_data = [["Driver", *DURATION_BIN_LABELS, "Mean", "Std"]]
    for driver_id, stats in durations.items():
        duration_data.append(
            [driver_id, *[f"{x:.4f}" for x in stats.fractions], f"{stats.mean_s:.2f}", f"{stats.std_s:.2f}"]
        )
    story.append(_styled_table(duration_data, font, bold, [0.9 * inch] + [0.55 * inch] * 10))

    for f in distributions:
        story.append(PageBreak())
        story.append(Paragraph(f"Pattern frequencies: driver {f.driver_id}", heading_style))
        story.append(Image(_heatmap_png(f), width=7 * inch, height=2.4 * inch))

    filename.parent.mkdir(parents=True, exist_ok=True)
    doc.build(story)
    logger.info(f"Wrote style report {filename}")
    return filename
