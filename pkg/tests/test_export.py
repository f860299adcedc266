import numpy as np
import pandas as pd
from conftest import make_dataset

from drivestyle.evaluation import CellResult, aggregate, kfold_split
from drivestyle.export import (
    export_style_report_pdf,
    frequency_rows,
    write_comparison,
    write_frequency_heatmap,
    write_kl_matrix,
)
from drivestyle.models import ModelKind
from drivestyle.semantics import AccelLevel, DistanceLevel, PrimitivePattern, RateLevel
from drivestyle.styles import frequency_distribution, summarize_durations


def _distribution(driver_id: str = "d1"):
    patterns = [
        PrimitivePattern(DistanceLevel.ND, RateLevel.FB, AccelLevel.AD),
        PrimitivePattern(DistanceLevel.ND, RateLevel.KE, AccelLevel.NA),
        PrimitivePattern(DistanceLevel.CD, RateLevel.CI, AccelLevel.GD),
    ]
    return frequency_distribution(driver_id, patterns)


def test_frequency_rows_follow_grid_order():
    rows = frequency_rows(_distribution(), DistanceLevel.ND)
    assert len(rows) == 25
    assert tuple(rows.iloc[0][["rate_level", "accel_level"]]) == ("RCI", "AA")
    assert tuple(rows.iloc[-1][["rate_level", "accel_level"]]) == ("RFB", "AD")
    assert rows["probability"].sum() == 1.0


def test_svg_output_is_byte_identical(tmp_path):
    f = _distribution()
    _, first = write_frequency_heatmap(f, DistanceLevel.ND, tmp_path / "a")
    _, second = write_frequency_heatmap(f, DistanceLevel.ND, tmp_path / "b")
    assert first.name == "freq_d1_ND.svg"
    assert first.read_bytes() == second.read_bytes()


def test_empty_level_renders_zeros(tmp_path):
    csv_path, _ = write_frequency_heatmap(_distribution(), DistanceLevel.LD, tmp_path)
    assert (pd.read_csv(csv_path)["probability"] == 0.0).all()


def test_kl_matrix_with_missing_entries(tmp_path):
    matrix = np.array([[0.0, np.nan], [np.nan, np.nan]])
    csv_path, svg_path = write_kl_matrix(matrix, ["a", "b"], DistanceLevel.LD, tmp_path)
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ["driver", "a", "b"]
    assert svg_path.exists()


def test_comparison_artifacts(tmp_path):
    plan = kfold_split(make_dataset(4), 2, seed=0)
    results = [
        CellResult(0, ModelKind.HDP_HSMM, "a", -10.0, -0.5, [0.5, 2.0]),
        CellResult(1, ModelKind.HDP_HSMM, "b", None, None, [], "InputError: boom"),
    ]
    paths = write_comparison(aggregate(results, plan, seed=0, n_iters=2, predictive="map"), tmp_path)
    assert [p.name for p in paths] == ["comparison.json", "comparison.csv", "durations_by_model.csv", "comparison.svg"]
    rows = pd.read_csv(tmp_path / "comparison.csv", keep_default_na=False)
    assert list(rows["error"]) == ["", "InputError: boom"]


def test_style_report_pdf(tmp_path):
    path = export_style_report_pdf(
        [_distribution("a"), _distribution("b")],
        {"a": summarize_durations([0.5, 3.0]), "b": summarize_durations([12.0])},
        tmp_path / "report.pdf",
    )
    assert path.read_bytes().startswith(b"%PDF")
