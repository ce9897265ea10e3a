import os

import numpy as np
import pytest

from viq.errors import InvalidInputError
from viq.report import (
    RESULT_COLUMNS,
    fits_csv_text,
    information_fits,
    load_results,
    metric_plot_svg,
    parse_results_csv,
    results_csv_text,
    summary_csv_text,
    write_report,
)
from viq.sweep import ExperimentResult, ResultRow, aggregate_rows


def make_row(condition="low_field", family="mlp(8)", run=0, **overrides):
    fields = dict(
        condition=condition,
        family=family,
        run=run,
        seed=run + 17,
        v_info_nats=0.25 + 0.01 * run,
        split="train",
        auc=0.8,
        accuracy=0.7,
        ssim=0.9,
        psnr=30.0,
        wall_time_s=None,
    )
    fields.update(overrides)
    return ResultRow(**fields)


def make_result(rows=None, runs=2):
    if rows is None:
        rows = [
            make_row(cond, fam, run)
            for cond in ("low_field", "high_field")
            for fam in ("constant", "mlp(8)")
            for run in range(runs)
        ]
    return ExperimentResult(rows, aggregate_rows(rows, runs), runs)


def test_results_csv_header_and_quoting():
    rows = [make_row(family="mlp(32,16)", run=r) for r in range(2)]
    text = results_csv_text(make_result(rows, 2))
    lines = text.splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    # the comma inside the descriptor must be quoted, not split
    assert '"mlp(32,16)"' in lines[1]


def test_csv_round_trip_identity():
    result = make_result()
    text = results_csv_text(result)
    back = parse_results_csv(text)
    assert back.rows == result.rows
    assert back.aggregates == result.aggregates
    assert back.runs == result.runs
    assert results_csv_text(back) == text


def test_round_trip_preserves_special_values():
    rows = [
        make_row(run=r, auc=None, psnr=np.inf, wall_time_s=None) for r in range(2)
    ]
    result = make_result(rows, 2)
    back = parse_results_csv(results_csv_text(result))
    assert back.rows[0].auc is None
    assert back.rows[0].psnr == np.inf
    assert back.rows[0].wall_time_s is None


def test_round_trip_preserves_full_float_precision():
    rows = [
        make_row(run=r, v_info_nats=0.1234567890123456789 + r) for r in range(2)
    ]
    back = parse_results_csv(results_csv_text(make_result(rows, 2)))
    assert back.rows[0].v_info_nats == rows[0].v_info_nats


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("", "empty"),
        ("a,b,c\n", "header"),
        (",".join(RESULT_COLUMNS) + "\n", "no data"),
        (",".join(RESULT_COLUMNS) + "\nlow,f,0,1,0.5,train,0.5,0.5\n", "fields"),
        (
            ",".join(RESULT_COLUMNS) + "\nlow,f,zero,1,0.5,train,0.5,0.5,0.9,30.0,\n",
            "run",
        ),
        (
            ",".join(RESULT_COLUMNS) + "\nlow,f,0,1,oops,train,0.5,0.5,0.9,30.0,\n",
            "v_info_nats",
        ),
        (
            ",".join(RESULT_COLUMNS) + "\nlow,f,0,1,,train,0.5,0.5,0.9,30.0,\n",
            "missing required",
        ),
    ],
)
def test_parse_rejects_malformed_input(text, fragment):
    with pytest.raises(InvalidInputError, match=fragment):
        parse_results_csv(text)


def test_summary_csv_contents():
    rows = [make_row(run=r, v_info_nats=0.2 + 0.2 * r) for r in range(2)]
    result = make_result(rows, 2)
    lines = summary_csv_text(result).splitlines()
    assert lines[0].startswith("condition,family,v_info_nats_mean,v_info_nats_std")
    cells = lines[1].split(",")
    assert cells[0] == "low_field"
    assert float(cells[2]) == pytest.approx(0.3)
    assert float(cells[3]) == pytest.approx(np.std([0.2, 0.4], ddof=1))


def test_fits_recover_exact_linear_relation():
    rows = []
    for run in range(2):
        for i, fam in enumerate(("constant", "linear_logistic", "mlp(8)")):
            vi = 0.1 * i + 0.3 * run
            rows.append(
                make_row("low_field", fam, run, v_info_nats=vi, auc=0.5 + 0.4 * vi)
            )
    result = make_result(rows, 2)
    fits = information_fits(result)
    auc_fits = [f for f in fits if f[1] == "auc"]
    assert len(auc_fits) == 1
    condition, target, fit, n = auc_fits[0]
    assert condition == "low_field"
    assert n == 6
    assert fit.slope == pytest.approx(0.4, abs=1e-12)
    assert fit.intercept == pytest.approx(0.5, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fits_skip_degenerate_cells():
    # constant information across all rows cannot support a fit
    rows = [
        make_row("low_field", fam, run, v_info_nats=0.5)
        for fam in ("constant", "mlp(8)")
        for run in range(2)
    ]
    assert information_fits(make_result(rows, 2)) == []


def test_fits_without_auc_use_accuracy_only():
    rows = [
        make_row("low_field", fam, run, auc=None, v_info_nats=0.1 * run + 0.05 * len(fam))
        for fam in ("constant", "mlp(8)")
        for run in range(2)
    ]
    fits = information_fits(make_result(rows, 2))
    assert fits and all(target == "accuracy" for _, target, _, _ in fits)


def test_fits_csv_text_shape():
    text = fits_csv_text(make_result())
    lines = text.splitlines()
    assert lines[0] == "condition,x_metric,y_metric,slope,intercept,r_squared,n_points"
    assert all(line.split(",")[1] == "v_info_nats" for line in lines[1:])


def test_write_report_creates_expected_files(tmp_path):
    out = tmp_path / "report"
    paths = write_report(make_result(), str(out))
    names = sorted(os.path.basename(p) for p in paths)
    assert "results.csv" in names
    assert "summary.csv" in names
    assert "vinfo_vs_metric.csv" in names
    assert "v_info_nats_vs_capacity.svg" in names
    assert not [p for p in os.listdir(out) if p.endswith(".tmp")]


def test_write_report_skips_allnone_metric_plot(tmp_path):
    rows = [make_row(run=r, auc=None) for r in range(2)]
    paths = write_report(make_result(rows, 2), str(tmp_path / "r"))
    assert not any(p.endswith("auc_vs_capacity.svg") for p in paths)
    assert any(p.endswith("accuracy_vs_capacity.svg") for p in paths)


def test_write_report_rejects_empty_result(tmp_path):
    empty = ExperimentResult([], [], 1)
    out = tmp_path / "nothing"
    with pytest.raises(InvalidInputError, match="empty"):
        write_report(empty, str(out))
    assert not out.exists()


def test_write_report_is_deterministic(tmp_path):
    result = make_result()
    write_report(result, str(tmp_path / "a"))
    write_report(result, str(tmp_path / "b"))
    for name in os.listdir(tmp_path / "a"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


def test_load_results_round_trip(tmp_path):
    result = make_result()
    out = tmp_path / "r"
    write_report(result, str(out))
    back = load_results(str(out / "results.csv"))
    assert back.rows == result.rows


def test_svg_is_wellformed_and_skips_nonfinite():
    rows = [
        make_row(cond, fam, run, psnr=np.inf if cond == "high_field" else 30.0 + run)
        for cond in ("low_field", "high_field")
        for fam in ("constant", "mlp(8)")
        for run in range(2)
    ]
    svg = metric_plot_svg(make_result(rows, 2), "psnr")
    assert svg.startswith("<svg")
    assert svg.rstrip().endswith("</svg>")
    assert "nan" not in svg and "inf" not in svg
    # finite series still drawn
    assert "polyline" in svg


def test_svg_single_family_has_no_polyline():
    rows = [make_row("low_field", "constant", run) for run in range(2)]
    svg = metric_plot_svg(make_result(rows, 2), "v_info_nats")
    assert "<circle" in svg
    assert "polyline" not in svg


def test_svg_error_bars_present():
    rows = [
        make_row("low_field", fam, run, auc=0.6 + 0.2 * run)
        for fam in ("constant", "mlp(8)")
        for run in range(2)
    ]
    svg = metric_plot_svg(make_result(rows, 2), "auc")
    # mean dot plus vertical spread bar per family
    assert svg.count("<circle") == 2
    assert svg.count("polyline") == 1
    assert "<line" in svg
