import pytest

from fairdistill.errors import ConfigurationError
from fairdistill.report import (METRICS, ComparisonTable, ResultRow, arrow, load_result_rows,
                                relative_change, round2)

from table_fixture import ROWS, result_rows


def test_examples():
    assert round2(relative_change(82.77, 79.62)) == 3.96
    assert round2(relative_change(6.08, 31.32)) == -80.59


def test_teacher_against_itself():
    table = ComparisonTable.build(result_rows()[:1] + [ResultRow("copy", 4, 79.62, 0, 15.63, 0, 31.32, 0)])
    rec = table.records()[1]
    assert all(rec[f"{m}_rel_change"] == 0.0 for m in METRICS)


@pytest.mark.parametrize("name", list(ROWS))
def test_published_percentages(name):
    table = ComparisonTable.build(result_rows())
    rec = next(r for r in table.records() if r["method"] == name)
    row = next(r for r in table.rows if r.method == name)
    for metric, (_, pct, direction) in zip(METRICS, ROWS[name]):
        assert abs(rec[f"{metric}_rel_change"]) == pct
        assert arrow(rec[f"{metric}_rel_change"]) == direction
        assert f"({pct:.2f} {direction}" in table.cell(row, metric)


def test_missing_teacher():
    with pytest.raises(ConfigurationError):
        ComparisonTable.build(result_rows()[1:])


def test_text_and_csv(tmp_path):
    table = ComparisonTable.build(result_rows())
    text = table.to_text()
    assert "82.77 (3.96 ↑+)" in text and "6.08 (80.59 ↓+)" in text
    csv_text = table.to_csv(tmp_path / "r.csv")
    assert csv_text.splitlines()[0].startswith("method,n_seeds,acc_mean")
    assert (tmp_path / "r.csv").read_text() == csv_text


def test_round_half_up():
    assert round2(0.125) == 0.13
    assert round2(-0.125) == -0.13


def test_load_rows(tmp_path):
    (tmp_path / "s.csv").write_text("method,n_seeds,acc_mean,acc_std,deo_a_mean,deo_a_std,deo_m_mean,deo_m_std\n"
                                    "teacher,4,0.8,0.01,0.1,0.0,0.2,0.0\n")
    (tmp_path / "m.json").write_text('{"method": "MFD", "acc_mean": 0.84, "deo_m_mean": 0.05}')
    rows = load_result_rows([tmp_path / "s.csv", tmp_path / "m.json"])
    assert rows[0].acc_mean == pytest.approx(80.0)
    assert rows[1].deo_m_mean == pytest.approx(5.0) and rows[1].n_seeds == 1
