import io
import math
from pathlib import Path

import pytest
from rich.console import Console

from reports import CriterionResult, acceptance_view, all_passed, reproduce_all
from reports.acceptance import _bounded_correlation, _Suite, free_susceptibility, judge_fkn_cells, run_criterion
from utils.errors import PreconditionError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_free_susceptibility_formula():
    assert free_susceptibility(10.0) == pytest.approx(1 - (1 - math.exp(-20)) / 20)
    assert free_susceptibility(1e4) == pytest.approx(1.0, abs=1e-4)


def test_quick_criteria():
    results = reproduce_all(CONFIGS, only={"1", "2", "7"})
    assert [r.id for r in results] == ["1", "2", "7"]
    assert all(r.passed for r in results), [r.to_record() for r in results]
    assert all_passed(results)


def test_progress_bar_run():
    console = Console(file=io.StringIO())
    results = reproduce_all(CONFIGS, only={"2"}, console=console)
    assert results[0].passed
    console.print(acceptance_view(results))
    assert "Acceptance" in console.file.getvalue()


def test_failing_check_is_recorded():
    def broken(suite):
        raise PreconditionError("no ground state", reason="test.broken")

    result = run_criterion(_Suite(CONFIGS), "x", "broken", broken)
    assert result.passed is False
    assert math.isnan(result.measured)
    assert result.details["error"]["reason"] == "test.broken"


def test_data_only_criteria_do_not_fail_the_suite():
    data = CriterionResult("10*", "scan", None, 1.0, math.nan)
    ok = CriterionResult("1", "free", True, 0.0, 1e-10)
    bad = CriterionResult("2", "lc", False, 1.0, 1e-9)
    assert all_passed([data, ok])
    assert not all_passed([data, ok, bad])
    assert data.to_row()["passed"] is None


SMALL_CRITICAL = """
[model]
alpha = 0.5
cutoff_radius = 1.0

[discretization]
n_modes = 4
regularization_mass = 0.2

[mc]
T = 2.0
samples = 400
chains = 2
seed = 3

[scan]
horizons = 1.0, 2.0, 4.0
"""


def test_bounded_correlation_judges_the_raw_slope(tmp_path):
    (tmp_path / "critical.ini").write_text(SMALL_CRITICAL)
    passed, measured, tolerance, details = _bounded_correlation(_Suite(tmp_path))
    assert details["n_modes"] == 4
    assert measured == details["slope"]
    assert tolerance == pytest.approx(3.0 * details["slope_err"])
    assert passed == (details["slope"] <= 3.0 * details["slope_err"])
    assert [row["T"] for row in details["cells"]] == [1.0, 2.0, 4.0]
    assert details["free_slope"] > 0.0


def test_imprecise_fkn_cells_do_not_count():
    rows = [{"sigma": 0.5, "relative_stderr": 0.005} for _ in range(3)]
    passed, within, need, details = judge_fkn_cells(rows)
    assert passed and within == 3.0 and need == 2.0
    rows[0]["relative_stderr"] = rows[1]["relative_stderr"] = 0.05
    passed, within, _, details = judge_fkn_cells(rows)
    assert not passed
    assert within == 1.0
    assert details["imprecise_cells"] == 2
    assert details["worst_relative_stderr"] == 0.05


@pytest.mark.slow
def test_full_acceptance_suite():
    results = reproduce_all(CONFIGS, threads=2)
    failed = [r.to_record() for r in results if r.passed is False]
    assert not failed
