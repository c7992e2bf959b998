import pytest
from pydantic import ValidationError

from acceptance.suite import CRITERIA, acceptance_metrics, run_acceptance, write_acceptance
from schemas.acceptance.schemas import ACCEPTANCE_COLUMNS, N_CRITERIA, AcceptanceConfig
from utils.reporting import csv_text


def test_every_criterion_is_registered():
    assert sorted(CRITERIA) == list(range(1, N_CRITERIA + 1))
    assert len({name for name, _ in CRITERIA.values()}) == N_CRITERIA


@pytest.mark.parametrize("criteria", [[0], [14], []])
def test_unknown_criteria_are_rejected(criteria):
    with pytest.raises(ValidationError):
        AcceptanceConfig(criteria=criteria)


def test_exact_criteria_pass_on_the_quick_budget():
    results = run_acceptance(AcceptanceConfig(), seed=0, quick=True, selected=[12, 5, 3, 1])
    assert [r.criterion for r in results] == [1, 3, 5, 12]
    assert all(r.passed for r in results), [r.model_dump() for r in results if not r.passed]


def test_determinism_criterion():
    (result,) = run_acceptance(AcceptanceConfig(criteria=[13]), seed=2, quick=True)
    assert result.name == "determinism"
    assert result.passed and result.value > 0
    assert result.detail == "identical"


def test_results_render_to_metrics_and_csv(tmp_path):
    results = run_acceptance(AcceptanceConfig(criteria=[3, 1]), seed=1, quick=True)
    assert acceptance_metrics(results) == {
        "criterion_01_passed": 1,
        "criterion_01_value": results[0].value,
        "criterion_03_passed": 1,
        "criterion_03_value": results[1].value,
    }
    path = write_acceptance(results, tmp_path / "acceptance.csv")
    assert path.read_text() == csv_text([r.model_dump() for r in results], ACCEPTANCE_COLUMNS)
    assert path.read_text().splitlines()[0] == ",".join(ACCEPTANCE_COLUMNS)
