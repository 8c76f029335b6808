"""
Tests for session reports, forgetting, comparison tables and curve files
"""

import csv

import pytest
from pydantic import ValidationError

from app.core.exceptions import ComparisonError, MissingArtifactError
from app.models.run_record import RunRecord
from app.models.session_record import SessionRecord
from app.schemas.report import SessionReport, SimilarityReport
from app.services.report_service import AVERAGE_COLUMN, IMPROVEMENT_COLUMN, ReportService


def records(method, rates_by_session, seed=0):
    rows, next_id = [], 1
    for session, rates in enumerate(rates_by_session):
        for task_id, rate in rates.items():
            rows.append(SessionRecord(id=next_id, method=method, session=session, task_id=task_id,
                                      success_rate=rate, seed=seed, shots=1, episodes=4))
            next_id += 1
    return rows


def run_record(method, seed=0, schedule_hash="s"):
    return RunRecord(method=method, seed=seed, shots=1, schedule_hash=schedule_hash, config_hash=f"{method}{seed}",
                     format_version=1, status="completed", last_session=2)


def summary(method, rates_by_session, seed=0, schedule_hash="s"):
    return ReportService.build_summary(run_record(method, seed, schedule_hash), records(method, rates_by_session, seed))


TOPIC_RATES = [
    {"a": 1.0, "b": 0.5},
    {"a": 1.0, "b": 0.5, "c": 0.5},
    {"a": 0.5, "b": 0.5, "c": 0.5, "d": 1.0},
]
NAIVE_RATES = [
    {"a": 1.0, "b": 0.5},
    {"a": 0.0, "b": 0.0, "c": 1.0},
    {"a": 0.0, "b": 0.0, "c": 0.0, "d": 1.0},
]


class TestSessionReport:

    def test_average_is_the_mean(self):
        report = SessionReport.from_rates(1, "topic", 0, {"a": 1.0, "b": 0.0, "c": 0.5})
        assert report.average == pytest.approx(0.5)

    def test_inconsistent_average_rejected(self):
        with pytest.raises(ValidationError):
            SessionReport(session=0, method="topic", seed=0, task_rates={"a": 1.0}, average=0.5)

    def test_rate_out_of_range(self):
        with pytest.raises(ValidationError):
            SessionReport.from_rates(0, "topic", 0, {"a": 1.5})

    def test_empty_session(self):
        assert SessionReport.from_rates(0, "topic", 0, {}).average == 0.0


class TestSummaries:

    def test_reports_follow_insertion_order(self):
        reports = ReportService.reports_from_records(records("topic", TOPIC_RATES))
        assert [r.session for r in reports] == [0, 1, 2]
        assert list(reports[2].task_rates) == ["a", "b", "c", "d"]

    def test_session_average(self):
        s = summary("topic", TOPIC_RATES)
        assert s.session_average == pytest.approx((0.75 + 2 / 3 + 0.625) / 3)
        assert s.final_average == pytest.approx(0.625)

    def test_forgetting(self):
        s = summary("naive", NAIVE_RATES)
        rows = {r.task_id: r for r in s.forgetting}
        assert rows["a"].forgetting == pytest.approx(1.0)
        assert rows["c"].first_session == 1 and rows["c"].forgetting == pytest.approx(1.0)
        assert rows["d"].forgetting == 0.0
        # tasks first seen in the final session are left out of the mean
        assert s.mean_forgetting == pytest.approx((1.0 + 0.5 + 1.0) / 3)

    def test_improvement(self):
        topic, naive = summary("topic", TOPIC_RATES), summary("naive", NAIVE_RATES)
        improved = ReportService.with_improvement(topic, naive)
        assert improved.baseline_method == "naive"
        assert improved.improvement == pytest.approx(topic.session_average - naive.session_average)
        assert ReportService.with_improvement(topic, None).improvement is None

    def test_write_summary(self, tmp_path):
        ReportService.write_summary(tmp_path, summary("topic", TOPIC_RATES))
        assert "Task" in (tmp_path / "summary_table.txt").read_text()
        assert (tmp_path / "summary.json").exists()

    def test_load_run_without_records(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            ReportService.load_run(tmp_path)


class TestComparison:

    def test_incompatible_schedules(self):
        with pytest.raises(ComparisonError):
            ReportService.check_comparable([summary("topic", TOPIC_RATES), summary("naive", NAIVE_RATES, schedule_hash="x")])

    def test_average_over_seeds(self):
        runs = [summary("topic", TOPIC_RATES, seed=0), summary("topic", NAIVE_RATES, seed=1)]
        averaged = ReportService.average_by_method(runs)
        assert list(averaged) == ["topic"]
        assert averaged["topic"][1].task_rates == pytest.approx({"a": 0.5, "b": 0.25, "c": 0.75})

    def test_single_run_table_has_no_improvement_column(self):
        reports = summary("topic", TOPIC_RATES).reports
        table = ReportService.render_table([("topic", reports, None)])
        header = table.splitlines()[0]
        assert AVERAGE_COLUMN in header and IMPROVEMENT_COLUMN not in header
        assert header.split()[:4] == ["Method", "S0", "S1", "S2"]
        assert table.splitlines()[1].split()[1] == "75.0"

    def test_table_with_baseline(self):
        table = ReportService.render_table([
            ("topic", summary("topic", TOPIC_RATES).reports, 0.123),
            ("naive", summary("naive", NAIVE_RATES).reports, None),
        ])
        lines = table.splitlines()
        assert IMPROVEMENT_COLUMN in lines[0]
        assert lines[1].rstrip().endswith("+12.3")

    def test_method_summaries_carry_the_improvement(self):
        runs = [summary("topic", TOPIC_RATES), summary("naive", NAIVE_RATES)]
        compared = ReportService.method_summaries(runs, ReportService.average_by_method(runs), "naive")
        topic, naive = compared
        assert (topic.baseline_method, naive.improvement) == ("naive", None)
        assert topic.improvement == ReportService.session_average(topic.reports) - ReportService.session_average(naive.reports)

    def test_lone_method_has_no_improvement(self):
        runs = [summary("topic", TOPIC_RATES)]
        (topic,) = ReportService.method_summaries(runs, ReportService.average_by_method(runs), "naive")
        assert topic.improvement is None and topic.seed == -1

    def test_curves(self, tmp_path):
        averaged = ReportService.average_by_method([summary("topic", TOPIC_RATES), summary("naive", NAIVE_RATES)])
        path = ReportService.write_curves(tmp_path / "curves.csv", averaged)
        with path.open() as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["session", "topic", "naive"]
        assert len(rows) == 4
        assert float(rows[1][1]) == pytest.approx(0.75)
        assert float(rows[3][2]) == pytest.approx(0.25)

    def test_similarity_means(self, task_by_id):
        ids = ["reach_red_cube", "reach_blue_ball", "press_red_button"]
        report = SimilarityReport(task_ids=ids, matrix=[[1.0, 0.8, 0.2], [0.8, 1.0, 0.4], [0.2, 0.4, 1.0]])
        labelled = ReportService.similarity_means(report, list(task_by_id.values()))
        assert labelled.related_mean == pytest.approx(0.8)
        assert labelled.disjoint_mean == pytest.approx(0.3)
