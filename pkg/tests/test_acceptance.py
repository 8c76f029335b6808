"""
Full default-schedule runs: base competence, forgetting, method ordering and prompt similarity

Every method runs on seeds 0-2 of configs/default.yaml, so the module takes
hours on one CPU. Selected with ``pytest -m slow``.
"""

import time

import pytest

from app.schemas.config import ExperimentConfig
from app.services.catalog_service import load_catalog, resolve_schedule
from app.services.ces_service import RelationGraph
from app.services.config_service import ConfigService
from app.services.demo_service import DemoService
from app.services.protocol_service import ProtocolService
from app.services.report_service import GRAPH_FILENAME, ReportService

pytestmark = pytest.mark.slow

SEEDS = [0, 1, 2]
METHODS = ["topic", "tsp_only", "naive", "replay", "regularization"]


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    """(stage-1 seconds for seed 0, {(method, seed): (summary, run_dir)})"""
    root = tmp_path_factory.mktemp("default_schedule")
    config = ConfigService.with_overrides(
        ExperimentConfig(), data_dir=str(root / "data"), output_dir=str(root / "runs")
    )
    catalog = load_catalog(config.catalog)
    base, sessions = resolve_schedule(catalog, config.schedule)
    DemoService.generate_dataset(config, base, [t for group in sessions for t in group], catalog, config.data_dir)

    # stage 1 alone, timed; the runs below reuse its cached checkpoint
    stage1_dir = root / "stage1_seed0"
    stage1_dir.mkdir()
    started = time.perf_counter()
    ProtocolService.train_base(ProtocolService.prepare(config), stage1_dir)
    stage1_seconds = time.perf_counter() - started

    runs = {}
    for seed in SEEDS:
        for method in METHODS:
            run_dir = root / "runs" / f"{method}_seed{seed}"
            summary = ProtocolService.run_protocol(ConfigService.with_overrides(config, method=method, seed=seed), run_dir)
            runs[method, seed] = (summary, run_dir)
    return stage1_seconds, runs


def seed_mean(runs, method, value):
    return sum(value(runs[method, seed][0]) for seed in SEEDS) / len(SEEDS)


def session_average(runs, method):
    return seed_mean(runs, method, lambda s: s.session_average)


class TestDefaultSchedule:

    def test_base_session_competence(self, default_runs):
        stage1_seconds, runs = default_runs
        summary, _ = runs["topic", 0]
        assert summary.reports[0].average >= 0.80
        assert stage1_seconds <= 30 * 60

    def test_naive_forgets(self, default_runs):
        _, runs = default_runs
        first = seed_mean(runs, "naive", lambda s: s.reports[0].average)
        last = seed_mean(runs, "naive", lambda s: s.reports[5].average)
        assert last < 0.4 * first

    def test_topic_leads_the_baselines(self, default_runs):
        _, runs = default_runs
        topic, naive = session_average(runs, "topic"), session_average(runs, "naive")
        replay, regularization = session_average(runs, "replay"), session_average(runs, "regularization")
        assert topic - naive >= 0.15
        assert topic > regularization >= replay > naive

    def test_task_prompts_alone_sit_between(self, default_runs):
        _, runs = default_runs
        assert session_average(runs, "naive") < session_average(runs, "tsp_only") < session_average(runs, "topic")

    def test_related_tasks_have_closer_prompts(self, default_runs):
        _, runs = default_runs
        catalog = load_catalog()
        related, disjoint = [], []
        for seed in SEEDS:
            _, run_dir = runs["topic", seed]
            report = RelationGraph.load(run_dir / GRAPH_FILENAME).similarity_report()
            labelled = ReportService.similarity_means(report, catalog)
            related.append(labelled.related_mean)
            disjoint.append(labelled.disjoint_mean)
        assert sum(related) / len(related) > sum(disjoint) / len(disjoint)
