"""
Run summaries and comparison tables, recomputed from stored session records
File: app/services/report_service.py

Nothing here caches an aggregate: every average, improvement and forgetting
value is derived from the SessionRecord rows of a run's records.db.
"""

from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import csv
import json
import logging

from pydantic import TypeAdapter

from app.core.database import RECORDS_FILENAME, get_db
from app.core.exceptions import ComparisonError, MissingArtifactError
from app.models.run_record import RunRecord
from app.models.session_record import SessionRecord
from app.schemas.report import RunSummary, SessionReport, SimilarityReport, TaskForgetting
from app.schemas.task import TaskSpec
from app.services.ces_service import RelationGraph

logger = logging.getLogger(__name__)


SUMMARY_FILENAME = "summary.json"
SUMMARY_TABLE_FILENAME = "summary_table.txt"
GRAPH_FILENAME = "graph.json"
COMPARISON_TABLE_FILENAME = "comparison_table.txt"
CURVES_FILENAME = "session_curves.csv"
SIMILARITY_FILENAME = "similarity_matrix.csv"
SIMILARITY_SUMMARY_FILENAME = "similarity.json"
COMPARISON_SUMMARY_FILENAME = "comparison.json"

AVERAGE_COLUMN = "Average Acc."
IMPROVEMENT_COLUMN = "Final Improv."

_SUMMARY_LIST = TypeAdapter(List[RunSummary])


def _pct(value: float) -> str:
    return f"{100.0 * value:.1f}"


class ReportService:

    # ==================== RECORDS → REPORTS ====================

    @staticmethod
    def reports_from_records(records: Sequence[SessionRecord]) -> List[SessionReport]:
        """One SessionReport per session; task order follows insertion order"""
        by_session: Dict[int, "OrderedDict[str, float]"] = {}
        meta: Dict[int, Tuple[str, int]] = {}
        for r in sorted(records, key=lambda r: (r.session, r.id)):
            by_session.setdefault(r.session, OrderedDict())[r.task_id] = r.success_rate
            meta[r.session] = (r.method, r.seed)
        return [
            SessionReport.from_rates(s, meta[s][0], meta[s][1], rates)
            for s, rates in sorted(by_session.items())
        ]

    @staticmethod
    def session_average(reports: Sequence[SessionReport]) -> float:
        """Mean of per-session averages over sessions that evaluated at least one task"""
        values = [r.average for r in reports if r.task_rates]
        return sum(values) / len(values) if values else 0.0

    @staticmethod
    def forgetting(reports: Sequence[SessionReport]) -> List[TaskForgetting]:
        if not reports:
            return []
        final = reports[-1]
        first_seen: "OrderedDict[str, Tuple[int, float]]" = OrderedDict()
        for report in reports:
            for task_id, rate in report.task_rates.items():
                if task_id not in first_seen:
                    first_seen[task_id] = (report.session, rate)
        rows = []
        for task_id, (session, first) in first_seen.items():
            last = final.task_rates.get(task_id, first)
            rows.append(TaskForgetting(
                task_id=task_id, first_session=session, first_accuracy=first,
                final_accuracy=last, forgetting=first - last,
            ))
        return rows

    @staticmethod
    def mean_forgetting(rows: Sequence[TaskForgetting], final_session: int) -> float:
        earlier = [r.forgetting for r in rows if r.first_session < final_session]
        return sum(earlier) / len(earlier) if earlier else 0.0

    # ==================== RUN SUMMARY ====================

    @staticmethod
    def summary_from_reports(reports: List[SessionReport], **identity) -> RunSummary:
        """Averages and forgetting derived from ``reports``; ``identity`` fills method, seed, shots and hashes"""
        rows = ReportService.forgetting(reports)
        final_session = reports[-1].session if reports else 0
        return RunSummary(
            reports=reports,
            session_average=ReportService.session_average(reports),
            final_average=reports[-1].average if reports else 0.0,
            forgetting=rows,
            mean_forgetting=ReportService.mean_forgetting(rows, final_session),
            **identity,
        )

    @staticmethod
    def build_summary(run: RunRecord, records: Sequence[SessionRecord], retained_demo_ids: Sequence[str] = ()) -> RunSummary:
        return ReportService.summary_from_reports(
            ReportService.reports_from_records(records),
            method=run.method,
            seed=run.seed,
            shots=run.shots,
            config_hash=run.config_hash,
            schedule_hash=run.schedule_hash,
            retained_demo_ids=list(retained_demo_ids),
        )

    @staticmethod
    def load_run(run_dir: Union[str, Path]) -> RunSummary:
        """Summary of one run, recomputed from its records file"""
        run_dir = Path(run_dir)
        if not (run_dir / RECORDS_FILENAME).exists():
            raise MissingArtifactError("run", str(run_dir / RECORDS_FILENAME))
        retained: List[str] = []
        stored = run_dir / SUMMARY_FILENAME
        if stored.exists():
            retained = json.loads(stored.read_text()).get("retained_demo_ids", [])
        with get_db(run_dir) as db:
            run = db.query(RunRecord).first()
            if run is None or run.status != "completed":
                raise MissingArtifactError("run", f"{run_dir} holds no completed run")
            records = db.query(SessionRecord).order_by(SessionRecord.session, SessionRecord.id).all()
            return ReportService.build_summary(run, records, retained)

    @staticmethod
    def with_improvement(summary: RunSummary, baseline: Optional[RunSummary]) -> RunSummary:
        if baseline is None:
            return summary
        return summary.model_copy(update={
            "baseline_method": baseline.method,
            "improvement": summary.session_average - baseline.session_average,
        })

    @staticmethod
    def write_summary(run_dir: Union[str, Path], summary: RunSummary) -> None:
        run_dir = Path(run_dir)
        (run_dir / SUMMARY_FILENAME).write_text(summary.model_dump_json(indent=2))
        (run_dir / SUMMARY_TABLE_FILENAME).write_text(
            ReportService.render_table([(summary.method, summary.reports, None)])
            + "\n\n" + ReportService.render_task_table(summary)
        )

    # ==================== COMPARISON ====================

    @staticmethod
    def check_comparable(summaries: Sequence[RunSummary]) -> None:
        hashes = {s.schedule_hash for s in summaries}
        if len(hashes) > 1:
            raise ComparisonError(
                "Runs use incompatible schedules: " + ", ".join(f"{s.method}/seed {s.seed}" for s in summaries)
            )

    @staticmethod
    def average_by_method(summaries: Sequence[RunSummary]) -> "OrderedDict[str, List[SessionReport]]":
        """Seed-averaged SessionReports per method, methods in first-seen order"""
        grouped: "OrderedDict[str, List[RunSummary]]" = OrderedDict()
        for s in summaries:
            grouped.setdefault(s.method, []).append(s)
        averaged: "OrderedDict[str, List[SessionReport]]" = OrderedDict()
        for method, runs in grouped.items():
            sessions = min(len(r.reports) for r in runs)
            reports = []
            for t in range(sessions):
                task_ids = list(runs[0].reports[t].task_rates)
                rates = OrderedDict(
                    (tid, sum(r.reports[t].task_rates.get(tid, 0.0) for r in runs) / len(runs))
                    for tid in task_ids
                )
                reports.append(SessionReport.from_rates(runs[0].reports[t].session, method, -1, rates))
            averaged[method] = reports
        return averaged

    @staticmethod
    def method_summaries(
        summaries: Sequence[RunSummary],
        averaged: "OrderedDict[str, List[SessionReport]]",
        baseline: str,
    ) -> List[RunSummary]:
        """One seed-averaged summary per method; non-baseline methods carry their improvement"""
        first = {}
        for s in summaries:
            first.setdefault(s.method, s)
        merged = [
            ReportService.summary_from_reports(
                reports, method=method, seed=-1, shots=first[method].shots,
                config_hash=first[method].config_hash, schedule_hash=first[method].schedule_hash,
            )
            for method, reports in averaged.items()
        ]
        reference = next((s for s in merged if s.method == baseline), None) if len(merged) > 1 else None
        return [s if s.method == baseline else ReportService.with_improvement(s, reference) for s in merged]

    @staticmethod
    def render_table(rows: Sequence[Tuple[str, Sequence[SessionReport], Optional[float]]]) -> str:
        """Methods as rows, sessions as columns, plus average and improvement columns"""
        sessions = max((len(r[1]) for r in rows), default=0)
        show_improvement = any(r[2] is not None for r in rows)
        header = ["Method"] + [f"S{t}" for t in range(sessions)] + [AVERAGE_COLUMN]
        if show_improvement:
            header.append(IMPROVEMENT_COLUMN)
        lines = [header]
        for method, reports, improvement in rows:
            cells = [method] + [_pct(r.average) for r in reports]
            cells += [""] * (sessions - len(reports))
            cells.append(_pct(ReportService.session_average(reports)))
            if show_improvement:
                cells.append("" if improvement is None else f"{100.0 * improvement:+.1f}")
            lines.append(cells)
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)

    @staticmethod
    def render_task_table(summary: RunSummary) -> str:
        """Per-task × per-session success table of one run"""
        task_ids: List[str] = []
        for report in summary.reports:
            task_ids += [t for t in report.task_rates if t not in task_ids]
        header = ["Task"] + [f"S{r.session}" for r in summary.reports]
        lines = [header]
        for tid in task_ids:
            lines.append([tid] + [
                _pct(r.task_rates[tid]) if tid in r.task_rates else "-" for r in summary.reports
            ])
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)

    @staticmethod
    def write_curves(path: Union[str, Path], averaged: Dict[str, List[SessionReport]]) -> Path:
        path = Path(path)
        methods = list(averaged)
        sessions = max((len(v) for v in averaged.values()), default=0)
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["session"] + methods)
            for t in range(sessions):
                writer.writerow([t] + [
                    f"{averaged[m][t].average:.6f}" if t < len(averaged[m]) else "" for m in methods
                ])
        return path

    # ==================== SIMILARITY ====================

    @staticmethod
    def similarity_means(report: SimilarityReport, catalog: Sequence[TaskSpec]) -> SimilarityReport:
        """Mean coefficient over pairs sharing a verb or an object vs disjoint pairs"""
        by_id = {t.task_id: t for t in catalog}
        related, disjoint = [], []
        ids = report.task_ids
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = by_id.get(ids[i]), by_id.get(ids[j])
                if a is None or b is None:
                    continue
                bucket = related if (a.verb == b.verb or a.object == b.object) else disjoint
                bucket.append(report.matrix[i][j])
        return report.model_copy(update={
            "related_mean": sum(related) / len(related) if related else None,
            "disjoint_mean": sum(disjoint) / len(disjoint) if disjoint else None,
        })

    @staticmethod
    def write_similarity(out_dir: Union[str, Path], report: SimilarityReport, prefix: str = "") -> Path:
        out_dir = Path(out_dir)
        path = out_dir / f"{prefix}{SIMILARITY_FILENAME}"
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["task_id"] + report.task_ids)
            for tid, row in zip(report.task_ids, report.matrix):
                writer.writerow([tid] + [f"{v:.6f}" for v in row])
        (out_dir / f"{prefix}{SIMILARITY_SUMMARY_FILENAME}").write_text(report.model_dump_json(indent=2))
        return path

    # ==================== REPORT COMMAND ====================

    @staticmethod
    def compare(
        run_dirs: Sequence[Union[str, Path]],
        out_dir: Union[str, Path],
        baseline: str = "naive",
        catalog: Optional[Sequence[TaskSpec]] = None,
    ) -> Dict[str, Path]:
        """Comparison table, curve file, per-run task tables and similarity files"""
        summaries = [ReportService.load_run(d) for d in run_dirs]
        ReportService.check_comparable(summaries)
        averaged = ReportService.average_by_method(summaries)
        compared = ReportService.method_summaries(summaries, averaged, baseline)
        rows = [(s.method, s.reports, s.improvement) for s in compared]

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = {
            "table": out / COMPARISON_TABLE_FILENAME,
            "curves": ReportService.write_curves(out / CURVES_FILENAME, averaged),
        }
        written["table"].write_text(ReportService.render_table(rows) + "\n")
        written["summaries"] = out / COMPARISON_SUMMARY_FILENAME
        written["summaries"].write_bytes(_SUMMARY_LIST.dump_json(compared, indent=2))

        for run_dir, summary in zip(run_dirs, summaries):
            name = f"{summary.method}_seed{summary.seed}"
            path = out / f"tasks_{name}.txt"
            path.write_text(ReportService.render_task_table(summary) + "\n")
            written[f"tasks:{name}"] = path

            graph_path = Path(run_dir) / GRAPH_FILENAME
            if graph_path.exists():
                graph = RelationGraph.load(graph_path)
                if len(graph) >= 2:
                    report = graph.similarity_report()
                    if catalog is not None:
                        report = ReportService.similarity_means(report, catalog)
                    written[f"similarity:{name}"] = ReportService.write_similarity(out, report, prefix=f"{name}_")
        logger.info("Report over %d runs written to %s", len(summaries), out)
        return written
