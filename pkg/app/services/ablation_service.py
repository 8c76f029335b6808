"""
Ablation sweeps over prompts, fusion coefficients, projection and base-task count
File: app/services/ablation_service.py
"""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Tuple, Union
import csv
import logging

from app.core.config import settings
from app.core.logging import setup_logging
from app.schemas.config import ExperimentConfig, ProjectionMode, Sweep
from app.schemas.report import SweepRow
from app.services.config_service import ConfigService
from app.services.protocol_service import ProtocolService

logger = logging.getLogger(__name__)


SWEEP_SUMMARY_FILENAME = "sweep_summary.csv"

PROMPT_COUNTS = [1, 3, 5, 7, 9]
LAMBDA_PAIRS = [(0.1, 0.9), (0.2, 0.8), (0.3, 0.7), (0.4, 0.6), (0.5, 0.5)]
BASE_TASK_COUNTS = [0, 2, 4, 6, 8, 10]


def sweep_points(sweep: Union[str, Sweep]) -> List[Tuple[str, Dict[str, object]]]:
    """(label, dotted-key overrides) for every point of a sweep"""
    sweep = Sweep(sweep)
    if sweep == Sweep.PROMPTS:
        return [(f"prompts_{n}", {"train.model.prompts": n}) for n in PROMPT_COUNTS]
    if sweep == Sweep.LAMBDA:
        return [
            (f"lambda_{l1:.1f}_{l2:.1f}", {"train.ces.lambda1": l1, "train.ces.lambda2": l2})
            for l1, l2 in LAMBDA_PAIRS
        ]
    if sweep == Sweep.PROJECTION:
        return [(f"projection_{m.value}", {"train.model.projection": m.value}) for m in ProjectionMode]
    return [(f"base_{k}", {"schedule.base_task_count": k}) for k in BASE_TASK_COUNTS]


def _run_point(args: Tuple[str, str, dict, str, bool]) -> dict:
    """Worker entry point: one protocol run, returned as a plain SweepRow dict"""
    sweep, label, raw_config, run_dir, force = args
    setup_logging()
    config = ExperimentConfig.model_validate(raw_config)
    summary = ProtocolService.run_protocol(config, run_dir, force=force)
    return SweepRow(
        sweep=sweep,
        point=label,
        method=summary.method,
        seed=summary.seed,
        run_dir=str(run_dir),
        session_average=summary.session_average,
        final_average=summary.final_average,
        mean_forgetting=summary.mean_forgetting,
    ).model_dump()


class AblationService:

    @staticmethod
    def build_configs(config: ExperimentConfig, sweep: Union[str, Sweep]) -> List[Tuple[str, ExperimentConfig]]:
        configs = []
        for label, overrides in sweep_points(sweep):
            raw = config.model_dump(mode="json")
            for key, value in overrides.items():
                ConfigService.set_path(raw, key, value)
            configs.append((label, ConfigService.validate(raw, source=f"sweep point {label}")))
        return configs

    @staticmethod
    def run_sweep(
        config: ExperimentConfig,
        sweep: Union[str, Sweep],
        out_dir: Union[str, Path],
        force: bool = False,
        workers: int = None,
    ) -> List[SweepRow]:
        """
        One protocol run per sweep point, each in its own directory.

        The first point runs in-process so later points find the shared
        stage-1 checkpoint in the cache; the rest go to a process pool when
        more than one worker is configured.
        """
        sweep = Sweep(sweep)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        workers = workers or settings.FSAIL_WORKERS
        jobs = [
            (sweep.value, label, cfg.model_dump(mode="json"), str(out / label), force)
            for label, cfg in AblationService.build_configs(config, sweep)
        ]
        logger.info("Sweep %s: %d points, %d worker(s)", sweep.value, len(jobs), workers)

        rows = [_run_point(jobs[0])]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows += list(pool.map(_run_point, jobs[1:]))
        else:
            rows += [_run_point(job) for job in jobs[1:]]

        result = [SweepRow(**row) for row in rows]
        AblationService.write_summary(out / SWEEP_SUMMARY_FILENAME, result)
        return result

    @staticmethod
    def write_summary(path: Union[str, Path], rows: List[SweepRow]) -> Path:
        path = Path(path)
        fields = list(SweepRow.model_fields)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for row in rows:
                writer.writerow(row.model_dump())
        return path
