"""
Demonstration generation, storage and replay
File: app/services/demo_service.py

On disk a demo set is a manifest plus one JSONL file per task holding
(seed, instruction token ids, action 5-tuples). Observations are never
stored: loading replays the actions from the seeded reset and checks that
the final state still satisfies the task.
"""

from pathlib import Path
from typing import Dict, List, Optional, Union
import logging

from app.core.exceptions import ConfigError, ContractError, ExpertError, MissingArtifactError, RefusalError
from app.schemas.config import ExperimentConfig
from app.schemas.demo import (
    DEMO_FORMAT_VERSION,
    DemoFileEntry,
    DemoManifest,
    DemoRecord,
    DemoStep,
    Demonstration,
)
from app.schemas.task import KeyframeAction, SessionTag, TaskSpec
from app.services.catalog_service import VOCABULARY, instruction_tokens
from app.services.env_service import GridTableEnv

logger = logging.getLogger(__name__)


MANIFEST_FILENAME = "manifest.json"
DEMOS_DIRNAME = "demos"


class DemoService:

    @staticmethod
    def generate_demos(env: GridTableEnv, task: TaskSpec, count: int, seed: int) -> List[Demonstration]:
        """count expert demonstrations from seeds seed .. seed+count-1"""
        if count < 1:
            raise ContractError(f"generate_demos: count must be at least 1, got {count}")
        tokens = instruction_tokens(task, env.max_tokens)
        demos = []
        for s in range(seed, seed + count):
            states, actions = env.expert_rollout(task, s)
            demos.append(DemoService._assemble(env, task, s, tokens, states, actions))
        return demos

    @staticmethod
    def _assemble(env, task, seed, tokens, states, actions) -> Demonstration:
        steps = [
            DemoStep(observation=env.observe(state, task), action=action)
            for state, action in zip(states[:-1], actions)
        ]
        return Demonstration(
            task_id=task.task_id,
            seed=seed,
            instruction_tokens=tokens,
            steps=steps,
            final_state=states[-1],
        )

    @staticmethod
    def replay_demo(env: GridTableEnv, task: TaskSpec, record: DemoRecord) -> Demonstration:
        """Rebuild observations by re-simulating the stored actions"""
        actions = [KeyframeAction.from_tuple(a) for a in record.actions]
        states = env.replay(task, record.seed, actions)
        if not env.check_success(states[-1], task):
            raise ExpertError(f"Stored demo {task.task_id}#{record.seed} does not end in success on replay")
        return DemoService._assemble(env, task, record.seed, list(record.instruction_tokens), states, actions)

    # ==================== FILES ====================

    @staticmethod
    def write_demo_file(path: Union[str, Path], demos: List[Demonstration]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [d.to_record().model_dump_json() for d in demos]
        path.write_text("\n".join(lines) + "\n")
        return path

    @staticmethod
    def read_demo_file(path: Union[str, Path]) -> List[DemoRecord]:
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError("generate-data", str(path))
        return [DemoRecord.model_validate_json(line) for line in path.read_text().splitlines() if line.strip()]

    @staticmethod
    def generate_dataset(
        config: ExperimentConfig,
        base_tasks: List[TaskSpec],
        incremental_tasks: List[TaskSpec],
        catalog: List[TaskSpec],
        out_dir: Union[str, Path],
        force: bool = False,
    ) -> DemoManifest:
        """Write the base and incremental demonstration sets plus the manifest"""
        out = Path(out_dir)
        if out.exists() and any(p.name != "cache" for p in out.iterdir()) and not force:
            raise RefusalError(f"Output directory {out} is not empty; pass --force to overwrite")

        schedule = config.schedule
        env = GridTableEnv(config.env, max_tokens=config.train.model.max_tokens)
        manifest = DemoManifest(
            grid=config.env.grid,
            view_size=config.env.view_size,
            max_tokens=config.train.model.max_tokens,
            vocabulary=list(VOCABULARY),
            catalog=list(catalog),
            base_seed_start=schedule.base_seed_start,
            incremental_seed_start=schedule.incremental_seed_start,
            base_demos=schedule.base_demos,
            shots=schedule.shots,
        )

        plan = [(t, SessionTag.BASE, schedule.base_demos, schedule.base_seed_start) for t in base_tasks]
        plan += [(t, SessionTag.INCREMENTAL, schedule.shots, schedule.incremental_seed_start) for t in incremental_tasks]
        for task, tag, count, seed_start in plan:
            demos = DemoService.generate_demos(env, task, count, seed_start)
            rel = Path(DEMOS_DIRNAME) / tag.value / f"{task.task_id}.jsonl"
            DemoService.write_demo_file(out / rel, demos)
            manifest.files[task.task_id] = DemoFileEntry(
                path=rel.as_posix(), session_tag=tag, count=count, seed_start=seed_start
            )
            logger.info("Generated %d %s demos for %s", count, tag.value, task.task_id)

        (out / MANIFEST_FILENAME).write_text(manifest.model_dump_json(indent=2))
        return manifest

    @staticmethod
    def load_manifest(data_dir: Union[str, Path]) -> DemoManifest:
        path = Path(data_dir) / MANIFEST_FILENAME
        if not path.exists():
            raise MissingArtifactError("generate-data", str(path))
        manifest = DemoManifest.model_validate_json(path.read_text())
        if manifest.format_version != DEMO_FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported demo format_version {manifest.format_version}")
        return manifest

    @staticmethod
    def load_demos(
        env: GridTableEnv,
        data_dir: Union[str, Path],
        task: TaskSpec,
        count: int,
        manifest: Optional[DemoManifest] = None,
    ) -> List[Demonstration]:
        """First ``count`` stored demos of a task, replayed into full demonstrations"""
        manifest = manifest or DemoService.load_manifest(data_dir)
        if manifest.grid != env.grid or manifest.view_size != env.view_size:
            raise ConfigError(
                f"Demo set was generated for grid {manifest.grid}/view {manifest.view_size}, "
                f"config asks for {env.grid}/{env.view_size}"
            )
        entry = manifest.files.get(task.task_id)
        if entry is None:
            raise MissingArtifactError("generate-data", f"{data_dir}: no demos for task '{task.task_id}'")
        if entry.count < count:
            raise MissingArtifactError(
                "generate-data", f"{entry.path} holds {entry.count} demos, {count} requested"
            )
        records = DemoService.read_demo_file(Path(data_dir) / entry.path)[:count]
        return [DemoService.replay_demo(env, task, r) for r in records]

    @staticmethod
    def task_counts(manifest: DemoManifest) -> Dict[str, int]:
        return {task_id: entry.count for task_id, entry in manifest.files.items()}
