"""
Few-shot action-incremental protocol: stages, sessions, baselines, persistence
File: app/services/protocol_service.py

Run directory layout:
    resolved_config.yaml   config echo; a rerun with the same text resumes
    records.db             RunRecord + one SessionRecord per task × session
    stage1.json            frozen backbone, base prompts, W_base
    stage2.json            per-base-task prompts, heads, prompt embeddings
    session_<t>.json       serving head and method state after session t
    graph.json             relation graph (topic / tsp_only)
    parameter_summary.json, summary.json, summary_table.txt
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import json
import logging
import shutil

import numpy as np

from app.core.checkpoint import load_params, save_params
from app.core.database import get_db
from app.core.exceptions import RefusalError
from app.core.tensor import Tensor
from app.models.run_record import RunRecord
from app.models.session_record import SessionRecord
from app.schemas.config import ExperimentConfig, Method
from app.schemas.demo import Demonstration, DemoManifest
from app.schemas.report import RunSummary, SessionReport
from app.schemas.task import TaskSpec
from app.services.catalog_service import load_catalog, resolve_schedule, validate_catalog
from app.services.ces_service import RelationGraph, TaskNode
from app.services.config_service import ConfigService, stable_hash
from app.services.demo_service import DemoService
from app.services.env_service import GridTableEnv
from app.services.evaluation_service import EvaluationService, PolicyServing
from app.services.policy_service import (
    PolicyHead,
    PolicyService,
    PromptSet,
    TopicPolicy,
    init_policy,
)
from app.services.report_service import GRAPH_FILENAME, ReportService
from app.services.training_service import Sample, TrainingService, demos_to_samples

logger = logging.getLogger(__name__)


STAGE1_FILENAME = "stage1.json"
STAGE2_FILENAME = "stage2.json"
PARAMETER_SUMMARY_FILENAME = "parameter_summary.json"
CACHE_DIRNAME = "cache"

PROMPT_METHODS = (Method.TOPIC, Method.TSP_ONLY)


@dataclass
class ProtocolContext:
    """Everything a run needs that is fixed by the config"""

    config: ExperimentConfig
    catalog: List[TaskSpec]
    base: List[TaskSpec]
    sessions: List[List[TaskSpec]]
    env: GridTableEnv
    manifest: DemoManifest
    data_dir: Path

    @property
    def method(self) -> Method:
        return self.config.train.method

    @property
    def shots(self) -> int:
        return self.config.schedule.shots

    def seen_tasks(self, session: int) -> List[TaskSpec]:
        """Union of the base tasks and sessions 1..session"""
        tasks = list(self.base)
        for group in self.sessions[:session]:
            tasks += group
        return tasks


@dataclass
class MethodState:
    """Mutable per-method state carried from session to session"""

    head: np.ndarray
    prompts: Dict[str, np.ndarray] = field(default_factory=dict)
    graph: Optional[RelationGraph] = None
    omega: Optional[np.ndarray] = None
    retained: List[str] = field(default_factory=list)


class ProtocolService:

    # ==================== SETUP ====================

    @staticmethod
    def prepare(config: ExperimentConfig) -> ProtocolContext:
        catalog = load_catalog(config.catalog)
        validate_catalog(catalog)
        base, sessions = resolve_schedule(catalog, config.schedule)
        data_dir = Path(config.data_dir)
        return ProtocolContext(
            config=config,
            catalog=catalog,
            base=base,
            sessions=sessions,
            env=GridTableEnv(config.env, max_tokens=config.train.model.max_tokens),
            manifest=DemoService.load_manifest(data_dir),
            data_dir=data_dir,
        )

    @staticmethod
    def claim_run_dir(run_dir: Path, config: ExperimentConfig, force: bool) -> None:
        """Resume when the stored config matches; otherwise refuse unless forced"""
        resolved = ConfigService.dump(config)
        stored = ConfigService.read_resolved(run_dir)
        occupied = run_dir.exists() and any(run_dir.iterdir())
        if force and occupied:
            logger.warning("Overwriting run directory %s", run_dir)
            shutil.rmtree(run_dir)
        elif stored is not None and stored != resolved:
            raise RefusalError(f"{run_dir} holds a run with a different config; pass --force to overwrite")
        elif stored is None and occupied:
            raise RefusalError(f"{run_dir} is not empty and holds no run config; pass --force to overwrite")
        ConfigService.write_resolved(run_dir, config)

    @staticmethod
    def _demos(ctx: ProtocolContext, task: TaskSpec, count: int) -> List[Demonstration]:
        return DemoService.load_demos(ctx.env, ctx.data_dir, task, count, ctx.manifest)

    @staticmethod
    def _base_samples(ctx: ProtocolContext) -> List[Sample]:
        samples: List[Sample] = []
        for task in ctx.base:
            samples += demos_to_samples(ProtocolService._demos(ctx, task, ctx.config.schedule.base_demos))
        return samples

    # ==================== STAGE 1 ====================

    @staticmethod
    def stage1_key(ctx: ProtocolContext) -> str:
        """Hash of everything stage 1 depends on; runs that agree share one checkpoint"""
        train = ctx.config.train
        return stable_hash({
            "model": train.model.model_dump(mode="json"),
            "stage1": train.stage1.model_dump(mode="json"),
            "optimizer": train.optimizer,
            "seed": train.seed,
            "env": ctx.config.env.model_dump(mode="json"),
            "base": [t.model_dump(mode="json") for t in ctx.base],
            "base_demos": ctx.config.schedule.base_demos,
            "base_seed_start": ctx.manifest.base_seed_start,
            "vocabulary": ctx.manifest.vocabulary,
        })

    @staticmethod
    def train_base(ctx: ProtocolContext, run_dir: Path) -> Tuple[TopicPolicy, PromptSet, PolicyHead]:
        """Stage 1 through the shared cache; always returns the reloaded checkpoint"""
        target = run_dir / STAGE1_FILENAME
        if not target.exists():
            key = ProtocolService.stage1_key(ctx)
            cached = ctx.data_dir / CACHE_DIRNAME / f"stage1-{key}.json"
            if cached.exists():
                logger.info("Stage 1 reused from %s", cached)
            else:
                train = ctx.config.train
                policy, base_prompts, w_base = init_policy(
                    train.model, ctx.env.grid, ctx.env.view_size, len(ctx.manifest.vocabulary), train.seed
                )
                samples = ProtocolService._base_samples(ctx)
                if not samples:
                    logger.info("No base tasks: stage 1 skipped, backbone stays at its initialisation")
                TrainingService.train_base(
                    policy, base_prompts, w_base, samples, train, np.random.default_rng([train.seed, 3])
                )
                PolicyService.save_stage1(cached, policy, base_prompts, w_base, meta={
                    "key": key,
                    "base_tasks": [t.task_id for t in ctx.base],
                    "samples": len(samples),
                })
            shutil.copyfile(cached, target)
        policy, base_prompts, w_base, _ = PolicyService.load_stage1(
            target, ctx.config.train.model, ctx.env.grid, ctx.env.view_size, len(ctx.manifest.vocabulary)
        )
        return policy, base_prompts, w_base

    # ==================== STAGE 2 ====================

    @staticmethod
    def train_task_specific(
        ctx: ProtocolContext,
        policy: TopicPolicy,
        w_base: PolicyHead,
        task: TaskSpec,
        demos: List[Demonstration],
        session_index: int,
    ) -> Tuple[PromptSet, PolicyHead, TaskNode]:
        train = ctx.config.train
        if session_index == 0:
            stage, epochs, label = train.stage2, train.stage2.epochs, "stage2"
        else:
            stage, epochs, label = train.stage3, train.few_shot_epochs(ctx.shots), "stage3"
        return TrainingService.train_task_specific(
            policy, task.task_id, demos_to_samples(demos), w_base.to_vector(), train,
            stage, epochs, session_index, label,
        )

    @staticmethod
    def train_base_nodes(ctx: ProtocolContext, run_dir: Path, policy: TopicPolicy, w_base: PolicyHead) -> List[Tuple[TaskNode, np.ndarray]]:
        """Stage 2 for every base task, cached like stage 1; returns (node, prompts) pairs"""
        target = run_dir / STAGE2_FILENAME
        if not target.exists():
            key = stable_hash({
                "stage1": ProtocolService.stage1_key(ctx),
                "stage2": ctx.config.train.stage2.model_dump(mode="json"),
            })
            cached = ctx.data_dir / CACHE_DIRNAME / f"stage2-{key}.json"
            if cached.exists():
                logger.info("Stage 2 reused from %s", cached)
            else:
                arrays: Dict[str, np.ndarray] = {}
                for task in ctx.base:
                    demos = ProtocolService._demos(ctx, task, ctx.config.schedule.base_demos)
                    prompts, head, node = ProtocolService.train_task_specific(ctx, policy, w_base, task, demos, 0)
                    arrays[f"prompts.{task.task_id}"] = prompts.prompts.data
                    arrays[f"head.{task.task_id}"] = node.head_weights
                    arrays[f"embedding.{task.task_id}"] = node.prompt_embedding
                save_params(cached, arrays, kind="stage2", meta={"key": key, "task_ids": [t.task_id for t in ctx.base]})
            shutil.copyfile(cached, target)

        arrays, meta = load_params(target, kind="stage2")
        return [
            (
                TaskNode(task_id=tid, prompt_embedding=arrays[f"embedding.{tid}"],
                         head_weights=arrays[f"head.{tid}"], session_index=0),
                arrays[f"prompts.{tid}"],
            )
            for tid in meta["task_ids"]
        ]

    # ==================== SESSIONS ====================

    @staticmethod
    def evaluate_session(
        ctx: ProtocolContext,
        policy: TopicPolicy,
        state: MethodState,
        base_prompts: PromptSet,
        session: int,
    ) -> SessionReport:
        """Single serving head; prompts by task id for prompt methods, the shared base prompts otherwise"""
        if session > 0 and ctx.method in PROMPT_METHODS:
            tensors = {tid: Tensor(p) for tid, p in state.prompts.items()}
            lookup = tensors.__getitem__
        else:
            lookup = lambda task_id: base_prompts.prompts  # noqa: E731
        serving = PolicyServing(ctx.env, policy, state.head, lookup)
        schedule = ctx.config.schedule
        rates = EvaluationService.evaluate(
            ctx.env, serving, ctx.seen_tasks(session), schedule.eval_episodes,
            schedule.eval_seed_start, ctx.config.train.eval_horizon,
        )
        report = SessionReport.from_rates(session, ctx.method.value, ctx.config.train.seed, rates)
        logger.info("Session %d (%s): average %.3f over %d tasks", session, ctx.method.value, report.average, len(rates))
        return report

    @staticmethod
    def run_incremental_session(
        ctx: ProtocolContext,
        policy: TopicPolicy,
        base_prompts: PromptSet,
        w_base: PolicyHead,
        state: MethodState,
        session: int,
    ) -> SessionReport:
        """Learn the session's new tasks from q demos each, then evaluate every task seen so far"""
        tasks = ctx.sessions[session - 1]
        method = ctx.method
        if method in PROMPT_METHODS:
            for task in tasks:
                demos = ProtocolService._demos(ctx, task, ctx.shots)
                prompts, head, node = ProtocolService.train_task_specific(ctx, policy, w_base, task, demos, session)
                state.graph.add_node(node)
                state.prompts[task.task_id] = prompts.prompts.data
                if method == Method.TOPIC:
                    state.head = state.graph.fuse_weights(len(state.graph) - 1, node.head_weights)
                else:
                    state.head = node.head_weights.copy()
        else:
            ProtocolService._finetune_shared_head(ctx, policy, base_prompts, w_base, state, tasks, session)
        return ProtocolService.evaluate_session(ctx, policy, state, base_prompts, session)

    @staticmethod
    def _finetune_shared_head(
        ctx: ProtocolContext,
        policy: TopicPolicy,
        base_prompts: PromptSet,
        w_base: PolicyHead,
        state: MethodState,
        tasks: List[TaskSpec],
        session: int,
    ) -> None:
        """Naive / replay / regularization update of the one shared head"""
        train = ctx.config.train
        method = ctx.method
        new_samples: List[Sample] = []
        for task in tasks:
            new_samples += demos_to_samples(ProtocolService._demos(ctx, task, ctx.shots))

        batch = list(new_samples)
        if method == Method.REPLAY:
            by_id = {t.task_id: t for t in ctx.catalog}
            for task_id in state.retained:
                batch += demos_to_samples(ProtocolService._demos(ctx, by_id[task_id], ctx.shots))

        features = TrainingService.pooled_features(policy, base_prompts, batch, w_base)
        actions = [s.action for s in batch]
        width, blocks = policy.width, policy.block_sizes

        penalty = None
        if method == Method.REGULARIZATION:
            if state.omega is None:
                # importance of the base session's data at W_base
                base_samples = ProtocolService._base_samples(ctx)
                base_features = TrainingService.pooled_features(policy, base_prompts, base_samples, w_base)
                state.omega = TrainingService.head_importance(
                    w_base.to_vector(), base_features, [s.action for s in base_samples], width, blocks
                )
            penalty = (train.regularization_mu, TrainingService.unit_mean(state.omega), state.head.copy())

        # replay keeps the step count of fine-tuning on the new demos alone
        epochs = TrainingService.matched_epochs(
            train.few_shot_epochs(ctx.shots), len(new_samples), len(batch), train.stage3.batch_size
        )
        rng = TrainingService.task_rng(train.seed, "__finetune__", session)
        state.head = TrainingService.finetune_head(
            state.head, features, actions, width, blocks, train,
            epochs, rng, penalty=penalty, label=f"finetune:s{session}",
        )

        if method == Method.REGULARIZATION:
            state.omega = state.omega + TrainingService.head_importance(
                state.head, features, actions, width, blocks
            )
        if method == Method.REPLAY:
            state.retained += [t.task_id for t in tasks]

    # ==================== CHECKPOINTS ====================

    @staticmethod
    def save_session(run_dir: Path, state: MethodState, session: int, new_tasks: List[TaskSpec]) -> Path:
        arrays = {"head": state.head}
        if state.omega is not None:
            arrays["omega"] = state.omega
        for task in new_tasks:
            if task.task_id in state.prompts:
                arrays[f"prompts.{task.task_id}"] = state.prompts[task.task_id]
        if state.graph is not None:
            state.graph.save(run_dir / GRAPH_FILENAME)
        return save_params(
            run_dir / f"session_{session}.json", arrays, kind="session",
            meta={"session": session, "retained": list(state.retained)},
        )

    @staticmethod
    def restore_session(ctx: ProtocolContext, run_dir: Path, state: MethodState, last_session: int) -> None:
        """Rebuild the method state after ``last_session`` from per-session checkpoints"""
        for t in range(1, last_session + 1):
            arrays, meta = load_params(run_dir / f"session_{t}.json", kind="session")
            state.head = arrays["head"]
            state.omega = arrays.get("omega")
            state.retained = list(meta.get("retained", []))
            for name, value in arrays.items():
                if name.startswith("prompts."):
                    state.prompts[name[len("prompts."):]] = value
        if state.graph is not None and last_session > 0:
            stored = RelationGraph.load(run_dir / GRAPH_FILENAME)
            for node in stored.nodes:
                if 0 < node.session_index <= last_session:
                    state.graph.add_node(node)

    # ==================== ENTRY POINT ====================

    @staticmethod
    def run_protocol(config: ExperimentConfig, run_dir: Union[str, Path], force: bool = False) -> RunSummary:
        """Run (or resume) one method × seed over the whole session schedule"""
        run_dir = Path(run_dir)
        ctx = ProtocolService.prepare(config)
        ProtocolService.claim_run_dir(run_dir, config, force)
        method = ctx.method
        train = config.train
        logger.info("Run %s seed %d: %d base tasks, %d sessions, q=%d",
                    method.value, train.seed, len(ctx.base), len(ctx.sessions), ctx.shots)

        policy, base_prompts, w_base = ProtocolService.train_base(ctx, run_dir)
        ProtocolService._write_parameter_summary(run_dir, policy, len(ctx.base) + sum(map(len, ctx.sessions)))

        state = MethodState(head=w_base.to_vector())
        if method in PROMPT_METHODS:
            state.graph = RelationGraph(w_base.to_vector(), train.ces.lambda1, train.ces.lambda2,
                                        train.ces.include_base_nodes)
            for node, prompts in ProtocolService.train_base_nodes(ctx, run_dir, policy, w_base):
                state.graph.add_node(node)
                state.prompts[node.task_id] = prompts

        with get_db(run_dir) as db:
            run = db.query(RunRecord).first()
            if run is None:
                run = RunRecord(
                    method=method.value,
                    seed=train.seed,
                    shots=ctx.shots,
                    schedule_hash=ConfigService.schedule_hash(config, ctx.base, ctx.sessions),
                    config_hash=ConfigService.config_hash(config),
                    format_version=config.format_version,
                    status="running",
                    last_session=-1,
                    lambda1=train.ces.lambda1 if method == Method.TOPIC else None,
                    lambda2=train.ces.lambda2 if method == Method.TOPIC else None,
                )
                db.add(run)
                db.commit()
            elif run.last_session >= 0:
                logger.info("Resuming %s after session %d", run_dir, run.last_session)
            db.query(SessionRecord).filter(SessionRecord.session > run.last_session).delete()
            db.commit()

            ProtocolService.restore_session(ctx, run_dir, state, max(run.last_session, 0))

            for session in range(run.last_session + 1, len(ctx.sessions) + 1):
                if session == 0:
                    report = ProtocolService.evaluate_session(ctx, policy, state, base_prompts, 0)
                else:
                    report = ProtocolService.run_incremental_session(ctx, policy, base_prompts, w_base, state, session)
                    ProtocolService.save_session(run_dir, state, session, ctx.sessions[session - 1])
                ProtocolService._record(db, report, ctx)
                run.last_session = session
                db.commit()

            run.status = "completed"
            db.commit()
            records = db.query(SessionRecord).order_by(SessionRecord.session, SessionRecord.id).all()
            summary = ReportService.build_summary(run, records, ProtocolService.retained_demo_ids(ctx, state))

        ReportService.write_summary(run_dir, summary)
        logger.info("Run %s seed %d finished: session average %.3f", method.value, train.seed, summary.session_average)
        return summary

    @staticmethod
    def _record(db, report: SessionReport, ctx: ProtocolContext) -> None:
        for task_id, rate in report.task_rates.items():
            db.add(SessionRecord(
                method=report.method,
                session=report.session,
                task_id=task_id,
                success_rate=rate,
                seed=report.seed,
                shots=ctx.shots,
                episodes=ctx.config.schedule.eval_episodes,
            ))

    @staticmethod
    def retained_demo_ids(ctx: ProtocolContext, state: MethodState) -> List[str]:
        """task#seed ids of every incremental demo the replay baseline keeps"""
        start = ctx.config.schedule.incremental_seed_start
        ids = []
        for task_id in state.retained:
            entry = ctx.manifest.files.get(task_id)
            seed_start = entry.seed_start if entry is not None else start
            ids += [f"{task_id}#{seed_start + i}" for i in range(ctx.shots)]
        return ids

    @staticmethod
    def _write_parameter_summary(run_dir: Path, policy: TopicPolicy, prompt_sets: int) -> None:
        stages = ["stage1", "stage2", "stage3", "finetune"]
        payload = {
            stage: PolicyService.parameter_summary(policy, stage, prompt_sets).model_dump(mode="json")
            for stage in stages
        }
        (run_dir / PARAMETER_SUMMARY_FILENAME).write_text(json.dumps(payload, indent=2))

    # ==================== BASELINES ====================

    @staticmethod
    def baseline_naive(config: ExperimentConfig, run_dir: Union[str, Path], force: bool = False) -> RunSummary:
        return ProtocolService.run_protocol(ConfigService.with_overrides(config, method=Method.NAIVE), run_dir, force)

    @staticmethod
    def baseline_replay(config: ExperimentConfig, run_dir: Union[str, Path], force: bool = False) -> RunSummary:
        return ProtocolService.run_protocol(ConfigService.with_overrides(config, method=Method.REPLAY), run_dir, force)

    @staticmethod
    def baseline_regularization(config: ExperimentConfig, run_dir: Union[str, Path], force: bool = False) -> RunSummary:
        return ProtocolService.run_protocol(
            ConfigService.with_overrides(config, method=Method.REGULARIZATION), run_dir, force
        )

    @staticmethod
    def default_run_dir(config: ExperimentConfig) -> Path:
        train = config.train
        return Path(config.output_dir) / f"{train.method.value}_q{config.schedule.shots}_seed{train.seed}"
