"""
Training loops for the three stages and the head-only baselines
File: app/services/training_service.py

Stage 1   - backbone, projection, shared base prompts and W_base on all base demos
Stage 2/3 - fresh prompts + a head initialised from W_base, backbone frozen
Baselines - the single shared head on cached pooled features
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple
import logging
import math
import zlib

import numpy as np
from tqdm import tqdm

from app.core import ops
from app.core.exceptions import TrainingDivergenceError
from app.core.optim import build_optimizer
from app.core.tensor import Tape, Tensor, backward, no_grad
from app.schemas.config import StageConfig, TrainConfig
from app.schemas.demo import Demonstration
from app.schemas.task import KeyframeAction
from app.services.ces_service import TaskNode
from app.services.policy_service import (
    PolicyHead,
    PolicyService,
    PromptSet,
    TopicPolicy,
    batch_mean,
    head_logits,
    imitation_loss,
    init_prompts,
    pool_tokens,
)

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    """One (observation, expert keyframe) pair"""

    task_id: str
    demo_id: str
    tokens: List[int]
    views: np.ndarray
    action: KeyframeAction


def demos_to_samples(demos: Sequence[Demonstration]) -> List[Sample]:
    return [
        Sample(
            task_id=d.task_id,
            demo_id=d.demo_id,
            tokens=list(step.observation.instruction_tokens),
            views=step.observation.views,
            action=step.action,
        )
        for d in demos
        for step in d.steps
    ]


class TrainingService:

    @staticmethod
    def run_epochs(
        params: List[Tensor],
        n_samples: int,
        loss_fn: Callable[[Sequence[int]], Tensor],
        stage: StageConfig,
        epochs: int,
        optimizer: str,
        rng: np.random.Generator,
        label: str,
        config_summary: dict,
        show_progress: bool = False,
    ) -> List[float]:
        """Shuffled mini-batch descent; returns the mean loss of every epoch"""
        history: List[float] = []
        if n_samples == 0 or epochs == 0:
            return history
        opt = build_optimizer(optimizer, params, stage.lr)
        step = 0
        for epoch in tqdm(range(epochs), desc=label, disable=not show_progress, leave=False):
            order = rng.permutation(n_samples)
            total = 0.0
            for start in range(0, n_samples, stage.batch_size):
                batch = order[start: start + stage.batch_size]
                opt.zero_grad()
                with Tape() as tape:
                    loss = loss_fn(batch)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergenceError(label, step, config_summary)
                backward(loss, tape, params=opt.params)
                opt.step()
                step += 1
                total += value * len(batch)
            history.append(total / n_samples)
            logger.debug("%s epoch %d/%d loss %.4f", label, epoch + 1, epochs, history[-1])
        return history

    # ==================== STAGE 1 ====================

    @staticmethod
    def train_base(
        policy: TopicPolicy,
        base_prompts: PromptSet,
        w_base: PolicyHead,
        samples: List[Sample],
        config: TrainConfig,
        rng: np.random.Generator,
    ) -> List[float]:
        """Joint multi-task training of everything; the backbone is frozen afterwards"""
        params = policy.backbone.parameters() + policy.projection.parameters()
        params += [base_prompts.prompts] + w_base.parameters()

        def loss_fn(batch):
            losses = []
            for i in batch:
                s = samples[i]
                result = PolicyService.forward(policy, base_prompts.prompts, s.tokens, s.views, w_base)
                losses.append(imitation_loss(result.logits, s.action))
            return batch_mean(losses)

        history = TrainingService.run_epochs(
            params, len(samples), loss_fn, config.stage1, config.stage1.epochs, config.optimizer,
            rng, "stage1", TrainingService._summary(config, "stage1"), config.show_progress,
        )
        policy.freeze()
        base_prompts.prompts.requires_grad = False
        for t in w_base.parameters():
            t.requires_grad = False
            t.grad = None
        base_prompts.prompts.grad = None
        if history:
            logger.info("Stage 1 finished: %d samples, final loss %.4f", len(samples), history[-1])
        return history

    # ==================== STAGES 2 / 3 ====================

    @staticmethod
    def train_task_specific(
        policy: TopicPolicy,
        task_id: str,
        samples: List[Sample],
        w_base: np.ndarray,
        config: TrainConfig,
        stage: StageConfig,
        epochs: int,
        session_index: int,
        label: str,
    ) -> Tuple[PromptSet, PolicyHead, TaskNode]:
        """Fresh prompts + head from W_base on one task's demos; returns the graph node too"""
        prompts = init_prompts(task_id, config.model, config.seed)
        head = PolicyHead.from_vector(w_base, policy.width, policy.block_sizes, trainable=True)

        # Frozen encoders: language/vision tokens are constants
        with no_grad():
            cached = [PolicyService.encode_observation(policy, s.tokens, s.views) for s in samples]

        def loss_fn(batch):
            losses = []
            for i in batch:
                text, vision = cached[i]
                result = PolicyService.forward_tokens(policy, prompts.prompts, text, vision, head)
                losses.append(imitation_loss(result.logits, samples[i].action))
            return batch_mean(losses)

        rng = TrainingService.task_rng(config.seed, task_id, session_index)
        history = TrainingService.run_epochs(
            [prompts.prompts] + head.parameters(), len(samples), loss_fn, stage, epochs, config.optimizer,
            rng, f"{label}:{task_id}", TrainingService._summary(config, label), config.show_progress,
        )
        prompts.prompts.requires_grad = False
        prompts.prompts.grad = None
        for t in head.parameters():
            t.requires_grad = False
            t.grad = None

        embedding = TrainingService.prompt_embedding(policy, prompts, cached, head)
        node = TaskNode(task_id=task_id, prompt_embedding=embedding, head_weights=head.to_vector(),
                        session_index=session_index)
        if history:
            logger.info("%s %s: %d samples, final loss %.4f", label, task_id, len(samples), history[-1])
        return prompts, head, node

    @staticmethod
    def prompt_embedding(policy: TopicPolicy, prompts: PromptSet, cached, head: PolicyHead) -> np.ndarray:
        """P̂ averaged over the task's training observations, flattened to n·C"""
        with no_grad():
            total = np.zeros((prompts.n, policy.width))
            for text, vision in cached:
                result = PolicyService.forward_tokens(policy, prompts.prompts, text, vision, head)
                total += result.p_hat.data
        return (total / max(len(cached), 1)).reshape(-1)

    # ==================== HEAD-ONLY BASELINES ====================

    @staticmethod
    def pooled_features(policy: TopicPolicy, prompts: PromptSet, samples: List[Sample], head: PolicyHead) -> np.ndarray:
        """Mean-pooled fused features per sample (N×C); constant once the backbone is frozen"""
        rows = []
        with no_grad():
            for s in samples:
                result = PolicyService.forward(policy, prompts.prompts, s.tokens, s.views, head)
                rows.append(pool_tokens(result.x_out).data)
        if not rows:
            return np.zeros((0, policy.width))
        return np.concatenate(rows, axis=0)

    @staticmethod
    def finetune_head(
        head_vector: np.ndarray,
        features: np.ndarray,
        actions: List[KeyframeAction],
        width: int,
        block_sizes: Sequence[int],
        config: TrainConfig,
        epochs: int,
        rng: np.random.Generator,
        penalty: Optional[Tuple[float, np.ndarray, np.ndarray]] = None,
        label: str = "finetune",
    ) -> np.ndarray:
        """
        Fine-tune the shared head on cached features.

        ``penalty`` = (mu, omega, anchor) adds mu · Σ omega · (θ − anchor)²;
        it is skipped entirely when None or mu == 0.
        """
        head = PolicyHead.from_vector(head_vector, width, block_sizes, trainable=True)
        use_penalty = penalty is not None and penalty[0] != 0.0
        if use_penalty:
            mu, omega, anchor = penalty
            omega_w, omega_b = head.split(omega)
            anchor_w, anchor_b = head.split(anchor)

        def loss_fn(batch):
            losses = [
                imitation_loss(head_logits(Tensor(features[i: i + 1]), head), actions[i])
                for i in batch
            ]
            loss = batch_mean(losses)
            if use_penalty:
                reg = ops.add(
                    ops.weighted_sq_distance(head.weight, anchor_w, omega_w),
                    ops.weighted_sq_distance(head.bias, anchor_b, omega_b),
                )
                loss = ops.add(loss, ops.scale(reg, mu))
            return loss

        TrainingService.run_epochs(
            head.parameters(), features.shape[0], loss_fn, config.stage3, epochs, config.optimizer,
            rng, label, TrainingService._summary(config, label), config.show_progress,
        )
        return head.to_vector()

    @staticmethod
    def head_importance(
        head_vector: np.ndarray,
        features: np.ndarray,
        actions: List[KeyframeAction],
        width: int,
        block_sizes: Sequence[int],
    ) -> np.ndarray:
        """Per-parameter mean |gradient| of the imitation loss over the given samples"""
        head = PolicyHead.from_vector(head_vector, width, block_sizes, trainable=True)
        importance = np.zeros(head.size)
        n = features.shape[0]
        for i in range(n):
            head.weight.grad = None
            head.bias.grad = None
            with Tape() as tape:
                loss = imitation_loss(head_logits(Tensor(features[i: i + 1]), head), actions[i])
            backward(loss, tape, params=head.parameters())
            grad = np.concatenate([head.weight.grad.reshape(-1), head.bias.grad.reshape(-1)])
            importance += np.abs(grad)
        return importance / max(n, 1)

    @staticmethod
    def unit_mean(importance: np.ndarray) -> np.ndarray:
        """Rescale importance to mean 1 so mu alone sets the penalty strength"""
        mean = float(np.mean(importance)) if importance.size else 0.0
        if mean <= 0.0:
            return np.ones_like(importance)
        return importance / mean

    # ==================== HELPERS ====================

    @staticmethod
    def matched_epochs(epochs: int, n_new: int, n_batch: int, batch_size: int) -> int:
        """Epochs over ``n_batch`` samples that take as many optimizer steps as ``epochs`` over ``n_new``"""
        if n_batch <= n_new or n_new == 0:
            return epochs
        steps = epochs * math.ceil(n_new / batch_size)
        return max(1, round(steps / math.ceil(n_batch / batch_size)))

    @staticmethod
    def task_rng(seed: int, task_id: str, session_index: int) -> np.random.Generator:
        return np.random.default_rng([int(seed), 2, session_index, zlib.crc32(task_id.encode())])

    @staticmethod
    def _summary(config: TrainConfig, stage: str) -> dict:
        return {
            "stage": stage,
            "method": config.method.value,
            "seed": config.seed,
            "optimizer": config.optimizer,
            "lr": getattr(config, stage).lr if hasattr(config, stage) else config.stage3.lr,
        }
