"""
Closed-loop success-rate evaluation
File: app/services/evaluation_service.py
"""

from typing import Callable, Dict, List, Optional, Protocol
import logging

import numpy as np

from app.core.tensor import Tensor, no_grad
from app.schemas.task import Gripper, HEIGHT_LEVELS, ROTATION_BINS, KeyframeAction, TaskSpec, WorldState
from app.services.env_service import GridTableEnv
from app.services.policy_service import PolicyHead, PolicyService, TopicPolicy, encode_language, encode_views

logger = logging.getLogger(__name__)


DEFAULT_HORIZON = 8


class Serving(Protocol):
    """A policy that can be rolled out: one keyframe per call"""

    def begin_episode(self, task: TaskSpec, seed: int) -> None: ...

    def act(self, state: WorldState, task: TaskSpec) -> KeyframeAction: ...


class ExpertServing:
    """Oracle upper bound: the scripted expert"""

    def __init__(self, env: GridTableEnv):
        self.env = env

    def begin_episode(self, task: TaskSpec, seed: int) -> None:
        pass

    def act(self, state: WorldState, task: TaskSpec) -> KeyframeAction:
        return self.env.expert_policy(state, task)


class RandomServing:
    """Uniform random bins, reseeded per episode"""

    def __init__(self, env: GridTableEnv, seed: int = 0):
        self.env = env
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def begin_episode(self, task: TaskSpec, seed: int) -> None:
        self.rng = np.random.default_rng([self.seed, seed])

    def act(self, state: WorldState, task: TaskSpec) -> KeyframeAction:
        g = self.env.grid
        r = self.rng
        return KeyframeAction.from_tuple((
            r.integers(g), r.integers(g), r.integers(HEIGHT_LEVELS), r.integers(ROTATION_BINS), r.integers(len(Gripper)),
        ))


class PolicyServing:
    """
    Serving rule: one head for every task, prompts looked up by the task id
    the harness attaches to each episode.
    """

    def __init__(
        self,
        env: GridTableEnv,
        policy: TopicPolicy,
        head_vector: np.ndarray,
        prompt_lookup: Callable[[str], Tensor],
    ):
        self.env = env
        self.policy = policy
        self.head = PolicyHead.from_vector(head_vector, policy.width, policy.block_sizes)
        self.prompt_lookup = prompt_lookup
        self._text_cache: Dict[str, Tensor] = {}

    def begin_episode(self, task: TaskSpec, seed: int) -> None:
        pass

    def act(self, state: WorldState, task: TaskSpec) -> KeyframeAction:
        obs = self.env.observe(state, task)
        with no_grad():
            text = self._text_cache.get(task.task_id)
            if text is None:
                text = encode_language(obs.instruction_tokens, self.policy.backbone)
                self._text_cache[task.task_id] = text
            vision = encode_views(obs.views, self.policy.backbone, self.policy.config.patch)
            result = PolicyService.forward_tokens(self.policy, self.prompt_lookup(task.task_id), text, vision, self.head)
        return result.logits.decode()


class EvaluationService:

    @staticmethod
    def run_episode(env: GridTableEnv, serving: Serving, task: TaskSpec, seed: int, horizon: int = DEFAULT_HORIZON) -> bool:
        state = env.reset(task, seed)
        serving.begin_episode(task, seed)
        for _ in range(horizon):
            state = env.step(state, serving.act(state, task))
            if env.check_success(state, task):
                return True
        return False

    @staticmethod
    def evaluate(
        env: GridTableEnv,
        serving: Serving,
        tasks: List[TaskSpec],
        episodes: int,
        seed_start: int,
        horizon: int = DEFAULT_HORIZON,
    ) -> Dict[str, float]:
        """Per-task success rate over seeds seed_start .. seed_start+episodes-1"""
        rates: Dict[str, float] = {}
        for task in tasks:
            wins = sum(
                EvaluationService.run_episode(env, serving, task, seed_start + e, horizon)
                for e in range(episodes)
            )
            rates[task.task_id] = wins / episodes
            logger.debug("eval %s: %.3f", task.task_id, rates[task.task_id])
        return rates

    @staticmethod
    def average(rates: Dict[str, float], tasks: Optional[List[TaskSpec]] = None) -> float:
        keys = [t.task_id for t in tasks] if tasks is not None else list(rates)
        if not keys:
            return 0.0
        return float(sum(rates[k] for k in keys) / len(keys))
