"""
Task catalog, instruction vocabulary and session schedule selection
File: app/services/catalog_service.py

The built-in catalog holds 10 base and 5 incremental task families. Every
incremental task uses a verb or an object that no base task uses, so the two
sets share no (verb, object) pair.
"""

from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union
import logging

import yaml
from pydantic import ValidationError

from app.core.exceptions import ConfigError, EncodingError
from app.schemas.config import SessionSchedule
from app.schemas.task import (
    Color,
    ObjectDescriptor,
    SessionTag,
    Shape,
    TargetDescriptor,
    TargetKind,
    TaskSpec,
    Verb,
)

logger = logging.getLogger(__name__)


CATALOG_FORMAT_VERSION = 1
PAD_TOKEN = "<pad>"

VOCABULARY: List[str] = [
    PAD_TOKEN,
    "reach", "pick", "place", "push", "stack", "press", "rotate", "slide",
    "open", "close", "insert", "sweep", "to", "on", "into",
    *[c.value for c in Color],
    *[s.value for s in Shape],
    "zone", "0", "90", "180", "270",
]


def _task(task_id, verb, obj_shape, obj_color, tag=SessionTag.BASE, **target) -> TaskSpec:
    return TaskSpec(
        task_id=task_id,
        verb=verb,
        object=ObjectDescriptor(shape=obj_shape, color=obj_color),
        target=TargetDescriptor(**target),
        session_tag=tag,
    )


INC = SessionTag.INCREMENTAL

DEFAULT_CATALOG: List[TaskSpec] = [
    # Base session
    _task("reach_red_cube", Verb.REACH, Shape.CUBE, Color.RED),
    _task("pick_red_cube_green_zone", Verb.PICK_PLACE, Shape.CUBE, Color.RED, kind=TargetKind.ZONE, color=Color.GREEN),
    _task("pick_blue_ball_yellow_zone", Verb.PICK_PLACE, Shape.BALL, Color.BLUE, kind=TargetKind.ZONE, color=Color.YELLOW),
    _task("push_blue_cube_green_zone", Verb.PUSH, Shape.CUBE, Color.BLUE, kind=TargetKind.ZONE, color=Color.GREEN),
    _task("stack_green_cube_red_cube", Verb.STACK, Shape.CUBE, Color.GREEN,
          kind=TargetKind.OBJECT, color=Color.RED, shape=Shape.CUBE),
    _task("press_red_button", Verb.PRESS, Shape.BUTTON, Color.RED),
    _task("rotate_yellow_block_90", Verb.ROTATE, Shape.BLOCK, Color.YELLOW, kind=TargetKind.ORIENTATION, rotation=1),
    _task("open_green_drawer", Verb.SLIDE_OPEN, Shape.DRAWER, Color.GREEN, kind=TargetKind.OPEN),
    _task("reach_blue_ball", Verb.REACH, Shape.BALL, Color.BLUE),
    _task("stack_yellow_block_blue_cube", Verb.STACK, Shape.BLOCK, Color.YELLOW,
          kind=TargetKind.OBJECT, color=Color.BLUE, shape=Shape.CUBE),
    # Incremental sessions
    _task("close_green_drawer", Verb.SLIDE_CLOSE, Shape.DRAWER, Color.GREEN, INC, kind=TargetKind.CLOSED),
    _task("insert_yellow_peg_blue_hole", Verb.INSERT, Shape.PEG, Color.YELLOW, INC,
          kind=TargetKind.OBJECT, color=Color.BLUE, shape=Shape.HOLE),
    _task("sweep_red_ball_yellow_zone", Verb.SWEEP, Shape.BALL, Color.RED, INC, kind=TargetKind.ZONE, color=Color.YELLOW),
    _task("pick_yellow_peg_green_zone", Verb.PICK_PLACE, Shape.PEG, Color.YELLOW, INC,
          kind=TargetKind.ZONE, color=Color.GREEN),
    _task("press_blue_button", Verb.PRESS, Shape.BUTTON, Color.BLUE, INC),
]


# ==================== INSTRUCTIONS ====================

def instruction_text(task: TaskSpec) -> str:
    """Templated language instruction, e.g. 'pick red cube place green zone'"""
    obj = f"{task.object.color.value} {task.object.shape.value}"
    target = task.target
    verb = task.verb

    if verb == Verb.REACH:
        return f"reach {obj}"
    if verb == Verb.PICK_PLACE:
        return f"pick {obj} place {target.color.value} zone"
    if verb in (Verb.PUSH, Verb.SWEEP):
        return f"{verb.value} {obj} to {target.color.value} zone"
    if verb == Verb.STACK:
        return f"stack {obj} on {target.color.value} {target.shape.value}"
    if verb == Verb.PRESS:
        return f"press {obj}"
    if verb == Verb.ROTATE:
        return f"rotate {obj} to {target.rotation * 90}"
    if verb == Verb.SLIDE_OPEN:
        return f"slide open {obj}"
    if verb == Verb.SLIDE_CLOSE:
        return f"slide close {obj}"
    if verb == Verb.INSERT:
        return f"insert {obj} into {target.color.value} {target.shape.value}"
    raise ConfigError(f"No instruction template for verb '{verb}'")


def tokenize(text: str, max_tokens: int, vocabulary: Optional[List[str]] = None) -> List[int]:
    """Whitespace split + fixed vocabulary lookup, padded with the pad id to max_tokens"""
    vocab = vocabulary or VOCABULARY
    index = {word: i for i, word in enumerate(vocab)}
    words = text.split()
    if len(words) > max_tokens:
        raise EncodingError(f"Instruction '{text}' has {len(words)} words, limit is {max_tokens}")
    ids = []
    for word in words:
        if word not in index:
            raise EncodingError(f"Word '{word}' is not in the vocabulary")
        ids.append(index[word])
    return ids + [index[PAD_TOKEN]] * (max_tokens - len(ids))


def instruction_tokens(task: TaskSpec, max_tokens: int) -> List[int]:
    return tokenize(instruction_text(task), max_tokens)


# ==================== CATALOG FILES ====================

def load_catalog(path: Optional[Union[str, Path]] = None) -> List[TaskSpec]:
    """Read a catalog YAML ({format_version, tasks: [...]}); built-in catalog when path is None"""
    if path is None:
        return list(DEFAULT_CATALOG)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Task catalog not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    version = raw.get("format_version", CATALOG_FORMAT_VERSION)
    if version != CATALOG_FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported catalog format_version {version}")
    try:
        tasks = [TaskSpec.model_validate(t) for t in raw.get("tasks", [])]
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid task entry\n{e}")
    validate_catalog(tasks)
    logger.debug("Loaded %d tasks from %s", len(tasks), path)
    return tasks


def dump_catalog(tasks: Iterable[TaskSpec], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CATALOG_FORMAT_VERSION,
        "tasks": [t.model_dump(mode="json") for t in tasks],
    }
    path.write_text(yaml.safe_dump(payload, sort_keys=False))
    return path


def validate_catalog(tasks: List[TaskSpec]) -> None:
    ids, keys = set(), set()
    for task in tasks:
        if task.task_id in ids:
            raise ConfigError(f"Duplicate task_id '{task.task_id}' in catalog")
        if task.key in keys:
            raise ConfigError(f"Task '{task.task_id}' duplicates the (verb, object, target) of another task")
        ids.add(task.task_id)
        keys.add(task.key)
        # Every instruction must tokenize
        tokenize(instruction_text(task), max_tokens=len(instruction_text(task).split()))

    base = [t for t in tasks if t.session_tag == SessionTag.BASE]
    base_pairs = {t.verb_object for t in base}
    base_verbs = {t.verb for t in base}
    base_objects = {t.object for t in base}
    for task in tasks:
        if task.session_tag != SessionTag.INCREMENTAL:
            continue
        if task.verb_object in base_pairs:
            raise ConfigError(f"Incremental task '{task.task_id}' repeats a base (verb, object) pair")
        if task.verb in base_verbs and task.object in base_objects:
            raise ConfigError(
                f"Incremental task '{task.task_id}' uses only verbs and objects already seen in the base session"
            )


# ==================== SCHEDULE ====================

def resolve_schedule(
    catalog: List[TaskSpec],
    schedule: SessionSchedule,
) -> Tuple[List[TaskSpec], List[List[TaskSpec]]]:
    """
    Base tasks and incremental sessions for a schedule.

    Defaults: every base-tagged catalog task, then incremental-tagged tasks
    grouped tasks_per_session at a time. base_task_count keeps the first N.
    """
    by_id = {t.task_id: t for t in catalog}

    def lookup(task_id: str) -> TaskSpec:
        if task_id not in by_id:
            raise ConfigError(f"Schedule names unknown task '{task_id}'")
        return by_id[task_id]

    if schedule.base_task_ids is not None:
        base = [lookup(t) for t in schedule.base_task_ids]
    else:
        base = [t for t in catalog if t.session_tag == SessionTag.BASE]
    if schedule.base_task_count is not None:
        if schedule.base_task_count > len(base):
            raise ConfigError(f"base_task_count {schedule.base_task_count} exceeds {len(base)} base tasks")
        base = base[: schedule.base_task_count]

    if schedule.incremental_sessions is not None:
        sessions = [[lookup(t) for t in group] for group in schedule.incremental_sessions]
    else:
        pool = [t for t in catalog if t.session_tag == SessionTag.INCREMENTAL]
        p = schedule.tasks_per_session
        sessions = [pool[i: i + p] for i in range(0, len(pool), p)]

    seen = {t.task_id for t in base}
    for group in sessions:
        if not group:
            raise ConfigError("Incremental sessions must contain at least one task")
        for task in group:
            if task.task_id in seen:
                raise ConfigError(f"Task '{task.task_id}' appears in more than one session")
            seen.add(task.task_id)
    return base, sessions
