"""
Grid-table manipulation environment
File: app/services/env_service.py

Keyframe dynamics on a G×G table with three height levels: the gripper
teleports to each commanded pose, closing over an object grasps it and
opening releases it at the current cell. Illegal commands are no-ops so any
policy output can be executed.
"""

from typing import List, Optional, Tuple
import logging
import zlib

import numpy as np

from app.core.exceptions import ContractError, ExpertError, GenerationError
from app.schemas.config import EnvConfig
from app.schemas.demo import Observation
from app.schemas.task import (
    GRASPABLE,
    HEIGHT_LEVELS,
    PUSHABLE,
    ROTATION_BINS,
    Color,
    Gripper,
    GripperPose,
    KeyframeAction,
    ObjectState,
    Shape,
    TargetKind,
    TaskSpec,
    Verb,
    WorldState,
    Zone,
)
from app.services.catalog_service import instruction_tokens

logger = logging.getLogger(__name__)


MAX_PLACEMENT_ATTEMPTS = 1000
DIRECTIONS: List[Tuple[int, int]] = [(1, 0), (-1, 0), (0, 1), (0, -1)]

SHAPE_ORDER = list(Shape)
COLOR_ORDER = list(Color)

# ===== Render channel layout =====
CH_OCCUPANCY = 0
CH_SHAPE = 1                       # 7 planes
CH_COLOR = CH_SHAPE + len(SHAPE_ORDER)   # 4 planes
CH_GRIPPER = CH_COLOR + len(COLOR_ORDER)
CH_GRIPPER_CLOSED = CH_GRIPPER + 1
CH_DEPTH = CH_GRIPPER_CLOSED + 1
CH_ZONE = CH_DEPTH + 1             # 4 planes, top view only
CH_PRESSED = CH_ZONE + len(COLOR_ORDER)
CH_ORIENTATION = CH_PRESSED + 1
CH_GRIPPER_ROT = CH_ORIENTATION + 1
NUM_CHANNELS = CH_GRIPPER_ROT + 1

VIEW_TOP, VIEW_FRONT, VIEW_SIDE = 0, 1, 2


def _chebyshev(ax: int, ay: int, bx: int, by: int) -> int:
    return max(abs(ax - bx), abs(ay - by))


# Holes lose render ties against the peg resting in them
def _top_key(obj: ObjectState) -> tuple:
    return (obj.level, obj.shape != Shape.HOLE)


def _near_key(obj: ObjectState, depth: int) -> tuple:
    return (depth, obj.shape == Shape.HOLE)


class GridTableEnv:
    """Environment value-object factory; states themselves are immutable snapshots"""

    def __init__(self, config: Optional[EnvConfig] = None, max_tokens: int = 8):
        self.config = config or EnvConfig()
        self.grid = self.config.grid
        self.view_size = self.config.view_size
        self.max_tokens = max_tokens
        self.offset = (self.view_size - self.grid) // 2

    # ==================== RESET ====================

    def reset(self, task: TaskSpec, seed: int) -> WorldState:
        """Seeded scene sampling; unsolved and expert-solvable by construction"""
        rng = np.random.default_rng([int(seed), zlib.crc32(task.task_id.encode())])
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            state = self._sample_scene(task, rng)
            if state is not None:
                return state
        raise GenerationError(
            f"Could not place a scene for task '{task.task_id}' after {MAX_PLACEMENT_ATTEMPTS} attempts"
        )

    def _interior_cell(self, rng: np.random.Generator) -> Tuple[int, int]:
        x, y = rng.integers(1, self.grid - 1, size=2)
        return int(x), int(y)

    def _sample_scene(self, task: TaskSpec, rng: np.random.Generator) -> Optional[WorldState]:
        g = self.grid
        verb, obj, target = task.verb, task.object, task.target
        objects: List[ObjectState] = []
        zones: List[Zone] = []

        ox, oy = self._interior_cell(rng)
        primary = ObjectState(id=0, shape=obj.shape, color=obj.color, x=ox, y=oy,
                              orientation=int(rng.integers(ROTATION_BINS)))
        objects.append(primary)

        if verb in (Verb.PICK_PLACE,):
            zx, zy = int(rng.integers(g)), int(rng.integers(g))
            if _chebyshev(ox, oy, zx, zy) <= task.success.zone_radius + 1:
                return None
            zones.append(Zone(color=target.color, x=zx, y=zy))

        elif verb in (Verb.PUSH, Verb.SWEEP):
            dx, dy = DIRECTIONS[int(rng.integers(len(DIRECTIONS)))]
            lo, hi = task.success.push_distance
            k = int(rng.integers(lo, hi + 1))
            zx, zy = ox + k * dx, oy + k * dy
            bx, by = ox - dx, oy - dy
            if not (0 <= zx < g and 0 <= zy < g and 0 <= bx < g and 0 <= by < g):
                return None
            zones.append(Zone(color=target.color, x=zx, y=zy))

        elif verb in (Verb.STACK, Verb.INSERT):
            tx, ty = self._interior_cell(rng)
            if (tx, ty) == (ox, oy):
                return None
            objects.append(ObjectState(id=1, shape=target.shape, color=target.color, x=tx, y=ty,
                                       orientation=int(rng.integers(ROTATION_BINS))))

        elif verb == Verb.ROTATE:
            if primary.orientation == target.rotation:
                return None

        elif verb in (Verb.SLIDE_OPEN, Verb.SLIDE_CLOSE):
            travel = task.success.drawer_travel
            if oy + travel >= g:
                return None
            primary.anchor_y = oy
            primary.travel = travel
            primary.orientation = 0
            if verb == Verb.SLIDE_CLOSE:
                primary.y = oy + travel

        gx, gy = int(rng.integers(g)), int(rng.integers(g))
        return WorldState(
            grid=g,
            objects=objects,
            zones=zones,
            gripper=GripperPose(x=gx, y=gy, z=HEIGHT_LEVELS - 1, rot=0, closed=False),
        )

    # ==================== STEP ====================

    def step(self, state: WorldState, action: KeyframeAction) -> WorldState:
        """Apply one keyframe; returns a new state, the input is untouched"""
        if not action.in_grid(self.grid):
            raise ContractError(f"Action {action.to_tuple()} outside the {self.grid}×{self.grid} grid")

        nxt = state.model_copy(deep=True)
        grip = nxt.gripper
        held = nxt.object_by_id(nxt.held_object) if nxt.held_object is not None else None
        x, y, z, rot = action.x_bin, action.y_bin, action.z_bin, action.rot_bin

        # ----- motion -----
        if held is not None:
            if self._held_move_allowed(nxt, held, x, y, z):
                grip.x, grip.y, grip.z, grip.rot = x, y, z, rot
                held.x, held.y, held.level = x, y, z
                if held.shape != Shape.DRAWER:
                    held.orientation = rot
        else:
            straight = grip.z == 0 and z == 0 and ((grip.x == x) != (grip.y == y))
            if not straight or self._push(nxt, x, y):
                grip.x, grip.y, grip.z, grip.rot = x, y, z, rot

        # ----- gripper transition -----
        want_closed = action.gripper == Gripper.CLOSED
        if want_closed and not grip.closed:
            grip.closed = True
            candidate = self._graspable_at(nxt, grip.x, grip.y, grip.z)
            if candidate is not None:
                nxt.held_object = candidate.id
                if candidate.shape != Shape.DRAWER:
                    candidate.orientation = grip.rot
        elif not want_closed and grip.closed:
            if held is None or self._release(nxt, held):
                grip.closed = False
                nxt.held_object = None

        if grip.closed and nxt.held_object is None and grip.z == 0:
            for obj in nxt.objects:
                if obj.shape == Shape.BUTTON and obj.x == grip.x and obj.y == grip.y:
                    obj.pressed = True

        nxt.step_count += 1
        return nxt

    def _held_move_allowed(self, state: WorldState, held: ObjectState, x: int, y: int, z: int) -> bool:
        if held.shape == Shape.DRAWER:
            travel_ok = held.anchor_y is not None and held.anchor_y <= y <= held.anchor_y + held.travel
            if x != held.x or z != 0 or not travel_ok:
                return False
        for other in state.objects:
            if other.id == held.id or (other.x, other.y, other.level) != (x, y, z):
                continue
            if held.shape == Shape.PEG and other.shape == Shape.HOLE:
                continue
            return False
        return True

    def _push(self, state: WorldState, x: int, y: int) -> bool:
        """Sweep pushable columns along a straight z0 move; False rejects the move"""
        grip = state.gripper
        dx, dy = int(np.sign(x - grip.x)), int(np.sign(y - grip.y))
        length = abs(x - grip.x) + abs(y - grip.y)
        columns = []
        for i in range(1, length + 1):
            column = state.column(grip.x + i * dx, grip.y + i * dy)
            if column:
                if any(o.shape not in PUSHABLE for o in column):
                    return False
                columns.append(column)
        if not columns:
            return True

        moved = {o.id for col in columns for o in col}
        # Nearest column lands right beyond the end cell, farther ones ahead of it
        for rank, column in enumerate(columns):
            steps = len(columns) - rank
            cx, cy = x + steps * dx, y + steps * dy
            if not (0 <= cx < self.grid and 0 <= cy < self.grid):
                return False
            if any(o.id not in moved for o in state.column(cx, cy)):
                return False
        for rank, column in enumerate(columns):
            steps = len(columns) - rank
            for obj in column:
                obj.x, obj.y = x + steps * dx, y + steps * dy
        return True

    def _graspable_at(self, state: WorldState, x: int, y: int, z: int) -> Optional[ObjectState]:
        column = state.column(x, y)
        for obj in column:
            if obj.level != z or obj.shape not in GRASPABLE:
                continue
            if any(o.level > obj.level for o in column):
                continue
            return obj
        return None

    def _release(self, state: WorldState, held: ObjectState) -> bool:
        if held.shape == Shape.DRAWER:
            held.level = 0
            return True
        blocked = set()
        for o in state.column(held.x, held.y):
            if o.id == held.id:
                continue
            if held.shape == Shape.PEG and o.shape == Shape.HOLE:
                continue
            blocked.add(o.level)
        for level in range(HEIGHT_LEVELS):
            if level not in blocked:
                held.level = level
                return True
        return False

    # ==================== RENDERING ====================

    def render_views(self, state: WorldState) -> np.ndarray:
        """(3, V, V, NUM_CHANNELS) planes: top (x, y), front (x, z), side (y, z)"""
        v, off, g = self.view_size, self.offset, state.grid
        views = np.zeros((3, v, v, NUM_CHANNELS), dtype=np.float64)

        top, front, side = {}, {}, {}
        for obj in state.objects:
            key = (obj.x, obj.y)
            if key not in top or _top_key(obj) > _top_key(top[key]):
                top[key] = obj
            key = (obj.x, obj.level)
            if key not in front or _near_key(obj, obj.y) < _near_key(front[key], front[key].y):
                front[key] = obj
            key = (obj.y, obj.level)
            if key not in side or _near_key(obj, obj.x) < _near_key(side[key], side[key].x):
                side[key] = obj

        for (cx, cy), obj in top.items():
            self._paint(views[VIEW_TOP, off + cx, off + cy], obj, (obj.level + 1) / HEIGHT_LEVELS)
        for (cx, level), obj in front.items():
            self._paint(views[VIEW_FRONT, off + cx, off + level], obj, (obj.y + 1) / g)
        for (cy, level), obj in side.items():
            self._paint(views[VIEW_SIDE, off + cy, off + level], obj, (obj.x + 1) / g)

        for zone in state.zones:
            views[VIEW_TOP, off + zone.x, off + zone.y, CH_ZONE + COLOR_ORDER.index(zone.color)] = 1.0

        grip = state.gripper
        for view, (i, j) in enumerate([(grip.x, grip.y), (grip.x, grip.z), (grip.y, grip.z)]):
            cell = views[view, off + i, off + j]
            cell[CH_GRIPPER] = 1.0
            cell[CH_GRIPPER_CLOSED] = float(grip.closed)
            cell[CH_GRIPPER_ROT] = (grip.rot + 1) / ROTATION_BINS
        return views

    @staticmethod
    def _paint(cell: np.ndarray, obj: ObjectState, depth: float) -> None:
        cell[CH_OCCUPANCY] = 1.0
        cell[CH_SHAPE + SHAPE_ORDER.index(obj.shape)] = 1.0
        cell[CH_COLOR + COLOR_ORDER.index(obj.color)] = 1.0
        cell[CH_DEPTH] = depth
        cell[CH_PRESSED] = float(obj.pressed)
        cell[CH_ORIENTATION] = (obj.orientation + 1) / ROTATION_BINS

    def observe(self, state: WorldState, task: TaskSpec) -> Observation:
        return Observation(views=self.render_views(state), instruction_tokens=instruction_tokens(task, self.max_tokens))

    # ==================== SUCCESS ====================

    def check_success(self, state: WorldState, task: TaskSpec) -> bool:
        obj = state.find(task.object)
        if obj is None:
            return False
        released = state.held_object != obj.id
        verb, target = task.verb, task.target

        if verb == Verb.REACH:
            grip = state.gripper
            return (grip.x, grip.y) == (obj.x, obj.y) and grip.z == min(obj.level + 1, HEIGHT_LEVELS - 1)
        if verb in (Verb.PICK_PLACE, Verb.PUSH, Verb.SWEEP):
            zone = state.zone(target.color)
            return (
                zone is not None and released and obj.level == 0
                and _chebyshev(obj.x, obj.y, zone.x, zone.y) <= task.success.zone_radius
            )
        if verb == Verb.STACK:
            base = self._target_object(state, task)
            return (
                base is not None and released
                and (obj.x, obj.y) == (base.x, base.y) and obj.level == base.level + 1
            )
        if verb == Verb.PRESS:
            return obj.pressed
        if verb == Verb.ROTATE:
            return released and obj.level == 0 and obj.orientation == target.rotation
        if verb in (Verb.SLIDE_OPEN, Verb.SLIDE_CLOSE):
            if obj.anchor_y is None or not released:
                return False
            goal = obj.anchor_y + (task.success.drawer_travel if verb == Verb.SLIDE_OPEN else 0)
            return obj.y == goal
        if verb == Verb.INSERT:
            hole = self._target_object(state, task)
            return (
                hole is not None and released and obj.level == 0
                and (obj.x, obj.y) == (hole.x, hole.y)
                and obj.orientation % 2 == hole.orientation % 2
            )
        return False

    @staticmethod
    def _target_object(state: WorldState, task: TaskSpec) -> Optional[ObjectState]:
        target = task.target
        if target.kind != TargetKind.OBJECT:
            return None
        for obj in state.objects:
            if obj.shape == target.shape and obj.color == target.color:
                return obj
        return None

    # ==================== SCRIPTED EXPERT ====================

    def expert_policy(self, state: WorldState, task: TaskSpec) -> KeyframeAction:
        """Next keyframe of the deterministic scripted plan for the current state"""
        grip = state.gripper
        if self.check_success(state, task):
            return self._action(grip.x, grip.y, grip.z, grip.rot, grip.closed)

        obj = state.find(task.object)
        if obj is None:
            raise ExpertError(f"Task object {task.object} missing from the scene of '{task.task_id}'")
        verb, target = task.verb, task.target

        if state.held_object is not None and state.held_object != obj.id:
            return self._action(grip.x, grip.y, grip.z, grip.rot, False)

        if verb == Verb.REACH:
            return self._action(obj.x, obj.y, min(obj.level + 1, HEIGHT_LEVELS - 1), 0, False)

        if verb == Verb.PRESS:
            if (grip.x, grip.y, grip.z) == (obj.x, obj.y, 1) and grip.closed:
                return self._action(obj.x, obj.y, 0, 0, True)
            return self._action(obj.x, obj.y, 1, 0, True)

        if verb in (Verb.PUSH, Verb.SWEEP):
            return self._push_plan(state, task, obj)

        if verb in (Verb.PICK_PLACE, Verb.STACK, Verb.INSERT):
            if verb == Verb.PICK_PLACE:
                zone = state.zone(target.color)
                if zone is None:
                    raise ExpertError(f"Zone {target.color} missing for '{task.task_id}'")
                dest = (zone.x, zone.y, 1)
                rot = 0
            else:
                other = self._target_object(state, task)
                if other is None:
                    raise ExpertError(f"Target object missing for '{task.task_id}'")
                dest = (other.x, other.y, min(other.level + 1, HEIGHT_LEVELS - 1))
                rot = other.orientation if verb == Verb.INSERT else 0
            if state.held_object == obj.id:
                if (grip.x, grip.y, grip.z) == dest:
                    return self._action(*dest, grip.rot, False)
                return self._action(*dest, rot, True)
            return self._grasp_plan(state, obj, rot)

        if verb == Verb.ROTATE:
            rot = target.rotation
            if state.held_object == obj.id:
                return self._action(grip.x, grip.y, grip.z, rot, False)
            return self._grasp_plan(state, obj, rot)

        if verb in (Verb.SLIDE_OPEN, Verb.SLIDE_CLOSE):
            if obj.anchor_y is None:
                raise ExpertError(f"Drawer in '{task.task_id}' has no anchor")
            dest_y = obj.anchor_y + (task.success.drawer_travel if verb == Verb.SLIDE_OPEN else 0)
            if state.held_object == obj.id:
                if obj.y == dest_y:
                    return self._action(grip.x, grip.y, grip.z, grip.rot, False)
                return self._action(obj.x, dest_y, 0, grip.rot, True)
            return self._grasp_plan(state, obj, 0)

        raise ExpertError(f"No scripted plan for verb '{verb}'")

    def _grasp_plan(self, state: WorldState, obj: ObjectState, rot: int) -> KeyframeAction:
        """Hover above the object open, then descend and close"""
        grip = state.gripper
        hover = min(obj.level + 1, HEIGHT_LEVELS - 1)
        if (grip.x, grip.y, grip.z, grip.rot) == (obj.x, obj.y, hover, rot) and not grip.closed:
            return self._action(obj.x, obj.y, obj.level, rot, True)
        return self._action(obj.x, obj.y, hover, rot, False)

    def _push_plan(self, state: WorldState, task: TaskSpec, obj: ObjectState) -> KeyframeAction:
        zone = state.zone(task.target.color)
        if zone is None:
            raise ExpertError(f"Zone {task.target.color} missing for '{task.task_id}'")
        if (obj.x != zone.x) == (obj.y != zone.y):
            raise ExpertError(f"Object and zone of '{task.task_id}' are not aligned on one axis")
        dx, dy = int(np.sign(zone.x - obj.x)), int(np.sign(zone.y - obj.y))
        bx, by = obj.x - dx, obj.y - dy
        if not (0 <= bx < self.grid and 0 <= by < self.grid):
            raise ExpertError(f"No room behind the object of '{task.task_id}'")
        closed = task.verb == Verb.PUSH
        rot = 0 if closed else 1
        grip = state.gripper
        if (grip.x, grip.y, grip.z) == (bx, by, 0):
            return self._action(zone.x - dx, zone.y - dy, 0, rot, closed)
        if (grip.x, grip.y, grip.z) == (bx, by, 1):
            return self._action(bx, by, 0, rot, closed)
        return self._action(bx, by, 1, rot, closed)

    @staticmethod
    def _action(x: int, y: int, z: int, rot: int, closed: bool) -> KeyframeAction:
        return KeyframeAction(x_bin=x, y_bin=y, z_bin=z, rot_bin=rot,
                              gripper=Gripper.CLOSED if closed else Gripper.OPEN)

    # ==================== ROLLOUTS ====================

    def expert_rollout(self, task: TaskSpec, seed: int) -> Tuple[List[WorldState], List[KeyframeAction]]:
        """States s0..sT and actions a0..a(T-1) of the expert until success"""
        state = self.reset(task, seed)
        states, actions = [state], []
        for _ in range(self.config.max_keyframes):
            if self.check_success(state, task):
                break
            action = self.expert_policy(state, task)
            state = self.step(state, action)
            states.append(state)
            actions.append(action)
        if not self.check_success(state, task):
            raise ExpertError(
                f"Expert failed '{task.task_id}' from seed {seed} within {self.config.max_keyframes} keyframes"
            )
        return states, actions

    def replay(self, task: TaskSpec, seed: int, actions: List[KeyframeAction]) -> List[WorldState]:
        state = self.reset(task, seed)
        states = [state]
        for action in actions:
            state = self.step(state, action)
            states.append(state)
        return states
