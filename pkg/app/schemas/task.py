"""
Task, world-state and action schemas for the grid-table environment
File: app/schemas/task.py
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Optional, Tuple
from enum import Enum, IntEnum


class Verb(str, Enum):
    REACH = "reach"
    PICK_PLACE = "pick_place"
    PUSH = "push"
    STACK = "stack"
    PRESS = "press"
    ROTATE = "rotate"
    SLIDE_OPEN = "slide_open"
    SLIDE_CLOSE = "slide_close"
    INSERT = "insert"
    SWEEP = "sweep"


class Shape(str, Enum):
    CUBE = "cube"
    BALL = "ball"
    BLOCK = "block"
    BUTTON = "button"
    DRAWER = "drawer"
    PEG = "peg"
    HOLE = "hole"


class Color(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"


class SessionTag(str, Enum):
    BASE = "base"
    INCREMENTAL = "incremental"


class TargetKind(str, Enum):
    NONE = "none"
    ZONE = "zone"
    OBJECT = "object"
    ORIENTATION = "orientation"
    OPEN = "open"
    CLOSED = "closed"


class Gripper(IntEnum):
    OPEN = 0
    CLOSED = 1


# Shapes the gripper can close on; buttons and holes are fixtures
GRASPABLE = {Shape.CUBE, Shape.BALL, Shape.BLOCK, Shape.PEG, Shape.DRAWER}
# Shapes a sweeping gripper displaces
PUSHABLE = {Shape.CUBE, Shape.BALL, Shape.BLOCK, Shape.PEG}

HEIGHT_LEVELS = 3
ROTATION_BINS = 4


# ==================== TASK CATALOG ====================

class ObjectDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: Shape
    color: Color


class TargetDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: TargetKind = TargetKind.NONE
    color: Optional[Color] = None
    shape: Optional[Shape] = None
    rotation: Optional[int] = Field(None, ge=0, lt=ROTATION_BINS)


class SuccessParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    zone_radius: int = Field(default=0, ge=0, description="Chebyshev tolerance around a zone cell")
    drawer_travel: int = Field(default=2, ge=1, description="Cells between closed and open drawer")
    push_distance: Tuple[int, int] = Field(default=(2, 3), description="Min/max object-to-zone distance")


class TaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    task_id: str = Field(..., min_length=1)
    verb: Verb
    object: ObjectDescriptor
    target: TargetDescriptor = Field(default_factory=TargetDescriptor)
    session_tag: SessionTag = SessionTag.BASE
    success: SuccessParams = Field(default_factory=SuccessParams)

    @property
    def key(self) -> tuple:
        return (self.verb, self.object, self.target)

    @property
    def verb_object(self) -> tuple:
        return (self.verb, self.object)


# ==================== ACTIONS ====================

class KeyframeAction(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_bin: int = Field(..., ge=0)
    y_bin: int = Field(..., ge=0)
    z_bin: int = Field(..., ge=0, lt=HEIGHT_LEVELS)
    rot_bin: int = Field(..., ge=0, lt=ROTATION_BINS)
    gripper: Gripper

    def to_tuple(self) -> Tuple[int, int, int, int, int]:
        return (self.x_bin, self.y_bin, self.z_bin, self.rot_bin, int(self.gripper))

    @classmethod
    def from_tuple(cls, values) -> "KeyframeAction":
        x, y, z, r, g = (int(v) for v in values)
        return cls(x_bin=x, y_bin=y, z_bin=z, rot_bin=r, gripper=Gripper(g))

    def in_grid(self, grid: int) -> bool:
        return self.x_bin < grid and self.y_bin < grid


# ==================== WORLD STATE ====================

class ObjectState(BaseModel):
    id: int
    shape: Shape
    color: Color
    x: int
    y: int
    level: int = Field(default=0, ge=0, lt=HEIGHT_LEVELS)
    orientation: int = Field(default=0, ge=0, lt=ROTATION_BINS)
    pressed: bool = False
    anchor_y: Optional[int] = Field(None, description="Closed position of a drawer")
    travel: int = Field(default=0, ge=0, description="Drawer slide range beyond anchor_y")

    @property
    def descriptor(self) -> ObjectDescriptor:
        return ObjectDescriptor(shape=self.shape, color=self.color)


class Zone(BaseModel):
    color: Color
    x: int
    y: int


class GripperPose(BaseModel):
    x: int
    y: int
    z: int = Field(default=2, ge=0, lt=HEIGHT_LEVELS)
    rot: int = Field(default=0, ge=0, lt=ROTATION_BINS)
    closed: bool = False


class WorldState(BaseModel):
    grid: int = Field(default=12, ge=1)
    objects: List[ObjectState] = Field(default_factory=list)
    zones: List[Zone] = Field(default_factory=list)
    gripper: GripperPose
    held_object: Optional[int] = None
    step_count: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_held(self):
        if self.held_object is not None:
            held = self.object_by_id(self.held_object)
            if held is None:
                raise ValueError(f"held object {self.held_object} is not in the scene")
            if not self.gripper.closed:
                raise ValueError("holding an object requires a closed gripper")
            if (held.x, held.y, held.level) != (self.gripper.x, self.gripper.y, self.gripper.z):
                raise ValueError("held object must be co-located with the gripper")
        return self

    def object_by_id(self, object_id: int) -> Optional[ObjectState]:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None

    def find(self, descriptor: ObjectDescriptor) -> Optional[ObjectState]:
        for obj in self.objects:
            if obj.shape == descriptor.shape and obj.color == descriptor.color:
                return obj
        return None

    def zone(self, color: Color) -> Optional[Zone]:
        for z in self.zones:
            if z.color == color:
                return z
        return None

    def column(self, x: int, y: int) -> List[ObjectState]:
        return sorted((o for o in self.objects if o.x == x and o.y == y), key=lambda o: o.level)
