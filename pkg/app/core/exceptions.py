"""
Error hierarchy
File: app/core/exceptions.py

Every failure raised by the services carries a human-readable ``detail`` and
the process exit code the CLI should return.
"""

from typing import Any, Optional


EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class FSAILError(Exception):
    """Base class for all domain errors"""

    exit_code: int = EXIT_RUNTIME

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


# ==================== AUTODIFF ====================

class DimensionError(FSAILError):
    """Shape mismatch between operands"""


class NumericError(FSAILError):
    """Non-finite values where finite ones are required"""


class ContractError(FSAILError):
    """Caller broke a precondition (e.g. backward on a non-scalar)"""


class IndexRangeError(FSAILError):
    """Class index outside [0, K)"""


# ==================== ENVIRONMENT ====================

class GenerationError(FSAILError):
    """Scene sampling could not satisfy the task parameters"""


class ExpertError(FSAILError):
    """Scripted expert cannot solve the given state"""


# ==================== POLICY / GRAPH ====================

class EncodingError(FSAILError):
    """Token or observation cannot be encoded"""


class FusionError(FSAILError):
    """Head vectors of different lengths were fused"""


class GraphError(FSAILError):
    """Task relation graph misuse (duplicate ids, bad indices)"""


class DegeneracyError(FSAILError):
    """Zero-norm prompt vector in a relation coefficient"""


# ==================== HARNESS / CLI ====================

class TrainingDivergenceError(FSAILError):
    """Loss became non-finite during training"""

    def __init__(self, stage: str, step: int, config: dict[str, Any]):
        detail = f"Training diverged in {stage} at step {step} (config: {config})"
        super().__init__(detail)
        self.stage = stage
        self.step = step
        self.config = config


class MissingArtifactError(FSAILError):
    """A required stage output is missing"""

    def __init__(self, stage: str, path: str):
        super().__init__(f"Missing artifact for stage '{stage}': {path}. Run that stage first.")
        self.stage = stage
        self.path = path


class ComparisonError(FSAILError):
    """Runs with incompatible schedules were compared"""


class ConfigError(FSAILError):
    """Invalid experiment configuration"""

    exit_code = EXIT_USAGE


class RefusalError(FSAILError):
    """Refused to overwrite existing output"""
