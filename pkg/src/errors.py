"""
Exception hierarchy for MedOrch.

Validation errors (bad inputs, configs, manifests) subclass ValueError so
callers that only care about "bad value" can keep catching that. Runtime
errors (divergence, sampler state, checkpoints) subclass RuntimeError.
The CLI maps the two families to exit codes 1 and 2.
"""

from typing import Any, Dict, Optional


class MedOrchError(Exception):
    """Base class for all MedOrch errors."""


class ValidationError(MedOrchError, ValueError):
    """Invalid input, configuration or data."""


class InputError(ValidationError):
    """Empty or malformed raw input (zero-sized image, empty token run)."""


class ConfigError(ValidationError):
    """Inconsistent configuration or shape contract."""


class ShapeError(ValidationError):
    """Tensor shape does not match what the component expects."""


class RankMismatchError(ValidationError):
    """A 2D component received 3D data or vice versa."""


class RoutingError(RankMismatchError):
    """A task tag cannot be routed to a vision module for the given input rank."""

    def __init__(self, message: str, tag: Optional[str] = None, input_rank: Optional[str] = None):
        super().__init__(message)
        self.tag = tag
        self.input_rank = input_rank


class UnresolvedIdentifierError(ValidationError):
    """Instruction references an image identifier with no visual block."""


class SequenceLengthError(ValidationError):
    """Sequence exceeds the orchestrator's maximum length."""


class TemplatingError(ValidationError):
    """Instruction template slot left unfilled or filled without a slot."""


class DataError(ValidationError):
    """Training sample inputs violate their task contract."""


class LossCompositionError(ValidationError):
    """Loss components do not match the task kind."""


class ManifestError(ValidationError):
    """Manifest record invalid; names the line and record when known."""

    def __init__(self, message: str, line: Optional[int] = None, record_id: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record_id is not None:
            where.append(f"record '{record_id}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.record_id = record_id


class MedOrchRuntimeError(MedOrchError, RuntimeError):
    """Failure while running a valid pipeline."""


class SamplerStateError(MedOrchRuntimeError):
    """Minibatch sampler asked to draw from no groups."""


class CheckpointError(MedOrchRuntimeError):
    """Checkpoint file missing, unreadable or of an unknown format."""


class DivergenceError(MedOrchRuntimeError):
    """Non-finite loss during training."""

    def __init__(self, step: int, group: str, breakdown: Dict[str, Any]):
        terms = ", ".join(f"{k}={v}" for k, v in breakdown.items())
        super().__init__(f"Non-finite loss at step {step} (group {group}): {terms}")
        self.step = step
        self.group = group
        self.breakdown = breakdown
