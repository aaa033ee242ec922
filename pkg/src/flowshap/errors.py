"""Exception taxonomy shared across the pipeline."""


class FlowshapError(Exception):
    """Base class for all package errors."""

    code = "error"


class InputError(FlowshapError):
    """Unreadable or structurally invalid input."""

    code = "input"


class DataFormatError(FlowshapError):
    """Input readable but its content violates the documented format."""

    code = "format"

    def __init__(self, message: str, sample: str | None = None):
        super().__init__(message)
        self.sample = sample


class ConfigError(FlowshapError):
    """Invalid configuration or parameterization."""

    code = "config"

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems or [message]


class CapacityError(FlowshapError):
    """Request exceeds a hard capacity bound (e.g. exact enumeration size)."""

    code = "capacity"


class StateError(FlowshapError):
    """Operation invoked on an object in the wrong state (e.g. untrained model)."""

    code = "state"


class MissingArtifactError(FlowshapError):
    """A pipeline stage output is required but absent."""

    code = "missing-artifact"

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class DegenerateGameError(FlowshapError):
    """Attribution requested for a game with no players."""

    code = "degenerate-game"
