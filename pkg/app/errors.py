"""
Exception hierarchy shared by every module of the toolkit.

All errors derive from DemoMpcError so callers (the CLI, the HTTP service)
can catch one type and turn it into a diagnostic.
"""

from typing import Optional, Sequence


class DemoMpcError(Exception):
    """Base class for all toolkit errors"""


class ShapeError(DemoMpcError, ValueError):
    """Dimension mismatch between arrays, networks or environment specs"""

    def __init__(self, what: str, expected: Sequence[int], actual: Sequence[int]):
        self.what = what
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.actual}")


class NonFiniteError(DemoMpcError, FloatingPointError):
    """NaN or infinity where a finite value is required"""

    def __init__(self, message: str, context: Optional[str] = None):
        self.context = context
        if context:
            message = f"{message} ({context})"
        super().__init__(message)


class InsufficientDataError(DemoMpcError):
    """Not enough transitions to train a model"""


class EmptyBufferError(DemoMpcError):
    """Sampling requested from an empty replay buffer"""


class ConfigError(DemoMpcError, ValueError):
    """Invalid configuration value or unknown name"""


class WeightingModeError(DemoMpcError, ValueError):
    """Literal cost weighting cannot be applied to the given elite costs"""


class EpisodeFinishedError(DemoMpcError):
    """Step requested on a state whose episode already ended"""


class PlanningError(DemoMpcError):
    """No usable rollout was produced by the planner"""


class RunAbortedError(DemoMpcError):
    """A training run stopped early; `log` holds the epochs completed so far"""

    def __init__(self, message: str, log=None):
        self.log = log
        super().__init__(message)
