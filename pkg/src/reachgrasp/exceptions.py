"""Exception hierarchy shared by all reachgrasp modules."""


class ReachGraspError(Exception):
    """Base class for every error raised by this package."""


class ParseError(ReachGraspError, ValueError):
    """A trial document is not valid JSON or does not follow the schema."""


class ValidationError(ReachGraspError, ValueError):
    """A value violates a data-model invariant.

    ``frame`` and ``field`` name the offending location when known.
    """

    def __init__(self, message, frame=None, field=None):
        loc = []
        if frame is not None:
            loc.append(f"frame {frame}")
        if field is not None:
            loc.append(f"field {field!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.frame = frame
        self.field = field


class ConfigError(ReachGraspError, ValueError):
    pass


class EmptyDataset(ReachGraspError, ValueError):
    pass


class TooFewFrames(ReachGraspError, ValueError):
    pass


class BadSpec(ReachGraspError, ValueError):
    pass


class NotMoving(ReachGraspError):
    """No sustained speed above the onset threshold."""


class DegenerateDirection(ReachGraspError, ValueError):
    pass


class TooFewPoints(ReachGraspError, ValueError):
    pass


class NoFeasibleFit(ReachGraspError):
    pass


class ShapeMismatch(ReachGraspError, ValueError):
    pass


class NonFiniteGradient(ReachGraspError, FloatingPointError):
    pass


class TrialTooShort(ReachGraspError, ValueError):
    pass


class SingularDesign(ReachGraspError, UserWarning):
    """Raised as a warning when least squares falls back to ridge."""


class DegenerateLabels(ReachGraspError, UserWarning):
    """Raised as a warning when a classifier sees a single class."""


class EmptyWindow(ReachGraspError, ValueError):
    pass


class TooFewUsers(ReachGraspError, ValueError):
    pass


class NoRecords(ReachGraspError, ValueError):
    pass


class MissingArtifact(ReachGraspError, FileNotFoundError):
    pass
