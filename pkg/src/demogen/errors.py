"""Exception hierarchy shared by every demogen module."""


class DemoGenError(Exception):
    """Base class for all demogen errors."""


class EmptyCloud(DemoGenError, ValueError):
    pass


class MissingDelta(DemoGenError, KeyError):
    pass


class FormatError(DemoGenError):
    """Container on disk is unreadable: bad version, truncated payload, bad json."""


class ValidationError(DemoGenError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid demonstration")


class NoSuchObject(DemoGenError, KeyError):
    pass


class ParseError(DemoGenError, ValueError):
    pass


class NoContactDetected(ParseError):
    pass


class NonSequentialContact(ParseError):
    pass


class PlanningFailed(DemoGenError, RuntimeError):
    pass


class StartOrGoalInCollision(PlanningFailed):
    pass


class UnreachableTarget(DemoGenError, ValueError):
    pass


class DegenerateSplit(DemoGenError, ValueError):
    pass


class EmptyWorkspace(DemoGenError, ValueError):
    pass


class ObstacleBlocksSkill(DemoGenError, ValueError):
    pass


class EmptyDataset(DemoGenError, ValueError):
    pass
