"""Exception types shared across the bench."""


class DissectError(Exception):
    """Base class for all bench errors."""


class MeshError(DissectError):
    pass


class DegenerateFaceError(MeshError):
    pass


class BehindCameraError(DissectError):
    pass


class StaleEmbeddingError(DissectError):
    pass


class DegenerateGoalError(DissectError):
    pass


class InsufficientGridError(DissectError):
    pass


class SimulationDivergedError(DissectError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class SolverStalledError(DissectError):
    pass


class SamplingStarvedError(DissectError):
    pass


class PlannerInfeasibleError(DissectError):
    def __init__(self, msg, uncovered=None):
        super().__init__(msg)
        self.uncovered = uncovered or []


class PlanningError(DissectError):
    pass


class MetricUndefinedError(DissectError):
    pass


class ConfigError(DissectError):
    """Carries the full list of validation problems, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
