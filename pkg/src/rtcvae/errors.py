"""Exception types raised across the package."""


class InvalidDistributionError(ValueError):
    pass


class SingularCovarianceError(ValueError):
    pass


class InvalidCovarianceError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class ZeroVarianceError(ValueError):
    def __init__(self, dim: int):
        super().__init__(f"zero or negative variance in dimension {dim}")
        self.dim = dim


class InvalidConfigurationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


class DegenerateDumpError(ValueError):
    pass


class InvalidFactorError(ValueError):
    pass


class InfeasibleGridError(ValueError):
    pass
