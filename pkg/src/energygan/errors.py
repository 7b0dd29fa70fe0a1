"""Exception types raised across the package."""


class EnergyGanError(Exception):
    """Base class for all package errors."""


class DimensionError(EnergyGanError, ValueError):
    pass


class ContractError(EnergyGanError, RuntimeError):
    pass


class ConfigError(EnergyGanError, ValueError):
    pass


class DegenerateConfigurationError(EnergyGanError, ValueError):
    """Correspondences do not determine a unique homography."""


class PointAtInfinityError(EnergyGanError, ArithmeticError):
    pass


class MarkerNotFoundError(EnergyGanError):
    def __init__(self, message, best_confidence=0.0):
        super().__init__(f"{message} (best confidence {best_confidence:.3f})")
        self.best_confidence = best_confidence


class EmptyMaskError(EnergyGanError, ValueError):
    pass


class CalibrationError(EnergyGanError, ValueError):
    def __init__(self, message, food_index=None):
        prefix = f"food {food_index}: " if food_index is not None else ""
        super().__init__(prefix + message)
        self.food_index = food_index


class UndefinedMetricError(EnergyGanError, ValueError):
    pass


class EmptySampleError(EnergyGanError, ValueError):
    pass


class FormatError(EnergyGanError, ValueError):
    pass


class CompatibilityError(EnergyGanError):
    pass


class NonFiniteLossError(EnergyGanError, FloatingPointError):
    def __init__(self, epoch, batch, losses):
        vals = ", ".join(f"{k}={v}" for k, v in losses.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {vals}")
        self.epoch = epoch
        self.batch = batch
        self.losses = dict(losses)
