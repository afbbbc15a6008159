"""Exception types shared across the package."""


class NmqsdError(Exception):
    """Base class for all package errors."""


class DimensionError(NmqsdError, ValueError):
    """Invalid Hilbert-space dimension."""


class ShapeError(NmqsdError, ValueError):
    """Operands have incompatible shapes."""


class DivergentOccupationError(NmqsdError, ValueError):
    """Thermal occupation diverges (mode frequency <= 0)."""


class KernelNotAdmissibleError(NmqsdError, ValueError):
    """Noise covariance is not positive semidefinite beyond the jitter threshold."""


class InsufficientSampleError(NmqsdError, ValueError):
    """Too few samples for the requested statistical check."""


class SolverSingularError(NmqsdError, RuntimeError):
    """Collocation system is singular or numerically unusable."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NonlinearBlowupError(NmqsdError, RuntimeError):
    """Forward-in-t nonlinear solver rejected a step (relative change too large)."""


class StagingError(NmqsdError, RuntimeError):
    """Required precomputed kernel slice is missing."""


class PropagationDivergedError(NmqsdError, RuntimeError):
    """NaN/Inf appeared in a propagated state."""


class ModelMismatchError(NmqsdError, ValueError):
    """Operators violate the structural precondition of the chosen model."""


class InvalidRateError(NmqsdError, ValueError):
    """Negative dissipation rate."""


class TruncationError(NmqsdError, ValueError):
    """Thermal-state truncation leakage above threshold."""

    def __init__(self, message, suggested_dim=None):
        super().__init__(message)
        self.suggested_dim = suggested_dim


class ConfigValidationError(NmqsdError, ValueError):
    """Experiment configuration failed validation; carries all messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
