"""Exception types shared across the package."""


class EpquadError(Exception):
    """Base class for all package errors."""


class DimensionError(EpquadError, ValueError):
    """Operand shapes are inconsistent."""


class NotEnergyPreservingError(EpquadError, ValueError):
    """An operator that must be energy-preserving is not.

    Attributes
    ----------
    triple : tuple of int
        Worst-violating index triple, 1-based.
    residual : float
        Six-term sum at that triple.
    """

    def __init__(self, triple, residual, tol):
        self.triple = tuple(triple)
        self.residual = float(residual)
        self.tol = float(tol)
        super().__init__(
            f"operator is not energy-preserving: worst triple {self.triple} "
            f"has six-term sum {self.residual:.3e} (tolerance {self.tol:.1e})"
        )


class InternalConsistencyError(EpquadError, RuntimeError):
    """A numerical identity that must hold by construction failed."""


class InferenceError(EpquadError, RuntimeError):
    """Least-squares inference produced no usable solution."""


class BlowUpError(EpquadError, RuntimeError):
    """Time integration produced a non-finite or diverging state."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"state diverged at t = {self.time:.4g}")


class UnstableModelError(BlowUpError):
    """A reduced model diverged during integration."""
