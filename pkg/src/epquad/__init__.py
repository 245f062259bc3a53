"""Energy-preserving quadratic operators and Operator Inference."""

__version__ = "0.1.0"

from .errors import (BlowUpError, DimensionError, EpquadError, InferenceError,
                     InternalConsistencyError, NotEnergyPreservingError,
                     UnstableModelError)
from .quadop import (EnergyReport, QuadOp, apply_quad, energy_report,
                     energy_residual, is_energy_preserving, operators_equivalent)
from .skewrep import (FreeEntrySpec, free_entry_count, random_energy_preserving,
                      random_skew_block, to_row_skew, to_skew_block)
from .constraints import build_system, count_independent_constraints, solve_equivalent
from .opinf import (InferenceConfig, ReducedModel, TrainingData,
                    infer_energy_preserving, infer_standard)
from .burgers2d import BurgersConfig, mean_maxnorm_error, simulate
from .rom import energy_trace, integrate_rom, pod_reduce

__all__ = [
    "__version__",
    "BlowUpError", "DimensionError", "EpquadError", "InferenceError",
    "InternalConsistencyError", "NotEnergyPreservingError", "UnstableModelError",
    "EnergyReport", "QuadOp", "apply_quad", "energy_report", "energy_residual",
    "is_energy_preserving", "operators_equivalent",
    "FreeEntrySpec", "free_entry_count", "random_energy_preserving",
    "random_skew_block", "to_row_skew", "to_skew_block",
    "build_system", "count_independent_constraints", "solve_equivalent",
    "InferenceConfig", "ReducedModel", "TrainingData",
    "infer_energy_preserving", "infer_standard",
    "BurgersConfig", "mean_maxnorm_error", "simulate",
    "energy_trace", "integrate_rom", "pod_reduce",
]
