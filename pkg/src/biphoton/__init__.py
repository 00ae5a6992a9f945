"""Transverse two-photon (SPDC) amplitude simulator with near- and far-field apertures."""

__version__ = "0.1.0"

from .apertures import ApertureMask, circular, double_slit, evaluate_mask, identity  # noqa: E402
from .engine import (ExecutionPlan, MaskSet, NearFieldCache, PipelineResult, SliceRequest,  # noqa: E402
                     build_biphoton_amplitude, consistency_scan, estimate_resources, run_pipeline,
                     run_pipeline_spill)
from .errors import (BiphotonError, ConfigurationError, ContractError, FitError, NumericalError,  # noqa: E402
                     ResourceError, ValidationFailure)
from .field import BiphotonField, ReducedMap, fft2_per_photon, reduce, signal_cut, slice_coincidence  # noqa: E402
from .grid import TransverseGrid, make_grid  # noqa: E402
from .phasematch import PhaseMatchModel, make_model  # noqa: E402
from .pump import PumpSpec, pump_profile  # noqa: E402

__all__ = [
    "ApertureMask", "BiphotonError", "BiphotonField", "ConfigurationError", "ContractError",
    "ExecutionPlan", "FitError", "MaskSet", "NearFieldCache", "NumericalError", "PhaseMatchModel",
    "PipelineResult", "PumpSpec", "ReducedMap", "ResourceError", "SliceRequest", "TransverseGrid",
    "ValidationFailure", "build_biphoton_amplitude", "circular", "consistency_scan", "double_slit",
    "estimate_resources", "evaluate_mask", "fft2_per_photon", "identity", "make_grid", "make_model",
    "pump_profile", "reduce", "run_pipeline", "run_pipeline_spill", "signal_cut", "slice_coincidence",
]
