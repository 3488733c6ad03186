"""Quantum filtering for open systems driven by Gaussian boson fields."""

from .errors import DimensionError, IntegrationError, ParseError, QFilterError, ValidationError
from .expr import parse_operator_expr
from .filter import (
    EnsembleResult,
    FilterModel,
    MasterRecord,
    TrajectoryRecord,
    build_filter_model,
    ensemble_average,
    filter_record,
    make_system,
    master_record,
    master_solve,
    master_step,
    simulate_trajectory,
    single_field_reference,
    sme_step,
    zakai_step,
)
from .gaussian_field import factorize, ito_table, lift_coupling, lift_measurement, validate_gaussian, vacuum
from .hilbert import annihilation_op, lindblad_heisenberg, pauli, steady_state
from .measurement import complete_measurement, conditioning_gain, validate_measurement
from .model_io import ModelBundle, dump_model, load_model, parse_model, read_records, write_records

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "EnsembleResult",
    "FilterModel",
    "IntegrationError",
    "MasterRecord",
    "ModelBundle",
    "ParseError",
    "QFilterError",
    "TrajectoryRecord",
    "ValidationError",
    "annihilation_op",
    "build_filter_model",
    "complete_measurement",
    "conditioning_gain",
    "dump_model",
    "ensemble_average",
    "factorize",
    "filter_record",
    "ito_table",
    "lift_coupling",
    "lift_measurement",
    "lindblad_heisenberg",
    "load_model",
    "make_system",
    "master_record",
    "master_solve",
    "master_step",
    "parse_model",
    "parse_operator_expr",
    "pauli",
    "read_records",
    "simulate_trajectory",
    "single_field_reference",
    "sme_step",
    "steady_state",
    "vacuum",
    "validate_gaussian",
    "validate_measurement",
    "write_records",
    "zakai_step",
]
