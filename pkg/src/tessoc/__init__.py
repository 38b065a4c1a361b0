"""Temperature and state-of-charge estimation for latent thermal storage.

Finite-volume phase-change model, graph-assembled state-dependent system
matrices, exact frozen-in-time discretization, and a continuous-discrete
SDRE filter, plus a twin-model experiment harness.
"""

from ._version import __version__
from .errors import (
    FilterDivergenceError,
    InvalidConfigError,
    InvalidInputError,
    NumericalError,
    StiffnessError,
    TessocError,
)
from .materials import (
    CellRole,
    FluidParams,
    GridSpec,
    PcmThermalParams,
    SocParams,
    effective_specific_heat,
    melt_fraction,
    specific_enthalpy,
    state_of_charge,
    total_enthalpy,
    validate_state,
)
from .network import (
    DetectabilityReport,
    LpvSystem,
    Sensor,
    ThermalGraph,
    assemble,
    build_graph,
    capacitance_matrix,
    check_detectability,
    edge_resistance,
    input_matrix,
    laplacian,
    sensor_map,
)
from .discretize import DiscreteStep, discretize, matrix_exponential
from .sdre import (
    FilterState,
    FilterTrajectory,
    NoiseModel,
    SampleSchedule,
    kalman_gain,
    predict,
    run_filter,
    update,
)
from .simulate import (
    InputSignals,
    MeasurementSpec,
    OdeConfig,
    integrate,
    project_fine_to_coarse,
    rhs,
    rmse_over_cells,
    rmse_over_time,
    synthesize_measurements,
)
from .timeseries import TimeSeries, load_dataset

__all__ = [
    "__version__",
    "CellRole",
    "DetectabilityReport",
    "DiscreteStep",
    "FilterDivergenceError",
    "FilterState",
    "FilterTrajectory",
    "FluidParams",
    "GridSpec",
    "InputSignals",
    "InvalidConfigError",
    "InvalidInputError",
    "LpvSystem",
    "MeasurementSpec",
    "NoiseModel",
    "NumericalError",
    "OdeConfig",
    "PcmThermalParams",
    "SampleSchedule",
    "Sensor",
    "SocParams",
    "StiffnessError",
    "TessocError",
    "ThermalGraph",
    "TimeSeries",
    "assemble",
    "build_graph",
    "capacitance_matrix",
    "check_detectability",
    "discretize",
    "edge_resistance",
    "effective_specific_heat",
    "input_matrix",
    "integrate",
    "kalman_gain",
    "laplacian",
    "load_dataset",
    "matrix_exponential",
    "melt_fraction",
    "predict",
    "project_fine_to_coarse",
    "rhs",
    "rmse_over_cells",
    "rmse_over_time",
    "run_filter",
    "sensor_map",
    "specific_enthalpy",
    "state_of_charge",
    "synthesize_measurements",
    "total_enthalpy",
    "update",
    "validate_state",
]
