"""destimate: partial-state estimator design for LTI plants over sensor networks.

Decides (joint) partial detectability, synthesizes centralized and
network-coupled partial-state estimators, and simulates the coupled error
dynamics to demonstrate that every node's functional estimate converges.
"""

__version__ = "0.1.0"

from .errors import (
    DestimateError,
    DetectabilityError,
    DimensionError,
    InternalInconsistencyError,
    NumericFailure,
    PreconditionError,
    ScenarioError,
    SynthesisFailure,
    TopologyError,
)
from .sysmodel import (
    CommGraph,
    PlantModel,
    Scenario,
    Sensor,
    SignalSpec,
    SignalTerm,
    SimulationConfig,
    analyze_topology,
    laplacian,
    load_scenario,
    parse_scenario,
    stacked_output,
)
from .structan import (
    Decomposition,
    DetectabilityVerdict,
    d_lambda,
    decompose,
    is_jointly_partially_detectable,
    is_partially_detectable_rank,
    is_partially_detectable_structural,
)
from .synth import (
    CentralizedEstimator,
    DistributedEstimator,
    NodeEstimator,
    SynthesisReport,
    as_single_node,
    coupled_error_abscissa,
    load_estimator,
    save_estimator,
    synth_centralized,
    synth_distributed,
    verify_estimator,
)
from .netsim import SimulationTrace, convergence_metrics, simulate, trace_to_csv

__all__ = [name for name in dir() if not name.startswith("_")]
