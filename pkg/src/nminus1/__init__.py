"""N-1 robustness harness for power-flow surrogates."""

from .case_io import ScenarioRecord, load_case, parse_matpower_case, read_dataset, write_dataset
from .grid import (
    AdmittanceMatrix,
    Branch,
    Bus,
    BusKind,
    GridCase,
    Topology,
    apply_line_cut,
    build_ybus,
    is_slack_connected,
    node_degrees,
)
from .scenarios import SamplingConfig, generate_dataset
from .solver import PFSolution, PFState, SolverOptions, newton_raphson_solve
from .surrogate import ModelParams, TrainConfig, predict, train


__version__ = "0.1.0"
