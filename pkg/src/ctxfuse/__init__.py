"""Context-aware, energy-aware runtime reconfiguration of a multi-sensor detector, simulated on traces."""
from .energy import EnergyLedger, SensorState, algorithm_step_energy, sensor_step_energy, system_step_energy
from .fusion import FusionParams, LossBreakdown, LossParams, detection_loss, iou, weighted_boxes_fusion
from .gating import GateKind, knowledge_gate, oracle_gate, select_candidates
from .optimizer import JointWeights, ParetoPoint, expected_config_energy, joint_loss, pareto_sweep, select_config
from .profile_io import load_profile
from .runtime import StepRecord, run_trace
from .scenario import DegradationModel, DegradationParams, SimulationTrace, generate_trace, load_trace, save_trace
from .types import (
    BranchSpec,
    ConfigurationError,
    Detection,
    DetectionSet,
    ModelConfiguration,
    SensorSpec,
    SystemProfile,
    canonicalize_configuration,
    enumerate_configurations,
)

__version__ = "0.1.0"
