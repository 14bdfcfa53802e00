"""Quadrotor model predictive control closed over a delayed network link."""
from .channel import DelayChannel, DelayLedger, DelayModel, ledger_record, sample_delay
from .dynamics import (
    ControlInput, StateDerivative, VehicleParams, VehicleState, derivative, euler_step,
    thrust_acceleration,
)
from .harness import RunConfig, RunReport, delay_stats, euclidean_error, export_report, run_closed_loop
from .mpc import (
    MpcConfig, MpcController, MpcReference, MpcSolution, MpcWeights, SolverDiverged, cost,
    cost_gradient, project_inputs, rollout, warm_shift,
)
from .trajectories import ReferencePoint, TrajectorySpec, sample, sample_horizon

__version__ = "0.1.0"
