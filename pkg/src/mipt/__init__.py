"""Measured random circuits: stabilizer and statevector simulation, cluster
correlations, and deterministic postselection by learned imaginary-time steps."""

__version__ = "0.1.0"

from mipt.circuit import CircuitSpec, TrajectoryRecord, replay_reference, simulate  # noqa: E402
from mipt.dense import StateVector  # noqa: E402
from mipt.dqite import QiteConfig, deterministic_postselect, replay_trajectory  # noqa: E402
from mipt.stabilizer import StabilizerTableau  # noqa: E402

__all__ = [
    "CircuitSpec",
    "QiteConfig",
    "StabilizerTableau",
    "StateVector",
    "TrajectoryRecord",
    "deterministic_postselect",
    "replay_reference",
    "replay_trajectory",
    "simulate",
]
