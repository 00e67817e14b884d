"""Deep Scheduler: learned and conventional bandwidth schedulers for
latency-constrained downlink traffic over Markovian Rayleigh fading."""

from .env import (ChannelParams, Observation, Scenario, SchedulingEnv, ServiceClass,
                  SlotState)
from .exceptions import (ConfigurationError, InfeasibleAllocationError, TraceFormatError,
                         TrainingDivergedError, UnsupportedModeError)

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "Observation", "Scenario", "SchedulingEnv", "ServiceClass", "SlotState",
    "ConfigurationError", "InfeasibleAllocationError", "TraceFormatError",
    "TrainingDivergedError", "UnsupportedModeError",
]
