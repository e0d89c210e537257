"""Observation scheduling and in-orbit edge processing for LEO Earth-observation constellations."""

import logging

from .acquisition import AgilitySpec, FrameSpec, ObservationWindow, build_observation_windows, transition_time
from .atmosphere import TurbulenceModel
from .compute import PLATFORMS, GammaExecTimeModel, PlatformSpec, WorkloadSpec, max_fps, optimal_frequency
from .geometry import (
    ConstellationSpec,
    GroundStation,
    GroundStationSet,
    Target,
    compute_visibility_windows,
    load_ground_stations,
    propagate,
)
from .network import LinkSpec, downlink_rate, shortest_route
from .obs_scheduler import (
    ObservationSchedule,
    ObservationScheduler,
    SchedulingInstance,
    check_feasibility,
    solve as solve_observations,
)
from .pipeline import Capture, PipelineConfig, run as run_pipeline
from .proc_scheduler import ProcessingAllocator, ProcessingInstance, solve as solve_allocation
from .scenario import Scenario, ScenarioError, load_bundled, load_scenario

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"

__all__ = [
    "AgilitySpec", "FrameSpec", "ObservationWindow", "build_observation_windows", "transition_time",
    "TurbulenceModel",
    "PLATFORMS", "GammaExecTimeModel", "PlatformSpec", "WorkloadSpec", "max_fps", "optimal_frequency",
    "ConstellationSpec", "GroundStation", "GroundStationSet", "Target", "compute_visibility_windows",
    "load_ground_stations", "propagate",
    "LinkSpec", "downlink_rate", "shortest_route",
    "ObservationSchedule", "ObservationScheduler", "SchedulingInstance", "check_feasibility", "solve_observations",
    "Capture", "PipelineConfig", "run_pipeline",
    "ProcessingAllocator", "ProcessingInstance", "solve_allocation",
    "Scenario", "ScenarioError", "load_bundled", "load_scenario",
]
