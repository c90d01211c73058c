"""Model-based event-camera optical flow with a nonlinear (translation + rotation) motion model."""

from .estimator import (DivergenceError, FlowEstimate, SolverConfig, coarse_grid_search, estimate_flow,
                        linear_baseline_estimate, refine_params)
from .events_io import (Event, EventFormatError, EventVolume, event_count_image, normalize_window,
                        parse_event_file, write_event_file)
from .flowfield import FlowField, read_flow_file, write_flow_file
from .iwe import Iwe, bilinear_weights, exponential_image, splat, timestamp_image
from .loss import LossBreakdown, LossConfig, loss_at, loss_ec, loss_gradient, loss_nlmc
from .synth_eval import EvalReport, GeometryMismatch, SceneSpec, eval_metrics, render_flow, synth_scene
from .tiles import TileGrid
from .warp import MotionParams, WarpedEvents, flow_at, flow_from_params, warp_events

__all__ = [
    "DivergenceError", "FlowEstimate", "SolverConfig", "coarse_grid_search", "estimate_flow",
    "linear_baseline_estimate", "refine_params",
    "Event", "EventFormatError", "EventVolume", "event_count_image", "normalize_window", "parse_event_file",
    "write_event_file",
    "FlowField", "read_flow_file", "write_flow_file",
    "Iwe", "bilinear_weights", "exponential_image", "splat", "timestamp_image",
    "LossBreakdown", "LossConfig", "loss_at", "loss_ec", "loss_gradient", "loss_nlmc",
    "EvalReport", "GeometryMismatch", "SceneSpec", "eval_metrics", "render_flow", "synth_scene",
    "TileGrid",
    "MotionParams", "WarpedEvents", "flow_at", "flow_from_params", "warp_events",
]
