"""Multimodal trajectory prediction for vehicles on open-pit mine roads."""

from .estimator import MultimodalPredictor, ekf_predictions
from .evaluation import Prediction, compare, feasibility_filter, min_ade, min_fde, miss_rate
from .physics import EKFForecaster
from .raster import InstanceRasterizer, RasterConfig, render, render_instance
from .scene import AgentState, Footprint, Instance, SceneMap, Trajectory, make_instances, split_dataset

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "EKFForecaster",
    "Footprint",
    "Instance",
    "InstanceRasterizer",
    "MultimodalPredictor",
    "Prediction",
    "RasterConfig",
    "SceneMap",
    "Trajectory",
    "compare",
    "ekf_predictions",
    "feasibility_filter",
    "make_instances",
    "min_ade",
    "min_fde",
    "miss_rate",
    "render",
    "render_instance",
    "split_dataset",
]
