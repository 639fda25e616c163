"""gripstab: synthetic grip-stability pipeline.

Simulates pull experiments on tactile-sensed grips, trains neural
regressors for the maximum permitted pull force, and evaluates them with
accuracy/precision force metrics.
"""

__version__ = "0.1.0"

from .core import (
    DataPoint,
    ForceTrace,
    GripConfiguration,
    LabelingConfig,
    StepForceProfile,
    TactileImagePair,
    normalized_force,
    validate_datapoint,
)

__all__ = [
    "DataPoint",
    "ForceTrace",
    "GripConfiguration",
    "LabelingConfig",
    "StepForceProfile",
    "TactileImagePair",
    "normalized_force",
    "validate_datapoint",
    "__version__",
]
