"""Audio-visual event localization with multi-window temporal fusion.

Configs are plain dicts (or JSON strings); keys left out fall back to the
"desk" preset. Arrays cross the boundary as float64 numpy copies.
"""

from ._aveloc import (
    ConfigError,
    DimensionError,
    FormatError,
    LayoutError,
    Model,
    NumericError,
    PreconditionError,
    Sequence,
    TrainingError,
    infonce,
    locality_filter,
    majority_filter,
    nearest_signature_accuracy,
    preset_config,
    read_dataset,
    read_features,
    synth_dataset,
    train,
    write_dataset,
    write_features,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "LayoutError",
    "Model",
    "NumericError",
    "PreconditionError",
    "Sequence",
    "TrainingError",
    "infonce",
    "locality_filter",
    "majority_filter",
    "nearest_signature_accuracy",
    "preset_config",
    "read_dataset",
    "read_features",
    "synth_dataset",
    "train",
    "write_dataset",
    "write_features",
]
