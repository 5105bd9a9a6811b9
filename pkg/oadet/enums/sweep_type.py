from enum import Enum


class SweepType(str, Enum):
    """Which hyperparameter an ablation sweep varies."""

    ADAPTIVE = "adaptive"
    WINDOW_SIZE = "window-size"
    NUM_STATES = "num-states"
