from .graph import (ARCH, MODALITIES, BranchSpec, Dims, FusionGraph, MissingModalityError,
                    StageSpec, WiringError, build, build_elementary, build_fusion, load_graph,
                    load_wirings, predict, save_graph, wiring_names)
from .training import TrainConfig, TrainResult, fit, staged_train

__all__ = [
    "ARCH", "MODALITIES", "BranchSpec", "StageSpec", "Dims", "FusionGraph", "WiringError",
    "MissingModalityError", "build", "build_elementary", "build_fusion", "load_wirings",
    "wiring_names", "predict", "save_graph", "load_graph", "TrainConfig", "TrainResult", "fit",
    "staged_train",
]
