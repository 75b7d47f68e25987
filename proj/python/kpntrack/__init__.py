"""Keypoint-cascade Siamese tracker (Python bindings)."""

from ._core import (
    BoundingBox,
    Model,
    SynthConfig,
    Tracker,
    TrackHyper,
    iou,
    ope_metrics,
    penalty,
    run_cli,
    synth_sequence,
)

__all__ = [
    "BoundingBox",
    "Model",
    "SynthConfig",
    "Tracker",
    "TrackHyper",
    "iou",
    "ope_metrics",
    "penalty",
    "run_cli",
    "synth_sequence",
]
