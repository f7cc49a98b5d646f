"""Aerial image segmentation with image and elevation inputs."""

from ._segfuse import (
    NUM_CLASSES,
    UNKNOWN,
    NumericalError,
    eikonal_update,
    erode_boundaries,
    f1,
    gradcheck,
    inpaint,
    kappa,
    lr_at,
    overall_accuracy,
    patch_count,
    predict,
    synth_scene,
)

__all__ = [
    "NUM_CLASSES",
    "UNKNOWN",
    "NumericalError",
    "eikonal_update",
    "erode_boundaries",
    "f1",
    "gradcheck",
    "inpaint",
    "kappa",
    "lr_at",
    "overall_accuracy",
    "patch_count",
    "predict",
    "synth_scene",
]
