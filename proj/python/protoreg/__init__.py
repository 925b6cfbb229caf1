"""3D prototypical few-shot segmentation with support registration."""

from ._core import (
    ProtoregError,
    dice_score,
    evaluate,
    hausdorff95,
    load_case,
    report,
    standardize,
    synth_generate,
    train,
    windows,
)

__all__ = [
    "ProtoregError",
    "dice_score",
    "evaluate",
    "hausdorff95",
    "load_case",
    "report",
    "standardize",
    "synth_generate",
    "train",
    "windows",
]
