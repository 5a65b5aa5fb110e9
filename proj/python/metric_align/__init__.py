"""Python access to the metric_align C++ core."""

from ._core import (
    Error,
    add,
    adds,
    chamfer,
    estimate_scale,
    evaluate,
    generate_dataset,
    load_mesh,
    normalize_mesh,
    rasterize,
    relative_pose,
)

__all__ = [
    "Error",
    "add",
    "adds",
    "chamfer",
    "estimate_scale",
    "evaluate",
    "generate_dataset",
    "load_mesh",
    "normalize_mesh",
    "rasterize",
    "relative_pose",
]
