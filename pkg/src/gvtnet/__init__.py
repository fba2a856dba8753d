"""Graph vision transformer for face super-resolution, on a small
numpy autodiff core.

The pieces compose bottom-up: :mod:`tensor`/:mod:`ops` provide the
differentiable kernels, :mod:`adjacency` and :mod:`attention` build the
windowed graph attention, :mod:`model` assembles the network, and
:mod:`training`/:mod:`metrics`/:mod:`cli` wrap it for use.
"""

from .adjacency import AdjacencyConfig, AdjacencySet, update_adjacency
from .checkpoint import (CheckpointError, load_checkpoint, read_checkpoint,
                         save_checkpoint)
from .data import bicubic_downsample, bicubic_resize, fixture_images, make_pairs
from .gradcheck import GradReport, grad_check
from .metrics import (MetricReport, dihedral, dihedral_inverse,
                      evaluate_pairs, psnr, self_ensemble, ssim)
from .model import GVTNet, NetConfig
from .runconfig import ConfigError, RunConfig, load_run_config, serialize_run_config
from .tensor import NumericsError, ShapeError, Tensor, no_grad
from .training import (OverfitReport, TrainConfig, TrainingDivergence,
                       TrainResult, overfit_check, train)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyConfig", "AdjacencySet", "update_adjacency",
    "CheckpointError", "load_checkpoint", "read_checkpoint", "save_checkpoint",
    "bicubic_downsample", "bicubic_resize", "fixture_images", "make_pairs",
    "GradReport", "grad_check",
    "MetricReport", "dihedral", "dihedral_inverse", "evaluate_pairs",
    "psnr", "self_ensemble", "ssim",
    "GVTNet", "NetConfig",
    "ConfigError", "RunConfig", "load_run_config", "serialize_run_config",
    "NumericsError", "ShapeError", "Tensor", "no_grad",
    "OverfitReport", "TrainConfig", "TrainingDivergence", "TrainResult",
    "overfit_check", "train",
    "__version__",
]
