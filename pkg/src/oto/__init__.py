"""One-Two-One networks for compression artifact reduction, with a numpy autodiff core."""

from oto.net import FusionKind, OtoConfig, OtoModel, UnitKind, build_model
from oto.train import TrainConfig, train

__all__ = ["FusionKind", "OtoConfig", "OtoModel", "TrainConfig", "UnitKind", "build_model", "train"]
__version__ = "0.1.0"
