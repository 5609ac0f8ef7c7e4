"""From-scratch numpy networks: 2D/3D U-Net and a transformer U-Net."""

from .checkpoint import load_checkpoint, save_checkpoint
from .state import NetConfig, NetState, TrainConfig
from .train import (GridResult, TrainingDiverged, build, forward, freeze_prefix, grad_check,
                    grad_check_fn, grid_search, predict, predict_proba, predict_slicewise,
                    predict_volume, soft_dice_loss, train)
from .unet import build_unet2d, build_unet3d, closed_form_parameter_count, toy_config
from .unetr import build_unetr

__all__ = [
    "NetConfig", "NetState", "TrainConfig", "GridResult", "TrainingDiverged",
    "build", "build_unet2d", "build_unet3d", "build_unetr", "closed_form_parameter_count",
    "toy_config", "forward", "freeze_prefix", "grad_check", "grad_check_fn", "grid_search",
    "predict", "predict_proba", "predict_slicewise", "predict_volume", "soft_dice_loss",
    "train", "save_checkpoint", "load_checkpoint",
]
