from .autodiff import Tensor, backward, no_grad
from .backend import ToyNetBackend, export_backend
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .loss import depth_loss, gradient_loss, loss_terms
from .model import Architecture, ModelParams, forward, predict
from .optim import AdamWState, TrainConfig, learning_rate, optimizer_step
from .train import TrainResult, run_stage, train_direct, train_stage1, train_stage2

__all__ = [
    "Tensor", "backward", "no_grad", "ToyNetBackend", "export_backend", "CheckpointError",
    "load_checkpoint", "save_checkpoint", "depth_loss", "gradient_loss", "loss_terms",
    "Architecture", "ModelParams", "forward", "predict", "AdamWState", "TrainConfig",
    "learning_rate", "optimizer_step", "TrainResult", "run_stage", "train_direct",
    "train_stage1", "train_stage2",
]
