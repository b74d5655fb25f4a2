from .common import TrainLogger, deciles_decreasing, halved_lr, read_log
from .autoencoder import train_autoencoder
from .diffusion import train_diffusion
from .teacher import pretrain_teacher
from .classifier import train_kind_classifier
from .distill import (
    VARIANTS,
    DistillTrainer,
    DistillVariant,
    distill_on_dataset,
    gamma_for_epoch,
    joint_loss,
    kd_loss,
    run_ablation,
    train_d4ir,
)

__all__ = [
    "TrainLogger", "deciles_decreasing", "halved_lr", "read_log",
    "train_autoencoder", "train_diffusion", "pretrain_teacher", "train_kind_classifier",
    "VARIANTS", "DistillTrainer", "DistillVariant", "distill_on_dataset",
    "gamma_for_epoch", "joint_loss", "kd_loss", "run_ablation", "train_d4ir",
]
