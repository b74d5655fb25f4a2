from .restoration import RestorationNet, make_student, make_teacher, param_count, restore
from .autoencoder import TinyAutoencoder
from .prompt import (
    DegradationPromptEncoder,
    MomentumEncoder,
    NegativeQueue,
    contrastive_loss,
)
from .unet import ClassTokenBank, CondUNet, attention, attention_weights
from .classifier import KindClassifier

__all__ = [
    "RestorationNet", "make_student", "make_teacher", "param_count", "restore",
    "TinyAutoencoder",
    "DegradationPromptEncoder", "MomentumEncoder", "NegativeQueue", "contrastive_loss",
    "ClassTokenBank", "CondUNet", "attention", "attention_weights",
    "KindClassifier",
]
