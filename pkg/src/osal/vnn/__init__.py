"""Variational encoder-classifier network with manual float64 backprop."""

from .model import (
    LatentPosterior,
    VnnModel,
    build_model,
    classify,
    decode,
    encode,
    load_model,
    predict_proba,
    save_model,
)
from .losses import LossConfig, kl_term, m1_loss, m2_loss, reparameterize
from .train import TrainConfig, evaluate, train_stage

__all__ = [
    "LatentPosterior",
    "VnnModel",
    "LossConfig",
    "TrainConfig",
    "build_model",
    "classify",
    "decode",
    "encode",
    "evaluate",
    "kl_term",
    "load_model",
    "m1_loss",
    "m2_loss",
    "predict_proba",
    "reparameterize",
    "save_model",
    "train_stage",
]
