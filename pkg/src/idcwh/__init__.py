"""Improved deep class-wise hashing: a from-scratch numpy implementation of the
training objective, center voting, Hamming retrieval and its metrics."""
from .centers import CenterBank, VoteAccumulator, build_similarity, estimate, vote_update
from .core import ConfigError, ThetaMode, TrainConfig, pack_signs, sign, unpack_signs
from .data import Dataset, load_any, make_splits, synth_gaussian, synth_multilabel
from .encoder import EncoderParams, encode_binary, forward, init_glorot, load_checkpoint
from .experiment import evaluate_encoder, run_point
from .losses import LossBreakdown, total_loss_and_grads
from .presets import PRESETS, get_preset
from .retrieval import MetricsReport, RetrievalIndex, evaluate, hamming, mean_average_precision
from .trainer import DivergenceError, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "CenterBank", "ConfigError", "Dataset", "DivergenceError", "EncoderParams",
    "LossBreakdown", "MetricsReport", "PRESETS", "RetrievalIndex", "ThetaMode",
    "TrainConfig", "TrainState", "VoteAccumulator", "build_similarity", "encode_binary",
    "estimate", "evaluate", "evaluate_encoder", "forward", "get_preset", "hamming",
    "init_glorot", "load_any", "load_checkpoint", "make_splits", "mean_average_precision",
    "pack_signs", "run_point", "sign", "synth_gaussian", "synth_multilabel",
    "total_loss_and_grads", "train", "unpack_signs", "vote_update",
]
