"""Mini-batch training loop: SGD with momentum for the encoder and the class
centers, with epoch-wise reset of the center votes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .centers import CenterBank, VoteAccumulator, init_centers, reset_epoch, vote_update
from .core import TrainConfig, seeded_rng, validate_config
from .data import Dataset
from .encoder import EncoderParams, backward, forward, init_glorot
from .losses import LossBreakdown, total_loss_and_grads

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, iteration: int, total: float):
        super().__init__(f"training diverged at epoch {epoch}, iteration {iteration} (loss={total})")
        self.epoch = epoch
        self.iteration = iteration


@dataclass
class TrainState:
    encoder: EncoderParams
    encoder_velocity: EncoderParams
    centers: CenterBank
    accumulator: VoteAccumulator
    epoch: int = 0
    history: list[LossBreakdown] = field(default_factory=list)


def sgd_momentum_step(param, grad, velocity, lr, momentum, weight_decay=0.0):
    """In place: v <- momentum*v + grad + weight_decay*param; param <- param - lr*v."""
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    param -= lr * velocity


def lr_at(epoch: int, cfg: TrainConfig) -> tuple[float, float]:
    factor = cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
    return cfg.lr_encoder * factor, cfg.lr_centers * factor


def init_state(dim: int, n_classes: int, cfg: TrainConfig, rng) -> TrainState:
    sizes = [dim, *cfg.hidden_sizes, cfg.code_length]
    enc = init_glorot(sizes, rng)
    centers = init_centers(n_classes, cfg.code_length, rng)
    return TrainState(enc, enc.zeros_like(), centers,
                      VoteAccumulator.empty(n_classes, cfg.code_length))


def train(ds: Dataset, cfg: TrainConfig, *, class_tags=None, on_epoch=None) -> TrainState:
    """Train on the samples tagged ``train``.

    ``on_epoch(epoch, breakdown, lrs)`` is called after each epoch with the mean
    per-iteration loss breakdown.  Leftover samples that do not fill a batch are
    dropped for that epoch.
    """
    validate_config(cfg)
    idx = ds.indices("train")
    if len(idx) == 0:
        raise ValueError("dataset has no training samples")
    x, y = ds.features[idx], ds.labels[idx]
    rng = seeded_rng(cfg.seed)
    state = init_state(ds.dim, ds.n_classes, cfg, rng)
    bs = min(cfg.batch_size, len(idx))
    n_iter = len(idx) // bs

    for epoch in range(cfg.epochs):
        lr_enc, lr_mu = lr_at(epoch, cfg)
        reset_epoch(state.accumulator)
        order = rng.permutation(len(idx))
        sums = np.zeros(4)
        for it in range(n_iter):
            batch = order[it * bs:(it + 1) * bs]
            xb, yb = x[batch], y[batch]
            h, cache = forward(state.encoder, xb)
            vote_update(state.accumulator, h, yb)
            parts, grad_h, grad_mu = total_loss_and_grads(
                h, yb, state.centers, state.accumulator, cfg, class_tags)
            if not np.isfinite(parts.total) or abs(parts.total) > DIVERGENCE_LIMIT:
                raise DivergenceError(epoch, it, parts.total)
            grads = backward(state.encoder, cache, grad_h)
            enc, vel = state.encoder, state.encoder_velocity
            for k in range(len(enc.weights)):
                sgd_momentum_step(enc.weights[k], grads.weights[k], vel.weights[k],
                                  lr_enc, cfg.momentum, cfg.weight_decay)
                sgd_momentum_step(enc.biases[k], grads.biases[k], vel.biases[k],
                                  lr_enc, cfg.momentum)
            sgd_momentum_step(state.centers.mu, grad_mu, state.centers.velocity,
                              lr_mu, cfg.momentum)
            sums += (parts.l1, parts.l2, parts.quant, parts.total)
        if not (state.encoder.all_finite() and np.isfinite(state.centers.mu).all()):
            raise DivergenceError(epoch, n_iter - 1, float("nan"))
        mean = sums / n_iter
        state.history.append(LossBreakdown(*map(float, mean)))
        state.epoch = epoch + 1
        log.debug("epoch %d total %.6g", epoch, mean[3])
        if on_epoch is not None:
            on_epoch(epoch, state.history[-1], (lr_enc, lr_mu))
    return state
