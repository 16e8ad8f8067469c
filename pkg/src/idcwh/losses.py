"""Classwise loss, centers-similarity loss and quantization penalty, with their
analytic gradients.  All losses are summed over the batch, not averaged."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax

from .centers import CenterBank, VoteAccumulator, build_similarity, estimate
from .core import ThetaMode, TrainConfig, sign


class DegenerateCenterError(ValueError):
    """A center with zero norm makes the cosine similarity undefined."""


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    l2: float
    quant: float
    total: float


def _sq_dists(h, mu):
    diff = h[:, None, :] - mu[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def classwise_loss(h, labels, mu, sigma_sq):
    """Cross-entropy of softmax(-||h_i - mu_j||^2 / (2 sigma^2)) against the
    (multi-hot) labels.  Returns ``(loss, probs)``."""
    h = np.atleast_2d(h)
    y = np.asarray(labels, dtype=np.float64)
    logp = log_softmax(-_sq_dists(h, mu) / (2.0 * sigma_sq), axis=1)
    return float(-(y * logp).sum()), np.exp(logp)


def classwise_grads(probs, h, labels, mu, sigma_sq):
    """Gradients of the classwise loss w.r.t. ``h`` (n, l) and ``mu`` (C, l)."""
    y = np.asarray(labels, dtype=np.float64)
    # residual dL/dz_ij where z_ij is the scaled negative squared distance
    g = probs * y.sum(axis=1, keepdims=True) - y
    grad_h = (g @ mu - g.sum(axis=1, keepdims=True) * h) / sigma_sq
    grad_mu = (g.T @ h - g.sum(axis=0)[:, None] * mu) / sigma_sq
    return grad_h, grad_mu


def _mu_norms(mu):
    norms = np.linalg.norm(mu, axis=1)
    if np.any(norms == 0):
        raise DegenerateCenterError(f"zero-norm center(s): {np.flatnonzero(norms == 0).tolist()}")
    return norms


def theta(u, mu, mode=ThetaMode.COSINE):
    """theta for every (u_i, mu_j) pair; scalars in, scalar out.

    COSINE: 0.5 * l * cos(u, mu).  INNER: 0.5 * u . mu.
    """
    u2, mu2 = np.atleast_2d(u).astype(np.float64), np.atleast_2d(mu).astype(np.float64)
    inner = u2 @ mu2.T
    if ThetaMode(mode) is ThetaMode.INNER:
        out = 0.5 * inner
    else:
        length = u2.shape[1]
        out = 0.5 * length * inner / (np.linalg.norm(u2, axis=1)[:, None] * _mu_norms(mu2)[None, :])
    if np.ndim(u) == 1 and np.ndim(mu) == 1:
        return float(out[0, 0])
    return out


def _similarity_nll(th, s):
    # softplus(theta) - s*theta, stable for large |theta|
    return float((np.logaddexp(0.0, th) - s * th).sum())


def centers_similarity_loss(u, mu, s, mode=ThetaMode.COSINE):
    """Negative log-likelihood of the similarity matrix ``s`` (Z x C) given the
    estimated binary centers ``u`` (Z x l) and learnable centers ``mu``."""
    return _similarity_nll(theta(np.atleast_2d(u), mu, mode), np.asarray(s, dtype=np.float64))


def centers_similarity_grad_mu(u, mu, s, mode=ThetaMode.COSINE):
    u = np.atleast_2d(u).astype(np.float64)
    s = np.asarray(s, dtype=np.float64)
    resid = expit(theta(u, mu, mode)) - s  # r_ij - s_ij
    if ThetaMode(mode) is ThetaMode.INNER:
        return 0.5 * resid.T @ u
    length = u.shape[1]
    mu_n = _mu_norms(mu)
    u_n = np.linalg.norm(u, axis=1)
    cos = (u @ mu.T) / (u_n[:, None] * mu_n[None, :])
    # d cos(u_i, mu_j) / d mu_j = u_i / (|u_i||mu_j|) - cos_ij * mu_j / |mu_j|^2
    scaled = resid / u_n[:, None]
    grad = (scaled.T @ u) / mu_n[:, None] - (resid * cos).sum(axis=0)[:, None] * mu / (mu_n**2)[:, None]
    return 0.5 * length * grad


def quantization_loss(h):
    """``sum ||sign(h) - h||^2`` and its gradient, sign(h) held constant."""
    h = np.asarray(h, dtype=np.float64)
    diff = sign(h) - h
    return float((diff**2).sum()), -2.0 * diff


def total_loss_and_grads(h, labels, centers: CenterBank, acc: VoteAccumulator,
                         cfg: TrainConfig, class_tags=None):
    """Full objective ``L1 + gamma*L2 + beta*quant``; returns
    ``(LossBreakdown, grad_h, grad_mu)``.  With gamma == 0 the accumulator is not read."""
    mu = centers.mu
    l1, probs = classwise_loss(h, labels, mu, cfg.sigma_sq)
    grad_h, grad_mu = classwise_grads(probs, h, labels, mu, cfg.sigma_sq)
    q, grad_q = quantization_loss(h)
    grad_h = grad_h + cfg.beta * grad_q
    l2 = 0.0
    if cfg.gamma != 0:
        est = estimate(acc)
        s = build_similarity(est.classes, centers.n_classes, class_tags)
        l2 = centers_similarity_loss(est.codes, mu, s, cfg.theta_mode)
        grad_mu = grad_mu + cfg.gamma * centers_similarity_grad_mu(est.codes, mu, s, cfg.theta_mode)
    total = l1 + cfg.gamma * l2 + cfg.beta * q
    return LossBreakdown(l1, l2, q, total), grad_h, grad_mu
