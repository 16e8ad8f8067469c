"""Feed-forward hash encoder with hand-written backprop.

Hidden layers use tanh, the final hash layer is linear.  Weights are stored
``(fan_out, fan_in)`` so a layer computes ``x @ W.T + b`` on a row batch.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import pack_signs, sign

CKPT_MAGIC = b"IDCP"
CENTERS_MAGIC = b"IDCC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class EncoderParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def code_length(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams([np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.weights + self.biases)


def init_glorot(sizes, rng) -> EncoderParams:
    """Glorot-uniform weights, a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    sizes = list(sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases)


def forward(params: EncoderParams, x: np.ndarray):
    """Return ``(h, cache)`` for a batch ``x`` of shape ``(n, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.sizes[0]:
        raise ValueError(f"input dim {x.shape[1]} != encoder input {params.sizes[0]}")
    acts = [x]
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = z if k == last else np.tanh(z)
        acts.append(a)
    return a, acts


def backward(params: EncoderParams, cache, grad_h: np.ndarray) -> EncoderParams:
    """Gradients of a scalar loss w.r.t. every weight and bias, given dL/dh."""
    acts = cache
    grad = np.asarray(grad_h, dtype=np.float64)
    if grad.shape != acts[-1].shape:
        raise ValueError(f"grad shape {grad.shape} != output shape {acts[-1].shape}")
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k != n_layers - 1:
            grad = grad * (1.0 - acts[k + 1] ** 2)
        gw[k] = grad.T @ acts[k]
        gb[k] = grad.sum(axis=0)
        if k:
            grad = grad @ params.weights[k]
    return EncoderParams(gw, gb)


def encode_binary(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Packed codes ``sign(f(x))`` with sign(0) = +1."""
    h, _ = forward(params, x)
    return pack_signs(sign(h))


def save_checkpoint(path, params: EncoderParams, centers_mu: np.ndarray) -> None:
    """``IDCP`` envelope: version, layer count, layer sizes, then W/b per layer as
    little-endian f64; followed by an ``IDCC`` section holding the class centers."""
    sizes = params.sizes
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(params.weights, params.biases):
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
        c, l = centers_mu.shape
        fh.write(struct.pack("<4sII", CENTERS_MAGIC, c, l))
        fh.write(np.asarray(centers_mu).astype("<f8").tobytes())


def load_checkpoint(path):
    """Return ``(EncoderParams, centers_mu)``."""
    raw = open(path, "rb").read()
    try:
        magic, version, n_sizes = struct.unpack_from("<4sII", raw, 0)
        if magic != CKPT_MAGIC or version != CKPT_VERSION:
            raise CheckpointError(f"{path}: not an encoder checkpoint")
        off = 12
        sizes = struct.unpack_from(f"<{n_sizes}I", raw, off)
        off += 4 * n_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(raw, "<f8", fan_in * fan_out, off).reshape(fan_out, fan_in)
            off += 8 * w.size
            b = np.frombuffer(raw, "<f8", fan_out, off)
            off += 8 * fan_out
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
        magic, c, l = struct.unpack_from("<4sII", raw, off)
        if magic != CENTERS_MAGIC:
            raise CheckpointError(f"{path}: missing centers section")
        off += 12
        mu = np.frombuffer(raw, "<f8", c * l, off).reshape(c, l).astype(np.float64)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    return EncoderParams(weights, biases), mu
