"""Learnable class centers and the running per-class sign votes used to
estimate binary centers during an epoch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import pack_signs, sign

CENTER_INIT_SCALE = 0.01


@dataclass
class CenterBank:
    mu: np.ndarray
    velocity: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def code_length(self) -> int:
        return self.mu.shape[1]

    def copy(self) -> "CenterBank":
        return CenterBank(self.mu.copy(), self.velocity.copy())


def init_centers(n_classes: int, code_length: int, rng) -> CenterBank:
    if n_classes < 1 or code_length < 1:
        raise ValueError("n_classes and code_length must be positive")
    mu = CENTER_INIT_SCALE * rng.standard_normal((n_classes, code_length))
    return CenterBank(mu, np.zeros_like(mu))


@dataclass
class VoteAccumulator:
    """Per-class running sums of binarized hash outputs for the current epoch."""

    sums: np.ndarray
    seen: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, n_classes: int, code_length: int) -> "VoteAccumulator":
        return cls(
            np.zeros((n_classes, code_length), np.int64),
            np.zeros(n_classes, bool),
            np.zeros(n_classes, np.int64),
        )

    def copy(self) -> "VoteAccumulator":
        return VoteAccumulator(self.sums.copy(), self.seen.copy(), self.counts.copy())


def reset_epoch(acc: VoteAccumulator) -> None:
    acc.sums[...] = 0
    acc.seen[...] = False
    acc.counts[...] = 0


def vote_update(acc: VoteAccumulator, h: np.ndarray, labels: np.ndarray) -> None:
    """Add ``sign(h_i)`` to the sum of every class sample ``i`` carries."""
    y = np.asarray(labels, dtype=np.int64)
    acc.sums += y.T @ sign(h).astype(np.int64)
    present = y.sum(axis=0)
    acc.counts += present
    acc.seen |= present > 0


@dataclass(frozen=True)
class EstimatedCenters:
    classes: np.ndarray  # ids of the seen classes, ascending
    codes: np.ndarray  # (Z, l) int8 in {-1, +1}

    def packed(self) -> np.ndarray:
        return pack_signs(self.codes)


def estimate(acc: VoteAccumulator) -> EstimatedCenters:
    classes = np.flatnonzero(acc.seen)
    return EstimatedCenters(classes, sign(acc.sums[classes]))


def build_similarity(seen_classes, n_classes: int, class_tags=None) -> np.ndarray:
    """Z x C similarity between estimated centers (rows) and all learnable centers.

    ``class_tags`` optionally gives each class a multi-hot tag vector (C x T);
    two classes are similar when their tags intersect.  Without it every class
    is its own tag and the result is a row selection of the identity.
    """
    seen_classes = np.asarray(seen_classes, dtype=np.int64)
    if seen_classes.size == 0:
        raise ValueError("no seen classes")
    if class_tags is None:
        s = np.zeros((len(seen_classes), n_classes), np.uint8)
        s[np.arange(len(seen_classes)), seen_classes] = 1
        return s
    tags = np.asarray(class_tags, dtype=np.int64)
    return ((tags[seen_classes] @ tags.T) > 0).astype(np.uint8)
