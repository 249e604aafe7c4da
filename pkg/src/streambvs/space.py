"""Bit-mask representation of the enumerated model space.

Model ``gamma`` over ``p`` candidate predictors is stored as an integer whose
bit ``j`` (0-based) is set when predictor ``j + 1`` is included. The intercept
is always present and is never indexed. All per-model sequences in this
package are laid out in ascending bit-mask order, so model ``m`` lives at
position ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelIndicator:
    bits: int
    p: int

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"p must be non-negative, got {self.p}")
        if self.bits < 0 or self.bits >> self.p:
            raise ValueError(f"bits {self.bits:#b} has bits set beyond p={self.p}")

    @classmethod
    def from_gamma(cls, gamma) -> "ModelIndicator":
        gamma = [int(g) for g in gamma]
        if any(g not in (0, 1) for g in gamma):
            raise ValueError("inclusion indicators must be 0 or 1")
        bits = sum(1 << j for j, g in enumerate(gamma) if g)
        return cls(bits, len(gamma))

    @classmethod
    def null(cls, p: int) -> "ModelIndicator":
        return cls(0, p)

    @classmethod
    def full(cls, p: int) -> "ModelIndicator":
        return cls((1 << p) - 1, p)

    @property
    def size(self) -> int:
        return bin(self.bits).count("1")

    @property
    def gamma(self) -> np.ndarray:
        return np.array([(self.bits >> j) & 1 for j in range(self.p)], dtype=np.int8)

    @property
    def predictors(self) -> tuple[int, ...]:
        """1-based indices of the included predictors, ascending."""
        return tuple(j + 1 for j in range(self.p) if (self.bits >> j) & 1)

    @property
    def columns(self) -> np.ndarray:
        """Design-matrix columns of this model: intercept (0) then predictors."""
        return np.array((0,) + self.predictors, dtype=np.intp)

    def __contains__(self, j: int) -> bool:
        return 1 <= j <= self.p and bool((self.bits >> (j - 1)) & 1)

    def is_nested_in(self, other: "ModelIndicator") -> bool:
        """True when ``other`` strictly contains every predictor of ``self``."""
        return self.p == other.p and self.bits != other.bits and (self.bits & ~other.bits) == 0


def n_models(p: int) -> int:
    return 1 << p


def inclusion_matrix(p: int) -> np.ndarray:
    """(2^p, p) 0/1 matrix; row m is the gamma vector of model m."""
    masks = np.arange(1 << p, dtype=np.int64)
    return ((masks[:, None] >> np.arange(p)) & 1).astype(np.int8)


def design_masks(p: int) -> np.ndarray:
    """(2^p, p + 1) boolean column masks including the always-on intercept."""
    inc = inclusion_matrix(p).astype(bool)
    return np.hstack([np.ones((inc.shape[0], 1), dtype=bool), inc])


def model_sizes(p: int) -> np.ndarray:
    return inclusion_matrix(p).sum(axis=1).astype(np.int64)


def supersets(bits: int, p: int):
    """Yield every model strictly nesting ``bits`` (brute force over the complement)."""
    free = ((1 << p) - 1) & ~bits
    sub = free
    while sub:
        yield bits | sub
        sub = (sub - 1) & free
