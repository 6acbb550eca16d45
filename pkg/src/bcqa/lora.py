"""Low-rank adaptation of a single linear map, in plain numpy.

``y = W x + scale * A (B x)`` with ``W`` frozen and only ``A`` (d_out x r)
and ``B`` (r x d_in) trainable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class LoraLinear:
    def __init__(self, W, A, B, scale: float = 1.0):
        W = np.asarray(W, dtype=float)
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if W.ndim != 2 or A.ndim != 2 or B.ndim != 2:
            raise ValueError("W, A and B must be matrices")
        d_out, d_in = W.shape
        r = A.shape[1]
        if A.shape[0] != d_out or B.shape != (r, d_in):
            raise ValueError(f"shape mismatch: W {W.shape}, A {A.shape}, B {B.shape}")
        if not 1 <= r <= min(d_out, d_in):
            raise ValueError(f"rank must be in [1, {min(d_out, d_in)}], got {r}")
        for name, M in (("W", W), ("A", A), ("B", B)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
        self.W = W.copy()
        self.W.flags.writeable = False
        self.A = A.copy()
        self.B = B.copy()
        self.scale = float(scale)

    @classmethod
    def init(cls, W, rank: int, rng: np.random.Generator, a_range: float = 0.01, scale: float = 1.0) -> "LoraLinear":
        """Small uniform A, zero B, so the adapter starts as an exact no-op."""
        W = np.asarray(W, dtype=float)
        d_out, d_in = W.shape
        A = rng.uniform(-a_range, a_range, size=(d_out, rank))
        return cls(W, A, np.zeros((rank, d_in)), scale)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.W.shape[1],):
            raise ValueError(f"input must have shape ({self.W.shape[1]},), got {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check_x(x)
        return self.W @ x + self.scale * (self.A @ (self.B @ x))

    def grad(self, x, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``upstream . forward(x)`` w.r.t. A and B. W gets none."""
        x = self._check_x(x)
        g = np.asarray(upstream, dtype=float)
        if g.shape != (self.W.shape[0],):
            raise ValueError(f"upstream must have shape ({self.W.shape[0]},), got {g.shape}")
        dA = self.scale * np.outer(g, self.B @ x)
        dB = self.scale * np.outer(self.A.T @ g, x)
        return dA, dB

    def step(self, dA, dB, lr: float) -> None:
        """Plain SGD update of the adapter factors."""
        self.A -= lr * dA
        self.B -= lr * dB

    def merge(self) -> np.ndarray:
        return self.W + self.scale * (self.A @ self.B)


def forward(layer: LoraLinear, x) -> np.ndarray:
    return layer.forward(x)


def grad(layer: LoraLinear, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    return layer.grad(x, upstream)


def merge(layer: LoraLinear) -> np.ndarray:
    return layer.merge()


@dataclass(frozen=True)
class ParamCount:
    trainable: int
    formula: str


def param_count(shapes: Sequence[tuple[int, int]], r: int) -> ParamCount:
    """Adapter parameters for a list of (d_out, d_in) matrices: r * sum(d_in + d_out)."""
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    if not shapes:
        raise ValueError("need at least one adapted matrix shape")
    total = sum(d_in + d_out for d_out, d_in in shapes)
    return ParamCount(r * total, f"{r}*{total}")


def trainable_percentage(trainable: float, total: float) -> float:
    if total <= 0:
        raise ValueError("total parameter count must be positive")
    return 100.0 * trainable / total


def decoder_projection_shapes(
    hidden: int, intermediate: int, n_layers: int, kv_dim: int | None = None, q_dim: int | None = None
) -> list[tuple[int, int]]:
    """(d_out, d_in) of the q/k/v/o and gate/up/down projections of every decoder layer."""
    kv_dim = hidden if kv_dim is None else kv_dim
    q_dim = hidden if q_dim is None else q_dim
    per_layer = [
        (q_dim, hidden),  # q_proj
        (kv_dim, hidden),  # k_proj
        (kv_dim, hidden),  # v_proj
        (hidden, q_dim),  # o_proj
        (intermediate, hidden),  # gate_proj
        (intermediate, hidden),  # up_proj
        (hidden, intermediate),  # down_proj
    ]
    return per_layer * n_layers
