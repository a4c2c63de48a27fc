"""Dense float64 tensor with an attached-gradient contract.

``Tensor`` is the leaf node of the network: every learnable array is a
Tensor whose ``grad`` accumulates during the hand-written backward
passes. All math runs on plain numpy arrays (see ``evact.ops``); this
wrapper only pairs a value with its gradient buffer.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A C-contiguous float64 array plus an optional same-shape gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accum_grad(self, g: np.ndarray) -> None:
        """Accumulate ``g`` into the gradient buffer, allocating it lazily."""
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match data shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy())
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"
