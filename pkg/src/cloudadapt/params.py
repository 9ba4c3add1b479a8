"""Named parameter collections shared by the encoder, FDA and ADR blocks."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import Tensor


def dense_init(rng: np.random.Generator, out_dim: int, in_dim: int, std: float | None = None) -> np.ndarray:
    scale = (1.0 / in_dim) ** 0.5 if std is None else std
    return rng.normal(0.0, scale, size=(out_dim, in_dim))


class ParamSet:
    """Ordered ``name -> Tensor`` mapping; subclasses read their dims off the shapes."""

    prefix = "params"

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def requires_grad_(self, flag: bool = True) -> "ParamSet":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def copy(self, requires_grad: bool | None = None):
        out = type(self).from_arrays({k: v.copy() for k, v in self.arrays().items()})
        if requires_grad is not None:
            out.requires_grad_(requires_grad)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]):
        return cls({k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in arrays.items()})

    def equals(self, other: "ParamSet") -> bool:
        if list(self.tensors) != list(other.tensors):
            return False
        return all(np.array_equal(self[k].data, other[k].data) for k in self.tensors)
