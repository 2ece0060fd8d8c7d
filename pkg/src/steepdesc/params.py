"""Block-structured parameter container.

A parameter vector is an ordered list of dense float64 blocks (matrices or
vectors). Trainability is tracked per block: frozen blocks ride along in
the container but are excluded from the optimization variables, so norm
and inner-product measurements of the parameters go through
``trainable_view()``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeMismatchError


@dataclass(frozen=True)
class ParamVector:
    """Ordered blocks of float64 arrays with per-block trainability flags."""

    blocks: tuple[np.ndarray, ...]
    trainable: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        blocks = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not self.trainable:
            object.__setattr__(self, "trainable", (True,) * len(blocks))
        if len(self.trainable) != len(blocks):
            raise ShapeMismatchError(
                f"trainable flags ({len(self.trainable)}) do not match "
                f"block count ({len(blocks)})"
            )

    @classmethod
    def of(cls, *arrays, trainable: Sequence[bool] | None = None) -> "ParamVector":
        return cls(tuple(np.asarray(a) for a in arrays),
                   tuple(trainable) if trainable is not None else ())

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(b.shape for b in self.blocks)

    def check_same_structure(self, other: "ParamVector", what: str = "operand") -> None:
        if self.shapes() != other.shapes():
            for i, (a, b) in enumerate(zip(self.blocks, other.blocks)):
                if a.shape != b.shape:
                    raise ShapeMismatchError(
                        f"{what}: block {i} has shape {b.shape}, expected {a.shape}"
                    )
            raise ShapeMismatchError(
                f"{what}: block count {other.n_blocks}, expected {self.n_blocks}"
            )

    def flat(self) -> np.ndarray:
        """All coordinates concatenated in block order (C order per block)."""
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.ravel() for b in self.blocks])

    def trainable_view(self) -> "ParamVector":
        """The optimization variables: trainable blocks only."""
        kept = tuple(b for b, t in zip(self.blocks, self.trainable) if t)
        return ParamVector(kept)

    def embed_trainable(self, update: "ParamVector") -> "ParamVector":
        """Scatter trainable-structured blocks back into the full layout.

        Frozen positions are filled with zeros: the result is a full-shape
        displacement that never moves a frozen block.
        """
        it = iter(update.blocks)
        out = []
        for b, t in zip(self.blocks, self.trainable):
            if t:
                nb = next(it)
                if nb.shape != b.shape:
                    raise ShapeMismatchError(
                        f"embed_trainable: got shape {nb.shape}, expected {b.shape}"
                    )
                out.append(nb)
            else:
                out.append(np.zeros_like(b))
        return ParamVector(tuple(out), self.trainable)

    def copy(self) -> "ParamVector":
        return ParamVector(tuple(b.copy() for b in self.blocks), self.trainable)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(tuple(np.zeros_like(b) for b in self.blocks), self.trainable)

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_same_structure(other)
        return ParamVector(tuple(a + b for a, b in zip(self.blocks, other.blocks)),
                           self.trainable)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_same_structure(other)
        return ParamVector(tuple(a - b for a, b in zip(self.blocks, other.blocks)),
                           self.trainable)

    def scaled(self, c: float) -> "ParamVector":
        """Every block multiplied by ``c`` (plain vector scaling)."""
        return ParamVector(tuple(c * b for b in self.blocks), self.trainable)

    def scaled_trainable(self, c: float) -> "ParamVector":
        """Trainable blocks multiplied by ``c``; frozen blocks untouched.

        This is the scaling under which the homogeneity identity
        f(x; c*theta) = c^L f(x; theta) is stated.
        """
        out = tuple(c * b if t else b.copy()
                    for b, t in zip(self.blocks, self.trainable))
        return ParamVector(out, self.trainable)

    def dot(self, other: "ParamVector") -> float:
        self.check_same_structure(other)
        return float(sum(np.dot(a.ravel(), b.ravel())
                         for a, b in zip(self.blocks, other.blocks)))

    def allfinite(self) -> bool:
        return all(np.isfinite(b).all() for b in self.blocks)

    def allclose(self, other: "ParamVector", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        return self.shapes() == other.shapes() and all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.blocks, other.blocks)
        )


def from_flat(flat: np.ndarray, shapes: Iterable[tuple[int, ...]],
              trainable: Sequence[bool] | None = None) -> ParamVector:
    """Rebuild a ParamVector from flat coordinates and block shapes."""
    flat = np.asarray(flat, dtype=np.float64)
    blocks = []
    offset = 0
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        blocks.append(flat[offset:offset + n].reshape(shape))
        offset += n
    if offset != flat.size:
        raise ShapeMismatchError(
            f"flat vector has {flat.size} coordinates, shapes need {offset}"
        )
    return ParamVector(tuple(blocks), tuple(trainable) if trainable else ())
