"""Regular-grid geometry: the nine 3x3 message-passing directions, per-direction
pixel adjacency matrices, and clamped degree vectors.

Pixels are indexed row-major. The direction enumeration order below is fixed
for the repository and is used everywhere deterministic iteration or
tie-breaking is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .linalg import DEFAULT_DTYPE, ShapeError, csr_from_coo, empty_csr


class Direction(Enum):
    """One of the nine 3x3 neighbourhood directions, valued by (row, col) offset."""

    SELF = (0, 0)
    LEFT = (0, -1)
    RIGHT = (0, 1)
    UP = (-1, 0)
    DOWN = (1, 0)
    UP_LEFT = (-1, -1)
    UP_RIGHT = (-1, 1)
    DOWN_LEFT = (1, -1)
    DOWN_RIGHT = (1, 1)

    @property
    def drow(self) -> int:
        return self.value[0]

    @property
    def dcol(self) -> int:
        return self.value[1]

    @property
    def opposite(self) -> "Direction":
        return Direction((-self.value[0], -self.value[1]))


# Canonical iteration and tie-break order.
DIRECTIONS: tuple[Direction, ...] = (
    Direction.SELF,
    Direction.LEFT,
    Direction.RIGHT,
    Direction.UP,
    Direction.DOWN,
    Direction.UP_LEFT,
    Direction.UP_RIGHT,
    Direction.DOWN_LEFT,
    Direction.DOWN_RIGHT,
)

NON_SELF_DIRECTIONS: tuple[Direction, ...] = DIRECTIONS[1:]

DEGREE_EPS = 1e-7


@dataclass(frozen=True)
class GridShape:
    """Height x width pixel grid, row-major indexing."""

    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def n_pix(self) -> int:
        return self.height * self.width

    def index(self, row: int, col: int) -> int:
        return row * self.width + col

    def coords(self) -> np.ndarray:
        """(n_pix, 2) array of (row, col) per pixel."""
        rows, cols = np.divmod(np.arange(self.n_pix), self.width)
        return np.stack([rows, cols], axis=1)

    def positions(self) -> np.ndarray:
        """Pixel coordinates scaled by 1/max(height, width), float64."""
        return self.coords().astype(np.float64) / float(max(self.height, self.width))


@lru_cache(maxsize=1024)
def _adjacency(height: int, width: int, direction: Direction, dtype_name: str):
    shape = GridShape(height, width)
    n = shape.n_pix
    dtype = np.dtype(dtype_name)
    if direction is Direction.SELF:
        return sp.identity(n, dtype=dtype, format="csr")
    coords = shape.coords()
    target = coords + np.array([direction.drow, direction.dcol])
    valid = (
        (target[:, 0] >= 0)
        & (target[:, 0] < height)
        & (target[:, 1] >= 0)
        & (target[:, 1] < width)
    )
    rows = np.nonzero(valid)[0]
    if rows.size == 0:
        return empty_csr(n, n, dtype=dtype)
    cols = target[valid, 0] * width + target[valid, 1]
    return csr_from_coo(rows, cols, np.ones(rows.size, dtype=dtype), (n, n), dtype=dtype)


def pixel_adjacency(shape: GridShape, direction: Direction, dtype=DEFAULT_DTYPE) -> sp.csr_matrix:
    """Adjacency with entry (i, j) = 1 iff pixel j sits at position(i) + offset.

    Each row has at most one nonzero; SELF yields the identity. Returned
    matrices are cached and must be treated as immutable.
    """
    return _adjacency(shape.height, shape.width, direction, np.dtype(dtype).name)


def full_adjacency(shape: GridShape, dtype=DEFAULT_DTYPE) -> dict[Direction, sp.csr_matrix]:
    """All nine per-direction adjacency matrices."""
    return {d: pixel_adjacency(shape, d, dtype) for d in DIRECTIONS}


def degree(a: sp.csr_matrix, eps: float = DEGREE_EPS) -> np.ndarray:
    """Row sums clamped below by eps, as a 1-D diagonal vector.

    The clamp keeps the inverse finite on empty rows, which is what turns
    out-of-bounds taps into zero padding downstream.
    """
    if eps <= 0:
        raise ValueError(f"degree clamp must be positive, got {eps}")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"degree: matrix must be square, got {a.shape}")
    if a.nnz and float(a.data.min()) < 0.0:
        raise ValueError("degree: negative adjacency entries")
    sums = np.asarray(a.sum(axis=1)).ravel().astype(a.dtype, copy=False)
    return np.maximum(sums, a.dtype.type(eps))
