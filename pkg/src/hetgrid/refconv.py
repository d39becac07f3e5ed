"""Zero-padded 3x3 convolution two ways.

``conv3x3_dense`` evaluates the convolution directly on the pixel lattice with
shifted zero-padded slices and serves as the ground-truth oracle.
``conv_as_graph`` evaluates the same operator as a sum of direction-wise graph
convolutions over the per-direction adjacency matrices. The two must agree to
floating-point tolerance; the equivalence is the correctness anchor for the
whole library.

Convolution here means cross-correlation (the deep-learning convention): the
kernel slice for a direction is applied to the neighbour found by following
that direction's offset, with out-of-bounds taps contributing zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .grid import DEGREE_EPS, DIRECTIONS, Direction, GridShape, degree, full_adjacency
from .linalg import ShapeError, spmm

_DIR_INDEX = {d: i for i, d in enumerate(DIRECTIONS)}


@dataclass(frozen=True)
class KernelSet:
    """Nine per-direction weight matrices stacked as (9, cin, cout).

    The leading axis follows the canonical direction order.
    """

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights)
        if w.ndim != 3 or w.shape[0] != len(DIRECTIONS):
            raise ShapeError(f"kernel stack must have shape (9, cin, cout), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def cin(self) -> int:
        return self.weights.shape[1]

    @property
    def cout(self) -> int:
        return self.weights.shape[2]

    def __getitem__(self, direction: Direction) -> np.ndarray:
        return self.weights[_DIR_INDEX[direction]]

    @classmethod
    def zeros(cls, cin: int, cout: int, dtype=np.float32) -> "KernelSet":
        return cls(np.zeros((len(DIRECTIONS), cin, cout), dtype=dtype))

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "KernelSet":
        """Self tap = identity, all other taps zero: the no-op kernel."""
        w = np.zeros((len(DIRECTIONS), channels, channels), dtype=dtype)
        w[_DIR_INDEX[Direction.SELF]] = np.eye(channels, dtype=dtype)
        return cls(w)

    @classmethod
    def random(cls, cin: int, cout: int, rng: np.random.Generator,
               scale: float | None = None, dtype=np.float32) -> "KernelSet":
        if scale is None:
            scale = 1.0 / np.sqrt(len(DIRECTIONS) * cin)
        w = rng.uniform(-scale, scale, size=(len(DIRECTIONS), cin, cout))
        return cls(w.astype(dtype))


def _check_input(x: np.ndarray, shape: GridShape, k: KernelSet) -> None:
    if x.ndim != 2 or x.shape[0] != shape.n_pix:
        raise ShapeError(
            f"feature stack must be ({shape.n_pix}, cin), got {x.shape}"
        )
    if x.shape[1] != k.cin:
        raise ShapeError(f"feature channels {x.shape[1]} != kernel cin {k.cin}")


def conv3x3_dense(x: np.ndarray, shape: GridShape, k: KernelSet) -> np.ndarray:
    """Direct zero-padded 3x3 cross-correlation on the pixel lattice.

    Implemented with shifted array slices only; no adjacency matrices or
    degree normalisation are involved, so this is an independent oracle for
    the graph formulation.
    """
    _check_input(x, shape, k)
    h, w = shape.height, shape.width
    dtype = np.result_type(x, k.weights)
    img = x.reshape(h, w, k.cin)
    out = np.zeros((shape.n_pix, k.cout), dtype=dtype)
    for d in DIRECTIONS:
        dr, dc = d.drow, d.dcol
        shifted = np.zeros((h, w, k.cin), dtype=dtype)
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 < r1 and c0 < c1:
            shifted[r0:r1, c0:c1] = img[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        out += shifted.reshape(shape.n_pix, k.cin) @ k[d]
    return out


def directional_graph_conv(
    adjacency: Mapping[Direction, sp.csr_matrix],
    degrees: Mapping[Direction, np.ndarray],
    x: np.ndarray,
    k: KernelSet,
) -> np.ndarray:
    """Sum over directions of inverse-degree-scaled adjacency products.

    Shared by the pixel-level reference path and the group-level convolution;
    both call it with their own adjacency and clamped degree vectors.
    """
    out = None
    for d in DIRECTIONS:
        m = spmm(adjacency[d], x)
        m = m * (1.0 / degrees[d])[:, None]
        m = m @ k[d]
        out = m if out is None else out + m
    return out


def conv_as_graph(
    x: np.ndarray, shape: GridShape, k: KernelSet, eps: float = DEGREE_EPS
) -> np.ndarray:
    """The same convolution as nine degree-normalised adjacency products.

    Interior rows have degree exactly 1; boundary rows are empty, and the
    eps clamp turns them into zero contributions, reproducing zero padding.
    """
    _check_input(x, shape, k)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    dtype = np.result_type(x, k.weights)
    adjacency = full_adjacency(shape, dtype=dtype)
    degrees = {d: degree(adjacency[d], eps) for d in DIRECTIONS}
    return directional_graph_conv(adjacency, degrees, x, k)
