"""Convolution on the clustered grid.

Features are pooled onto the groups through the column-normalised assignment,
convolved with the direction-aware graph convolution over the coarsened
adjacency, and unpooled back through the row-normalised assignment.

Coarsening counts pixel-level links: for each direction the group adjacency is
Sᵀ·A·S with the raw soft assignment. Soft clusters fragment, so the raw
coarsened matrices contain spurious two-way links between groups. Two
refinements clean them up:

* ``noise_cancel`` subtracts the opposite direction's matrix entrywise and
  clamps at zero, so for each ordered group pair only the stronger of the two
  opposing directions survives.
* ``max_direction`` then keeps, per ordered group pair, only the single
  strongest remaining direction (ties broken by the canonical direction
  order).

Both refinements finish with the same sanitation: entries below 1e-7 dropped,
the self-loop matrix reset to the identity, and off-diagonal self-connections
removed from every other direction. Degree vectors are only meaningful after
sanitation, which is why ``group_conv`` insists on a sanitized set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .clustering import AssignmentMatrix
from .grid import DEGREE_EPS, DIRECTIONS, NON_SELF_DIRECTIONS, Direction, degree
from .linalg import ShapeError
from .refconv import KernelSet, directional_graph_conv

# Connection weights below this are treated as numerical noise and dropped.
WEIGHT_FILTER_THRESHOLD = 1e-7

_DIR_ORDER = {d: i for i, d in enumerate(DIRECTIONS)}


@dataclass
class GroupAdjacencySet:
    """Nine per-direction group adjacency matrices plus refinement state.

    Instances are immutable by convention: refinement functions return new
    sets. ``sanitized`` gates degree computation and convolution.
    """

    adj: dict[Direction, sp.csr_matrix]
    n_grp: int
    sanitized: bool = False
    noise_canceled: bool = False
    max_directed: bool = False
    _degree_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if set(self.adj) != set(DIRECTIONS):
            raise ValueError("adjacency set must cover all nine directions")
        for d, a in self.adj.items():
            if a.shape != (self.n_grp, self.n_grp):
                raise ShapeError(
                    f"{d.name} adjacency has shape {a.shape}, expected square {self.n_grp}")

    def degrees(self, eps: float = DEGREE_EPS) -> dict[Direction, np.ndarray]:
        """Clamped degree vectors, cached per eps. Requires a sanitized set."""
        if not self.sanitized:
            raise ValueError("degrees are only defined on a sanitized adjacency set")
        key = float(eps)
        if key not in self._degree_cache:
            self._degree_cache[key] = {d: degree(self.adj[d], eps) for d in DIRECTIONS}
        return self._degree_cache[key]

    def nnz_by_direction(self) -> dict[Direction, int]:
        return {d: int(self.adj[d].nnz) for d in DIRECTIONS}


@dataclass
class BNParams:
    """Per-channel batch-norm parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self) -> None:
        shapes = {np.shape(v) for v in
                  (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise ShapeError("batch-norm parameters must share one 1-D shape")
        if np.any(np.asarray(self.running_var) < 0):
            raise ValueError("running variance must be non-negative")
        if self.eps <= 0:
            raise ValueError("batch-norm eps must be positive")

    @property
    def channels(self) -> int:
        return np.shape(self.gamma)[0]

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BNParams":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


@dataclass
class HGLayerParams:
    kernels: KernelSet
    bn: BNParams | None

    def __post_init__(self) -> None:
        if self.bn is not None and self.bn.channels != self.kernels.cout:
            raise ShapeError(
                f"batch-norm channels {self.bn.channels} != kernel cout {self.kernels.cout}")


@dataclass
class HGConvModule:
    """An L-layer stack of group convolution, batch norm, and ReLU."""

    layers: list[HGLayerParams]

    def __post_init__(self) -> None:
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.kernels.cout != nxt.kernels.cin:
                raise ShapeError("kernel channel chain is inconsistent across layers")

    @property
    def depth(self) -> int:
        return len(self.layers)


def pool(s: AssignmentMatrix, x: np.ndarray) -> np.ndarray:
    """Group features as the assignment-weighted mean of their pixels."""
    if x.ndim != 2 or x.shape[0] != s.n_pix:
        raise ShapeError(f"features must be ({s.n_pix}, c), got {x.shape}")
    mat = s.to_csr(dtype=x.dtype)
    sbar_t = linalg.sp_transpose(linalg.col_normalize(mat))
    return linalg.spmm(sbar_t, x)


def unpool(s: AssignmentMatrix, zhat: np.ndarray) -> np.ndarray:
    """Pixel features as the per-row convex combination of group features."""
    if zhat.ndim != 2 or zhat.shape[0] != s.n_grp:
        raise ShapeError(f"group features must be ({s.n_grp}, c), got {zhat.shape}")
    mat = s.to_csr(dtype=zhat.dtype)
    return linalg.spmm(linalg.row_normalize(mat), zhat)


def coarsen_all(
    s: AssignmentMatrix, pixel_adj: dict[Direction, sp.csr_matrix]
) -> GroupAdjacencySet:
    """Sᵀ·A·S per direction with the raw soft assignment (unrefined)."""
    if set(pixel_adj) != set(DIRECTIONS):
        raise ValueError("pixel adjacency must cover all nine directions")
    mat = s.to_csr()
    adj = {}
    for d in DIRECTIONS:
        a = pixel_adj[d]
        if a.shape != (s.n_pix, s.n_pix):
            raise ShapeError(
                f"{d.name} pixel adjacency is {a.shape}, expected {(s.n_pix, s.n_pix)}")
        adj[d] = linalg.sp_coarsen(mat, a)
    return GroupAdjacencySet(adj=adj, n_grp=s.n_grp)


def _drop_small(a: sp.csr_matrix, threshold: float) -> sp.csr_matrix:
    out = a.copy()
    out.data = np.where(out.data < threshold, 0.0, out.data).astype(a.dtype)
    return linalg.csr(out, dtype=a.dtype)


def _zero_diagonal(a: sp.csr_matrix) -> sp.csr_matrix:
    coo = a.tocoo()
    keep = coo.row != coo.col
    return linalg.csr_from_coo(
        coo.row[keep], coo.col[keep], coo.data[keep], a.shape, dtype=a.dtype)


def _sanitize_matrices(adj: dict[Direction, sp.csr_matrix], n_grp: int, dtype):
    out = {}
    for d in NON_SELF_DIRECTIONS:
        out[d] = _zero_diagonal(_drop_small(adj[d], WEIGHT_FILTER_THRESHOLD))
    out[Direction.SELF] = linalg.identity_csr(n_grp, dtype=dtype)
    return out


def _adjacency_dtype(g: GroupAdjacencySet):
    return g.adj[Direction.SELF].dtype


def sanitize(g: GroupAdjacencySet) -> GroupAdjacencySet:
    """Sanitation only, no cancellation: drop sub-threshold weights, reset the
    self-loop to the identity, and zero off-direction diagonals."""
    adj = _sanitize_matrices(g.adj, g.n_grp, _adjacency_dtype(g))
    return GroupAdjacencySet(
        adj=adj, n_grp=g.n_grp, sanitized=True,
        noise_canceled=g.noise_canceled, max_directed=g.max_directed)


def noise_cancel(g: GroupAdjacencySet) -> GroupAdjacencySet:
    """Subtract each direction's opposite entrywise and clamp at zero.

    All differences are taken against the pre-update matrices, then the
    standard sanitation runs.
    """
    if g.noise_canceled:
        raise ValueError("adjacency set is already noise-canceled")
    dtype = _adjacency_dtype(g)
    canceled = {Direction.SELF: g.adj[Direction.SELF]}
    for d in NON_SELF_DIRECTIONS:
        diff = (g.adj[d] - g.adj[d.opposite]).tocsr()
        diff.data = np.maximum(diff.data, 0.0).astype(dtype)
        canceled[d] = linalg.csr(diff, dtype=dtype)
    adj = _sanitize_matrices(canceled, g.n_grp, dtype)
    return GroupAdjacencySet(
        adj=adj, n_grp=g.n_grp, sanitized=True,
        noise_canceled=True, max_directed=g.max_directed)


def max_direction(g: GroupAdjacencySet) -> GroupAdjacencySet:
    """Keep, per ordered group pair, only the strongest non-self direction.

    Ties go to the direction appearing first in the canonical order. The
    self-loop is untouched. Requires a sanitized set.
    """
    if not g.sanitized:
        raise ValueError("max_direction requires a sanitized adjacency set")
    dtype = _adjacency_dtype(g)
    rows, cols, vals, dirs = [], [], [], []
    for d in NON_SELF_DIRECTIONS:
        coo = g.adj[d].tocoo()
        rows.append(coo.row.astype(np.int64))
        cols.append(coo.col.astype(np.int64))
        vals.append(coo.data.astype(np.float64))
        dirs.append(np.full(coo.nnz, _DIR_ORDER[d], dtype=np.int64))
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    dirs = np.concatenate(dirs) if dirs else np.empty(0, dtype=np.int64)

    adj = {Direction.SELF: g.adj[Direction.SELF]}
    if rows.size == 0:
        for d in NON_SELF_DIRECTIONS:
            adj[d] = g.adj[d]
    else:
        pair = rows * g.n_grp + cols
        order = np.lexsort((dirs, -vals, pair))
        pair_sorted = pair[order]
        winner = np.ones(order.size, dtype=bool)
        winner[1:] = pair_sorted[1:] != pair_sorted[:-1]
        keep = order[winner]
        for d in NON_SELF_DIRECTIONS:
            mask = dirs[keep] == _DIR_ORDER[d]
            adj[d] = linalg.csr_from_coo(
                rows[keep][mask], cols[keep][mask],
                vals[keep][mask].astype(dtype), (g.n_grp, g.n_grp), dtype=dtype)
    return GroupAdjacencySet(
        adj=adj, n_grp=g.n_grp, sanitized=True,
        noise_canceled=g.noise_canceled, max_directed=True)


def refine(g: GroupAdjacencySet, *, cancel: bool = True, keep_max: bool = True) -> GroupAdjacencySet:
    """Standard refinement chain with independently toggleable stages."""
    out = noise_cancel(g) if cancel else sanitize(g)
    if keep_max:
        out = max_direction(out)
    return out


def group_conv(
    g: GroupAdjacencySet,
    zhat: np.ndarray,
    k: KernelSet,
    eps: float = DEGREE_EPS,
) -> np.ndarray:
    """Direction-aware graph convolution over the group adjacency."""
    if not g.sanitized:
        raise ValueError("group_conv requires a sanitized adjacency set")
    if zhat.ndim != 2 or zhat.shape[0] != g.n_grp:
        raise ShapeError(f"group features must be ({g.n_grp}, cin), got {zhat.shape}")
    if zhat.shape[1] != k.cin:
        raise ShapeError(f"feature channels {zhat.shape[1]} != kernel cin {k.cin}")
    return directional_graph_conv(g.adj, g.degrees(eps), zhat, k)


def batch_norm(
    x: np.ndarray,
    bn: BNParams,
    mode: str = "train",
    return_cache: bool = False,
):
    """Per-channel batch normalisation over the leading (node) axis.

    Train mode normalises with the current batch statistics (biased variance)
    and folds them into the running statistics in place; eval mode uses the
    stored running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.shape[1] != bn.channels:
        raise ShapeError(f"input channels {x.shape[1]} != batch-norm channels {bn.channels}")
    if mode == "train":
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        m = bn.momentum
        bn.running_mean = (1.0 - m) * bn.running_mean + m * mu
        bn.running_var = (1.0 - m) * bn.running_var + m * var
    else:
        mu = bn.running_mean
        var = bn.running_var
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = (x - mu) * inv
    y = bn.gamma * xhat + bn.beta
    if return_cache:
        return y, (mode, xhat, inv, np.asarray(bn.gamma))
    return y


def batch_norm_vjp(grad: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dgamma, dbeta) for ``batch_norm``."""
    mode, xhat, inv, gamma = cache
    dgamma = (grad * xhat).sum(axis=0)
    dbeta = grad.sum(axis=0)
    if mode == "train":
        dxhat = grad * gamma
        dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    else:
        dx = grad * gamma * inv
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def hg_layer(
    g: GroupAdjacencySet,
    z: np.ndarray,
    k: KernelSet,
    bn: BNParams | None,
    mode: str = "train",
    eps: float = DEGREE_EPS,
) -> np.ndarray:
    """One group-convolution layer: conv, optional batch norm, ReLU."""
    y = group_conv(g, z, k, eps)
    if bn is not None:
        y = batch_norm(y, bn, mode)
    return relu(y)


def hg_module_forward(
    x: np.ndarray,
    s: AssignmentMatrix,
    g: GroupAdjacencySet,
    module: HGConvModule,
    mode: str = "train",
    eps: float = DEGREE_EPS,
) -> np.ndarray:
    """Pool, run the layer stack on the groups, unpool."""
    if s.n_grp != g.n_grp:
        raise ShapeError(f"assignment has {s.n_grp} groups, adjacency {g.n_grp}")
    z = pool(s, x)
    for layer in module.layers:
        z = hg_layer(g, z, layer.kernels, layer.bn, mode, eps)
    return unpool(s, z)
