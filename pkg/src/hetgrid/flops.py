"""Analytic floating-point operation accounting.

Counting conventions, fixed here because they cancel in any ratio:
a multiply-accumulate is 2 FLOPs, a sparse-dense product costs 2·nnz per
output channel, and batch norm plus ReLU costs 5 FLOPs per element. The
clustering iterations are priced separately and excluded from the headline
ratio, which compares the grouped module against a same-depth stack of plain
3x3 convolutions; both interpretations of "module cost" stay recoverable
from the report.
"""

from __future__ import annotations

from dataclasses import dataclass

from .clustering import AssignmentMatrix, ClusterConfig
from .grid import DIRECTIONS
from .hgconv import GroupAdjacencySet

BN_RELU_FLOPS_PER_ELEMENT = 5


@dataclass(frozen=True)
class FlopsReport:
    """Exact integer operation counts for one module instance."""

    regular_total: int
    pooling: int
    adjacency: int
    kernels: int
    bn_relu: int
    unpooling: int
    normalization: int
    clustering: int | None = None

    @property
    def hg_total(self) -> int:
        return (self.pooling + self.adjacency + self.kernels
                + self.bn_relu + self.unpooling + self.normalization)

    @property
    def ratio(self) -> float:
        return self.hg_total / self.regular_total

    def as_text(self) -> str:
        lines = [
            f"regular_total: {self.regular_total}",
            f"pooling: {self.pooling}",
            f"adjacency: {self.adjacency}",
            f"kernels: {self.kernels}",
            f"bn_relu: {self.bn_relu}",
            f"unpooling: {self.unpooling}",
            f"normalization: {self.normalization}",
            f"hg_total: {self.hg_total}",
            f"ratio: {self.ratio:.6f}",
        ]
        if self.clustering is not None:
            lines.append(f"clustering: {self.clustering}")
            lines.append("note: clustering is priced separately and excluded from hg_total and ratio")
        return "\n".join(lines)


def flops_conv3x3(h: int, w: int, cin: int, cout: int) -> int:
    """Plain zero-padded stride-1 3x3 convolution cost."""
    for name, v in (("h", h), ("w", w), ("cin", cin), ("cout", cout)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    return 2 * 9 * h * w * cin * cout


def _layer_channels(cin: int, cout: int, layers: int) -> list[tuple[int, int]]:
    if layers == 0:
        return []
    chain = [(cin, cout)]
    chain.extend((cout, cout) for _ in range(layers - 1))
    return chain


def flops_hg_module(
    s: AssignmentMatrix,
    g: GroupAdjacencySet,
    cin: int,
    cout: int,
    layers: int,
    clustering: int | None = None,
) -> FlopsReport:
    """Cost of pool, an L-layer grouped convolution stack, and unpool.

    Sparse terms use the actual stored-entry counts of the assignment and the
    refined adjacency, so the figure is per-instance. The adjacency term is
    priced at each layer's input width, batch norm and ReLU at its output
    width. ``regular_total`` prices the same channel chain as plain 3x3
    convolutions over the pixel grid (one layer when ``layers`` is zero, so
    the ratio stays defined).
    """
    if not g.sanitized:
        raise ValueError("flops_hg_module requires a refined (sanitized) adjacency set")
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if cin < 1 or cout < 1:
        raise ValueError("channel counts must be >= 1")
    n_pix, n_grp = s.n_pix, g.n_grp
    nnz_s = s.nnz
    adj_nnz = sum(g.adj[d].nnz for d in DIRECTIONS)

    pooling = 2 * nnz_s * cin
    unpooling = 2 * nnz_s * cout
    normalization = 2 * nnz_s
    adjacency = 0
    kernels = 0
    bn_relu = 0
    for c_in, c_out in _layer_channels(cin, cout, layers):
        adjacency += 2 * adj_nnz * c_in
        kernels += 2 * n_grp * c_in * c_out * len(DIRECTIONS)
        bn_relu += BN_RELU_FLOPS_PER_ELEMENT * n_grp * c_out
    regular = sum(
        flops_conv3x3(1, n_pix, c_in, c_out)
        for c_in, c_out in _layer_channels(cin, cout, max(layers, 1))
    )
    return FlopsReport(
        regular_total=regular,
        pooling=pooling,
        adjacency=adjacency,
        kernels=kernels,
        bn_relu=bn_relu,
        unpooling=unpooling,
        normalization=normalization,
        clustering=clustering,
    )


def flops_clustering(n_pix: int, n_grp: int, channels: int, cfg: ClusterConfig) -> int:
    """Approximate cost of the clustering iterations, for the side channel.

    Per iteration: candidate search over all centre positions (2-D squared
    distances), candidate feature/position distances and softmax over
    ``min(knn, n_grp)`` slots, and the weighted centre update.
    """
    k = min(cfg.knn, n_grp)
    search = 6 * n_pix * n_grp
    distances = n_pix * k * (3 * (channels + 2) + 5)
    update = 2 * n_pix * k * (channels + 2)
    return cfg.iterations * (search + distances + update)
