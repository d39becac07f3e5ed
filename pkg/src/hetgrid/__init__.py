"""Heterogeneous grid convolution.

A 3x3 convolution is the sum of nine direction-wise graph convolutions. This
library exploits that identity to convolve on a data-adaptive clustering of
the pixel grid instead of the grid itself: features are pooled onto soft
pixel groups, convolved direction-aware on the coarsened (and noise-canceled)
group adjacency, and unpooled back, at a fraction of the dense operation
count. Reverse-mode differentiation, exact FLOPs accounting, deterministic
seeded sampling, image/tensor I/O, and a verification CLI are included.
"""

from .autodiff import (
    GradcheckReport,
    GradientSet,
    Tape,
    Var,
    backward,
    forward_with_tape,
    gradcheck,
)
from .clustering import (
    AssignmentMatrix,
    CenterSet,
    ClusterConfig,
    attention_object,
    attention_uncertainty,
    diff_slic,
    importance_map,
    modulate_importance,
    sample_centers,
)
from .config import ModuleSettings, RunConfig, parse_config, serialize_config
from .flops import FlopsReport, flops_clustering, flops_conv3x3, flops_hg_module
from .grid import (
    DIRECTIONS,
    Direction,
    GridShape,
    degree,
    full_adjacency,
    pixel_adjacency,
)
from .hgconv import (
    BNParams,
    GroupAdjacencySet,
    HGConvModule,
    HGLayerParams,
    coarsen_all,
    group_conv,
    hg_layer,
    hg_module_forward,
    max_direction,
    noise_cancel,
    pool,
    refine,
    sanitize,
    unpool,
)
from .linalg import ShapeError
from .pnm import read_pnm, write_pnm
from .refconv import KernelSet, conv3x3_dense, conv_as_graph
from .rng import make_rng
from .tensorfile import decode_tensor, encode_tensor
from .viz import cluster_visualize

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix",
    "BNParams",
    "CenterSet",
    "ClusterConfig",
    "DIRECTIONS",
    "Direction",
    "FlopsReport",
    "GradcheckReport",
    "GradientSet",
    "GridShape",
    "GroupAdjacencySet",
    "HGConvModule",
    "HGLayerParams",
    "KernelSet",
    "ModuleSettings",
    "RunConfig",
    "ShapeError",
    "Tape",
    "Var",
    "attention_object",
    "attention_uncertainty",
    "backward",
    "cluster_visualize",
    "coarsen_all",
    "conv3x3_dense",
    "conv_as_graph",
    "decode_tensor",
    "degree",
    "diff_slic",
    "encode_tensor",
    "flops_clustering",
    "flops_conv3x3",
    "flops_hg_module",
    "forward_with_tape",
    "full_adjacency",
    "gradcheck",
    "group_conv",
    "hg_layer",
    "hg_module_forward",
    "importance_map",
    "make_rng",
    "max_direction",
    "modulate_importance",
    "noise_cancel",
    "parse_config",
    "pixel_adjacency",
    "pool",
    "read_pnm",
    "refine",
    "sample_centers",
    "sanitize",
    "serialize_config",
    "unpool",
    "write_pnm",
]
