"""Library-level verification entry points.

These are the runnable checks behind the ``conv-check``, ``gradcheck`` and
``flops`` subcommands: the dense-vs-graph convolution equivalence sweep, the
identity-grouping equivalence of the grouped module, finite-difference
gradient verification of three taped pipelines, and a seeded end-to-end
fixture for operation counting.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff import GradcheckReport, Tape, Var, gradcheck
from .clustering import (
    AssignmentMatrix,
    CenterSet,
    ClusterConfig,
    diff_slic,
    importance_map,
    sample_centers,
)
from .flops import FlopsReport, flops_clustering, flops_hg_module
from .grid import DIRECTIONS, GridShape, full_adjacency
from .hgconv import (
    BNParams,
    GroupAdjacencySet,
    HGConvModule,
    HGLayerParams,
    coarsen_all,
    hg_module_forward,
    refine,
)
from .refconv import KernelSet, conv3x3_dense, conv_as_graph
from .rng import make_rng

CONV_TOL = 1e-4
GRADCHECK_TOL = 1e-5


@dataclass(frozen=True)
class CaseResult:
    label: str
    max_deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def default_size_sweep() -> list[tuple[int, int]]:
    return [(h, w) for h in range(1, 9) for w in range(1, 9)]


def conv_equivalence_suite(
    sizes: list[tuple[int, int]] | None = None,
    channels: tuple[int, ...] = (1, 3),
    seeds: int = 50,
    tol: float = CONV_TOL,
    root_seed: int = 90210,
) -> list[CaseResult]:
    """Max |dense - graph| per (size, channels) case over seeded random draws."""
    sizes = sizes if sizes is not None else default_size_sweep()
    results = []
    for h, w in sizes:
        shape = GridShape(h, w)
        for cin in channels:
            worst = 0.0
            for trial in range(seeds):
                rng = make_rng(root_seed, "conv-equivalence", h, w, cin, trial)
                x = rng.normal(size=(shape.n_pix, cin)).astype(np.float32)
                k = KernelSet.random(cin, cin, rng)
                dev = float(np.max(np.abs(
                    conv_as_graph(x, shape, k) - conv3x3_dense(x, shape, k))))
                worst = max(worst, dev)
            results.append(CaseResult(f"conv {h}x{w} c={cin}", worst, tol))
    return results


def identity_grouping_suite(
    sizes: list[tuple[int, int]] | None = None,
    channels: int = 4,
    seeds: int = 3,
    tol: float = CONV_TOL,
    root_seed: int = 90211,
) -> list[CaseResult]:
    """Grouped module with one-pixel groups against the reference convolution.

    Uses a single batch-norm-free layer and non-negative fixtures so the ReLU
    is inactive; cancellation stages are skipped since one-pixel groups have
    no fragment noise to remove.
    """
    sizes = sizes if sizes is not None else default_size_sweep()
    results = []
    for h, w in sizes:
        shape = GridShape(h, w)
        n = shape.n_pix
        s = AssignmentMatrix.identity(n)
        g = refine(coarsen_all(s, full_adjacency(shape)), cancel=False, keep_max=False)
        worst = 0.0
        for trial in range(seeds):
            rng = make_rng(root_seed, "identity-grouping", h, w, trial)
            x = rng.random((n, channels)).astype(np.float32)
            k = KernelSet(rng.random((9, channels, channels)).astype(np.float32))
            module = HGConvModule([HGLayerParams(kernels=k, bn=None)])
            got = hg_module_forward(x, s, g, module, mode="eval")
            want = conv_as_graph(x, shape, k)
            worst = max(worst, float(np.max(np.abs(got - want))))
        results.append(CaseResult(f"identity-grouping {h}x{w} c={channels}", worst, tol))
    return results


# -- gradient-check fixtures ----------------------------------------------------


def _taped_direction_conv(tape: Tape, adj, inv_degrees, z: Var, weights: dict[str, Var]):
    acc = None
    for d in DIRECTIONS:
        m = tape.spmm_const(adj[d], z)
        m = tape.row_scale(m, inv_degrees[d])
        m = tape.matmul(m, weights[d.name.lower()])
        acc = m if acc is None else tape.add(acc, m)
    return acc


def build_hg_gradcheck_fixture():
    """Full grouped pipeline on a 2x3 grid: 2 channels, 2 groups, 1 layer.

    The fixture is built in float64 with features split into two well
    separated value bands so batch statistics are well conditioned, kernels
    and batch-norm shifts keep every ReLU input away from zero, and a mild
    softmax temperature keeps the assignment non-saturated.
    """
    shape = GridShape(2, 3)
    n, c = shape.n_pix, 2
    rng = make_rng(424242, "gradcheck-hg")
    x = np.empty((n, c))
    x[: n // 2] = rng.uniform(0.10, 0.30, size=(n // 2, c))
    x[n // 2 :] = rng.uniform(0.70, 0.90, size=(n - n // 2, c))

    cfg = ClusterConfig(
        downsample_ratio=Fraction(1, 3), iterations=2,
        temperature=0.5, knn=2, position_weight=1.0, seed=7,
    )
    centers = CenterSet.from_seeds([1, 4], shape)
    s, _ = diff_slic(x, shape, centers, cfg)

    template = s.to_csr(np.float64)
    adjacency = full_adjacency(shape, dtype=np.float64)
    g = refine(coarsen_all(s, adjacency))
    degrees = g.degrees()
    inv_degrees = {d: 1.0 / degrees[d] for d in DIRECTIONS}
    labels = rng.integers(0, 2, size=n)
    bn_state = BNParams.identity(c, dtype=np.float64)

    point = {"x": x.copy(), "assign_logits": np.asarray(s.logits, dtype=np.float64)}
    for d in DIRECTIONS:
        point[f"w_{d.name.lower()}"] = rng.uniform(0.2, 0.8, size=(c, c))
    point["bn_gamma"] = rng.uniform(0.4, 0.6, size=c)
    point["bn_beta"] = rng.uniform(1.2, 1.4, size=c)

    def pipeline(tape: Tape, leaves: dict[str, Var]) -> Var:
        soft = tape.softmax(leaves["assign_logits"])
        vals = tape.reshape(soft, (template.nnz,))
        pooled_vals = tape.col_normalize_values(template, vals)
        z = tape.spmm_values_t(template, pooled_vals, leaves["x"])
        weights = {d.name.lower(): leaves[f"w_{d.name.lower()}"] for d in DIRECTIONS}
        z = _taped_direction_conv(tape, g.adj, inv_degrees, z, weights)
        z = tape.batch_norm(z, leaves["bn_gamma"], leaves["bn_beta"], bn_state, "train")
        z = tape.relu(z)
        spread_vals = tape.row_normalize_values(template, vals)
        out = tape.spmm_values(template, spread_vals, z)
        return tape.cross_entropy(out, labels)

    return pipeline, point


def build_conv_gradcheck_fixture():
    """Reference graph convolution on a 3x3 grid with a linear readout."""
    shape = GridShape(3, 3)
    n, c = shape.n_pix, 2
    rng = make_rng(424242, "gradcheck-conv")
    adjacency = full_adjacency(shape, dtype=np.float64)
    from .grid import degree

    inv_degrees = {d: 1.0 / degree(adjacency[d]) for d in DIRECTIONS}
    readout = rng.normal(size=(n, c))

    point = {"x": rng.normal(size=(n, c))}
    for d in DIRECTIONS:
        point[f"w_{d.name.lower()}"] = rng.normal(size=(c, c))

    def pipeline(tape: Tape, leaves: dict[str, Var]) -> Var:
        weights = {d.name.lower(): leaves[f"w_{d.name.lower()}"] for d in DIRECTIONS}
        z = _taped_direction_conv(tape, adjacency, inv_degrees, leaves["x"], weights)
        z = tape.mul(z, tape.constant(readout))
        return tape.sum_all(z)

    return pipeline, point


def build_slic_gradcheck_fixture():
    """Assignment-only pipeline: softmax values, pool, unpool, cross-entropy."""
    shape = GridShape(2, 3)
    n, c = shape.n_pix, 2
    rng = make_rng(424242, "gradcheck-slic")
    x = rng.uniform(0.2, 0.8, size=(n, c))
    cfg = ClusterConfig(
        downsample_ratio=Fraction(1, 3), iterations=2,
        temperature=0.5, knn=2, seed=3,
    )
    centers = CenterSet.from_seeds([0, 5], shape)
    s, _ = diff_slic(x, shape, centers, cfg)
    template = s.to_csr(np.float64)
    labels = rng.integers(0, 2, size=n)

    point = {"x": x.copy(), "assign_logits": np.asarray(s.logits, dtype=np.float64)}

    def pipeline(tape: Tape, leaves: dict[str, Var]) -> Var:
        soft = tape.softmax(leaves["assign_logits"])
        vals = tape.reshape(soft, (template.nnz,))
        pooled_vals = tape.col_normalize_values(template, vals)
        z = tape.spmm_values_t(template, pooled_vals, leaves["x"])
        spread_vals = tape.row_normalize_values(template, vals)
        out = tape.spmm_values(template, spread_vals, z)
        return tape.cross_entropy(out, labels)

    return pipeline, point


GRADCHECK_FIXTURES = {
    "hg": build_hg_gradcheck_fixture,
    "conv": build_conv_gradcheck_fixture,
    "slic": build_slic_gradcheck_fixture,
}


def run_gradcheck(kind: str = "hg", h: float = 1e-5) -> GradcheckReport:
    if kind not in GRADCHECK_FIXTURES:
        raise ValueError(f"unknown pipeline {kind!r}, expected one of {sorted(GRADCHECK_FIXTURES)}")
    pipeline, point = GRADCHECK_FIXTURES[kind]()
    return gradcheck(pipeline, point, h=h)


# -- operation-count fixture ------------------------------------------------------


def flops_fixture(
    height: int = 64,
    width: int = 64,
    channels: int = 64,
    ratio: Fraction = Fraction(1, 64),
    layers: int = 3,
    seed: int = 0,
) -> tuple[AssignmentMatrix, GroupAdjacencySet, FlopsReport]:
    """Cluster a seeded smooth random image and price the resulting module."""
    shape = GridShape(height, width)
    rng = make_rng(seed, "flops-fixture")
    base = rng.random((height, width)).astype(np.float32)
    # box blur so the importance map has structure
    img = (base + np.roll(base, 1, 0) + np.roll(base, 1, 1)) / 3.0
    x = img.reshape(shape.n_pix, 1)
    cfg = ClusterConfig(downsample_ratio=Fraction(ratio), seed=seed)
    imp = importance_map(x, shape)
    centers = sample_centers(imp, shape, cfg.n_groups(shape.n_pix), cfg)
    s, _ = diff_slic(x, shape, centers, cfg)
    g = refine(coarsen_all(s, full_adjacency(shape)))
    cluster_cost = flops_clustering(shape.n_pix, s.n_grp, channels, cfg)
    report = flops_hg_module(s, g, channels, channels, layers, clustering=cluster_cost)
    return s, g, report
