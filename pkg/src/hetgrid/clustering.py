"""Data-adaptive pixel grouping.

The stages, in pipeline order:

1. ``importance_map``: per-pixel mean L2 feature distance to the in-bounds
   8-neighbours. Flat regions score near zero, feature boundaries score high.
2. ``modulate_importance``: optional task-attention bias (max-normalised
   importance plus ``alpha`` times an attention map in [0, 1]), used to steer
   where cluster centres land. ``attention_object`` and
   ``attention_uncertainty`` build the two standard attention maps from a
   per-pixel class-probability stack.
3. ``sample_centers``: draw distinct seed pixels by one of three strategies
   (uniform, importance-proportional, or top-k-of-random-candidates plus
   uniform fill).
4. ``diff_slic``: iterative soft clustering. Each round assigns every pixel a
   softmax weight over its spatially nearest centres and moves each centre to
   the assignment-weighted mean of its pixels. The result is a sparse
   row-stochastic assignment with exactly ``min(knn, n_grp)`` candidates per
   pixel, plus the logits that produced it (the differentiable handle).

Importance/attention maps are plain 1-D arrays of length ``n_pix`` in
row-major pixel order; the grid shape travels alongside as an argument.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from math import ceil

import numpy as np
import scipy.sparse as sp

from . import linalg
from .grid import NON_SELF_DIRECTIONS, GridShape
from .linalg import ShapeError
from .rng import make_rng

SAMPLERS = ("uniform-random", "importance", "topk-random")

_EMPTY_GROUP_TOL = 1e-12


@dataclass(frozen=True)
class ClusterConfig:
    """Clustering hyper-parameters.

    ``downsample_ratio`` fixes the group budget as a fraction of the pixel
    count. ``knn`` bounds each pixel's candidate set to its spatially nearest
    centres, which is what keeps the assignment sparse. ``oversample`` and
    ``topk_fraction`` only matter for the ``topk-random`` sampler;
    ``focus_alpha`` only for attention modulation.
    """

    downsample_ratio: Fraction = Fraction(1, 64)
    iterations: int = 5
    temperature: float = 0.05
    position_weight: float = 1.0
    knn: int = 9
    sampler: str = "topk-random"
    oversample: int = 3
    topk_fraction: float = 0.75
    focus_alpha: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        ratio = Fraction(self.downsample_ratio)
        object.__setattr__(self, "downsample_ratio", ratio)
        if not 0 < ratio <= 1:
            raise ValueError(f"downsample_ratio must be in (0, 1], got {ratio}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.position_weight < 0:
            raise ValueError("position_weight must be >= 0")
        if self.knn < 1:
            raise ValueError("knn must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")
        if not 0 <= self.topk_fraction <= 1:
            raise ValueError("topk_fraction must be in [0, 1]")
        if self.focus_alpha < 0:
            raise ValueError("focus_alpha must be >= 0")

    def n_groups(self, n_pix: int) -> int:
        return max(1, round(self.downsample_ratio * n_pix))


@dataclass(frozen=True)
class CenterSet:
    """Cluster centres: seed pixel per group, plus centre position/feature.

    Positions are (row, col) scaled by 1/max(height, width). ``features`` is
    None for freshly sampled centres and is filled from the input stack on the
    first clustering pass.
    """

    seeds: np.ndarray
    positions: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        seeds = np.asarray(self.seeds, dtype=np.int64)
        object.__setattr__(self, "seeds", seeds)
        if seeds.ndim != 1 or seeds.size < 1:
            raise ValueError("centre set needs at least one seed")
        if len(np.unique(seeds)) != seeds.size:
            raise ValueError("seed pixel indices must be distinct")
        if np.any(seeds < 0):
            raise ValueError("seed pixel indices must be non-negative")
        pos = np.asarray(self.positions)
        if pos.shape != (seeds.size, 2):
            raise ShapeError(f"positions must be ({seeds.size}, 2), got {pos.shape}")

    @property
    def n_grp(self) -> int:
        return self.seeds.size

    @classmethod
    def from_seeds(cls, seeds, shape: GridShape) -> "CenterSet":
        seeds = np.asarray(seeds, dtype=np.int64)
        if seeds.size and seeds.max() >= shape.n_pix:
            raise ValueError("seed index out of range")
        return cls(seeds=seeds, positions=shape.positions()[seeds])


@dataclass(frozen=True)
class AssignmentMatrix:
    """Sparse soft pixel-to-group assignment.

    Stored as ``min(knn, n_grp)`` candidate slots per pixel: ``groups`` holds
    the candidate group ids (sorted ascending, distinct within a row) and
    ``weights`` the softmax weights, which sum to one per row. ``logits``
    optionally carries the pre-softmax scores the weights came from.
    """

    n_grp: int
    groups: np.ndarray
    weights: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self) -> None:
        groups = np.asarray(self.groups, dtype=np.int64)
        weights = np.asarray(self.weights)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "weights", weights)
        if groups.ndim != 2 or groups.shape != weights.shape:
            raise ShapeError(
                f"groups {groups.shape} and weights {weights.shape} must be equal 2-D shapes"
            )
        if groups.shape[1] < 1 or groups.shape[1] > self.n_grp:
            raise ValueError("candidate count must be in [1, n_grp]")
        if groups.size and (groups.min() < 0 or groups.max() >= self.n_grp):
            raise ValueError("group id out of range")
        if np.any(np.diff(groups, axis=1) <= 0):
            raise ValueError("candidate group ids must be strictly increasing per row")
        if not np.all(np.isfinite(weights)) or (weights.size and weights.min() < 0):
            raise ValueError("weights must be finite and non-negative")
        rowsums = weights.sum(axis=1)
        if weights.size and np.max(np.abs(rowsums - 1.0)) > 1e-4:
            raise ValueError("assignment rows must sum to one")

    @property
    def n_pix(self) -> int:
        return self.groups.shape[0]

    @property
    def k(self) -> int:
        return self.groups.shape[1]

    @property
    def nnz(self) -> int:
        return self.groups.size

    def to_csr(self, dtype=None) -> sp.csr_matrix:
        """CSR view with the fixed k-per-row pattern (explicit zeros kept)."""
        dtype = np.dtype(dtype) if dtype is not None else self.weights.dtype
        n, k = self.groups.shape
        indptr = np.arange(0, n * k + 1, k)
        mat = sp.csr_matrix(
            (self.weights.ravel().astype(dtype, copy=True),
             self.groups.ravel().astype(np.int32, copy=False),
             indptr),
            shape=(n, self.n_grp),
        )
        return mat

    def argmax_groups(self) -> np.ndarray:
        """Hard labels: the highest-weight candidate per pixel (first on ties)."""
        return self.groups[np.arange(self.n_pix), np.argmax(self.weights, axis=1)]

    @classmethod
    def from_labels(cls, labels, n_grp: int) -> "AssignmentMatrix":
        """Hard one-group-per-pixel assignment."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
        return cls(n_grp=n_grp, groups=labels,
                   weights=np.ones_like(labels, dtype=np.float32))

    @classmethod
    def identity(cls, n: int) -> "AssignmentMatrix":
        return cls.from_labels(np.arange(n), n)

    @classmethod
    def from_logits(cls, groups, logits, n_grp: int) -> "AssignmentMatrix":
        """Row-wise softmax of the candidate logits."""
        logits = np.asarray(logits)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        weights = e / e.sum(axis=1, keepdims=True)
        return cls(n_grp=n_grp, groups=groups, weights=weights, logits=logits)


def importance_map(x: np.ndarray, shape: GridShape) -> np.ndarray:
    """Mean L2 feature distance to the in-bounds 8-neighbours of each pixel."""
    if x.ndim != 2 or x.shape[0] != shape.n_pix:
        raise ShapeError(f"feature stack must be ({shape.n_pix}, c), got {x.shape}")
    h, w = shape.height, shape.width
    img = x.reshape(h, w, x.shape[1])
    total = np.zeros((h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    for d in NON_SELF_DIRECTIONS:
        dr, dc = d.drow, d.dcol
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        diff = img[r0:r1, c0:c1] - img[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        total[r0:r1, c0:c1] += np.sqrt((diff.astype(np.float64) ** 2).sum(axis=-1))
        count[r0:r1, c0:c1] += 1
    out = total / np.maximum(count, 1)
    return out.ravel().astype(x.dtype, copy=False)


def modulate_importance(imp: np.ndarray, attn: np.ndarray, alpha: float) -> np.ndarray:
    """Max-normalised importance plus alpha times the attention map.

    When the importance map is identically zero the normalisation is skipped
    and the attention term alone decides.
    """
    imp = np.asarray(imp)
    attn = np.asarray(attn)
    if imp.shape != attn.shape:
        raise ShapeError(f"importance {imp.shape} and attention {attn.shape} differ")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if attn.size and (attn.min() < 0 or attn.max() > 1):
        raise ValueError("attention values must lie in [0, 1]")
    peak = imp.max() if imp.size else 0.0
    base = imp / peak if peak > 0 else imp
    return base + alpha * attn


def _check_probability_rows(p: np.ndarray) -> None:
    if p.ndim != 2:
        raise ShapeError(f"prediction stack must be 2-D, got shape {p.shape}")
    if np.any(p < -1e-6) or np.any(p > 1 + 1e-6):
        raise ValueError("prediction entries must lie in [0, 1]")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-4:
        raise ValueError("prediction rows must sum to one")


def attention_object(p: np.ndarray, k: int) -> np.ndarray:
    """Attention = predicted probability of class ``k`` per pixel."""
    p = np.asarray(p)
    _check_probability_rows(p)
    if not 0 <= k < p.shape[1]:
        raise ValueError(f"class index {k} out of range for {p.shape[1]} classes")
    return np.clip(p[:, k], 0.0, 1.0)


def attention_uncertainty(p: np.ndarray) -> np.ndarray:
    """Attention = normalised prediction entropy per pixel, in [0, 1]."""
    p = np.asarray(p)
    _check_probability_rows(p)
    n_classes = p.shape[1]
    if n_classes < 2:
        raise ValueError("uncertainty attention needs at least 2 classes")
    safe = np.clip(p, 0.0, 1.0)
    logs = np.log(np.where(safe > 0, safe, 1.0))
    ent = (-safe * logs).sum(axis=1) / np.log(n_classes)
    return np.clip(ent, 0.0, 1.0).astype(p.dtype, copy=False)


def sample_centers(
    imp: np.ndarray,
    shape: GridShape,
    n: int,
    cfg: ClusterConfig,
    rng: np.random.Generator | None = None,
) -> CenterSet:
    """Draw ``n`` distinct seed pixels by the configured strategy.

    Deterministic given the configuration seed; an explicit generator can be
    passed for repeated-trial experiments.
    """
    imp = np.asarray(imp, dtype=np.float64).ravel()
    n_pix = shape.n_pix
    if imp.size != n_pix:
        raise ShapeError(f"importance has {imp.size} values for {n_pix} pixels")
    if n < 1:
        raise ValueError("need at least one centre")
    if n > n_pix:
        raise ValueError(f"cannot place {n} centres on {n_pix} pixels")
    if rng is None:
        rng = make_rng(cfg.seed, "centers")

    if cfg.sampler == "uniform-random":
        seeds = rng.choice(n_pix, size=n, replace=False)
    elif cfg.sampler == "importance":
        seeds = _importance_sample(imp, n, rng)
    else:
        seeds = _topk_random_sample(imp, n, cfg, rng)
    return CenterSet.from_seeds(seeds, shape)


def _importance_sample(imp, n, rng):
    total = imp.sum()
    if total <= 0:
        return rng.choice(imp.size, size=n, replace=False)
    positive = np.count_nonzero(imp)
    if positive >= n:
        return rng.choice(imp.size, size=n, replace=False, p=imp / total)
    # Not enough positive-mass pixels to fill the draw: take them all and
    # top up uniformly from the rest.
    chosen = np.nonzero(imp)[0]
    rest = np.nonzero(imp == 0)[0]
    fill = rng.choice(rest, size=n - positive, replace=False)
    return np.concatenate([chosen, fill])


def _topk_random_sample(imp, n, cfg, rng):
    n_pix = imp.size
    n_cand = min(cfg.oversample * n, n_pix)
    candidates = rng.choice(n_pix, size=n_cand, replace=False)
    rng.shuffle(candidates)
    n_top = min(ceil(cfg.topk_fraction * n), n, n_cand)
    # Stable sort so importance ties fall back to the (random) candidate order.
    order = np.argsort(-imp[candidates], kind="stable")
    keep = candidates[order[:n_top]]
    n_fill = n - n_top
    if n_fill == 0:
        return keep
    pool = np.setdiff1d(np.arange(n_pix), keep, assume_unique=False)
    fill = rng.choice(pool, size=n_fill, replace=False)
    return np.concatenate([keep, fill])


def diff_slic(
    x: np.ndarray,
    shape: GridShape,
    centers: CenterSet,
    cfg: ClusterConfig,
) -> tuple[AssignmentMatrix, CenterSet]:
    """Soft local clustering around the given centres.

    Per iteration: (a) each pixel finds its ``knn`` spatially nearest centres,
    (b) gets softmax weights over minus squared distance divided by the
    temperature, where distance concatenates features with
    ``position_weight``-scaled normalised positions, and (c) every centre
    moves to the column-normalised assignment-weighted mean of its pixels.
    Centres of empty groups stay put. Returns the final assignment (with its
    logits) and the updated centres.
    """
    if cfg.temperature <= 0:
        raise ValueError("temperature must be positive")
    if x.ndim != 2 or x.shape[0] != shape.n_pix:
        raise ShapeError(f"feature stack must be ({shape.n_pix}, c), got {x.shape}")
    n_grp = centers.n_grp
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    pos = shape.positions().astype(dtype)
    cpos = np.asarray(centers.positions, dtype=dtype)
    if centers.features is not None:
        cfeat = np.asarray(centers.features, dtype=dtype)
        if cfeat.shape != (n_grp, x.shape[1]):
            raise ShapeError(
                f"centre features must be ({n_grp}, {x.shape[1]}), got {cfeat.shape}")
    else:
        if centers.seeds.max() >= shape.n_pix:
            raise ValueError("seed index out of range for this grid")
        cfeat = x[centers.seeds].astype(dtype, copy=True)

    k = min(cfg.knn, n_grp)
    lam = np.asarray(cfg.position_weight, dtype=dtype)
    tau = np.asarray(cfg.temperature, dtype=dtype)

    assignment = None
    for _ in range(cfg.iterations):
        cand = _nearest_centers(pos, cpos, k)
        logits = _candidate_logits(x, pos, cfeat, cpos, cand, lam, tau)
        assignment = AssignmentMatrix.from_logits(cand, logits, n_grp)
        cfeat, cpos = _update_centers(assignment, x, pos, cfeat, cpos)
    return assignment, CenterSet(seeds=centers.seeds, positions=cpos, features=cfeat)


def _nearest_centers(pos, cpos, k):
    """Indices of the k nearest centres per pixel, sorted by group id."""
    n_grp = cpos.shape[0]
    if k >= n_grp:
        cand = np.broadcast_to(np.arange(n_grp), (pos.shape[0], n_grp)).copy()
    else:
        d2 = ((pos**2).sum(axis=1)[:, None]
              - 2.0 * (pos @ cpos.T)
              + (cpos**2).sum(axis=1)[None, :])
        cand = np.argpartition(d2, k - 1, axis=1)[:, :k]
        cand = np.sort(cand, axis=1)
    return cand.astype(np.int64, copy=False)


def _candidate_logits(x, pos, cfeat, cpos, cand, lam, tau):
    dfeat = ((x[:, None, :] - cfeat[cand]) ** 2).sum(axis=-1)
    dpos = ((pos[:, None, :] - cpos[cand]) ** 2).sum(axis=-1)
    d = dfeat + (lam * lam) * dpos
    return -d / tau


def _update_centers(assignment, x, pos, cfeat, cpos):
    groups = assignment.groups.ravel()
    weights = assignment.weights
    n_grp = assignment.n_grp
    colsum = np.bincount(groups, weights=weights.ravel(), minlength=n_grp)

    def weighted_mean(values):
        acc = np.empty((n_grp, values.shape[1]), dtype=np.float64)
        for c in range(values.shape[1]):
            contrib = (weights * values[:, c][:, None]).ravel()
            acc[:, c] = np.bincount(groups, weights=contrib, minlength=n_grp)
        scale = np.where(colsum > 0, colsum, 1.0)
        return (acc / scale[:, None]).astype(values.dtype, copy=False)

    new_feat = weighted_mean(x)
    new_pos = weighted_mean(pos)
    empty = colsum < _EMPTY_GROUP_TOL
    if np.any(empty):
        new_feat[empty] = cfeat[empty]
        new_pos[empty] = cpos[empty]
    return new_feat, new_pos
