from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chi2

from hetgrid.clustering import (
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
from hetgrid.grid import GridShape
from hetgrid.linalg import ShapeError
from hetgrid.rng import make_rng


def loop_importance(x, shape):
    """Per-pixel python-loop oracle for the neighbour-distance mean."""
    h, w = shape.height, shape.width
    img = x.reshape(h, w, -1).astype(np.float64)
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            dists = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w:
                        dists.append(np.linalg.norm(img[r, c] - img[rr, cc]))
            out[r, c] = np.mean(dists) if dists else 0.0
    return out.ravel()


def naive_soft_clustering(x, shape, seeds, cfg):
    """Dense soft k-means oracle: full softmax over all centres.

    Matches diff_slic when knn >= n_grp, which the fixtures arrange.
    """
    x = x.astype(np.float64)
    pos = shape.positions()
    cfeat = x[seeds].copy()
    cpos = pos[seeds].copy()
    lam = cfg.position_weight
    n = x.shape[0]
    g = len(seeds)
    weights = None
    for _ in range(cfg.iterations):
        d = np.zeros((n, g))
        for p in range(n):
            for j in range(g):
                d[p, j] = ((x[p] - cfeat[j]) ** 2).sum() + lam * lam * ((pos[p] - cpos[j]) ** 2).sum()
        logits = -d / cfg.temperature
        logits -= logits.max(axis=1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=1, keepdims=True)
        for j in range(g):
            mass = weights[:, j].sum()
            if mass < 1e-12:
                continue
            cfeat[j] = (weights[:, j : j + 1] * x).sum(axis=0) / mass
            cpos[j] = (weights[:, j : j + 1] * pos).sum(axis=0) / mass
    return weights, cfeat, cpos


def test_importance_constant_map_is_zero():
    shape = GridShape(3, 4)
    x = np.full((12, 3), 2.5, dtype=np.float32)
    assert np.all(importance_map(x, shape) == 0)


def test_importance_1x2_hand_case():
    shape = GridShape(1, 2)
    x = np.array([[0.0], [2.0]], dtype=np.float32)
    assert np.allclose(importance_map(x, shape), [2.0, 2.0])


def test_importance_step_edge():
    shape = GridShape(4, 4)
    img = np.zeros((4, 4), dtype=np.float32)
    img[:, 2:] = 1.0
    imp = importance_map(img.reshape(16, 1), shape).reshape(4, 4)
    # the two columns astride the step outrank flat columns
    assert imp[:, 1].min() > imp[:, 0].max()
    assert imp[:, 2].min() > imp[:, 3].max()


def test_importance_matches_loop_oracle():
    rng = np.random.default_rng(8)
    for h, w, c in [(1, 1, 1), (2, 3, 2), (5, 4, 3)]:
        shape = GridShape(h, w)
        x = rng.normal(size=(shape.n_pix, c)).astype(np.float32)
        got = importance_map(x, shape)
        assert np.max(np.abs(got - loop_importance(x, shape))) <= 1e-5


def test_modulate_with_zero_attention():
    imp = np.array([1.0, 2.0, 4.0])
    out = modulate_importance(imp, np.zeros(3), alpha=10.0)
    assert np.allclose(out, [0.25, 0.5, 1.0])


def test_modulate_with_zero_importance():
    attn = np.array([0.1, 0.5, 1.0])
    out = modulate_importance(np.zeros(3), attn, alpha=10.0)
    assert np.allclose(out, 10.0 * attn)


def test_modulate_validation():
    with pytest.raises(ShapeError):
        modulate_importance(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        modulate_importance(np.zeros(3), np.zeros(3), -1.0)
    with pytest.raises(ValueError):
        modulate_importance(np.zeros(3), np.full(3, 1.5), 1.0)


def test_default_focus_alpha_is_ten():
    assert ClusterConfig().focus_alpha == 10.0


def test_attention_object():
    p = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert np.allclose(attention_object(p, 0), [0.9, 0.2])
    one_hot = np.eye(3)[[0, 2, 1, 0]]
    assert np.array_equal(attention_object(one_hot, 2), [0.0, 1.0, 0.0, 0.0])
    uniform = np.full((5, 4), 0.25)
    assert np.allclose(attention_object(uniform, 3), 0.25)
    with pytest.raises(ValueError):
        attention_object(p, 2)
    with pytest.raises(ValueError):
        attention_object(np.array([[0.5, 0.1]]), 0)


def test_attention_uncertainty():
    assert np.allclose(attention_uncertainty(np.full((2, 4), 0.25)), 1.0)
    assert np.allclose(attention_uncertainty(np.eye(3)[[0, 1]]), 0.0)
    assert np.allclose(attention_uncertainty(np.array([[0.5, 0.5]])), 1.0)
    got = attention_uncertainty(np.array([[0.9, 0.1]]))
    assert abs(got[0] - 0.4690) <= 1e-3
    with pytest.raises(ValueError):
        attention_uncertainty(np.ones((2, 1)))


def test_sample_centers_degenerate_mass():
    shape = GridShape(2, 2)
    imp = np.array([0.0, 0.0, 5.0, 0.0])
    cfg = ClusterConfig(sampler="importance", seed=3)
    centers = sample_centers(imp, shape, 1, cfg)
    assert centers.seeds.tolist() == [2]


def test_sample_centers_errors():
    shape = GridShape(2, 2)
    cfg = ClusterConfig()
    with pytest.raises(ValueError):
        sample_centers(np.ones(4), shape, 0, cfg)
    with pytest.raises(ValueError):
        sample_centers(np.ones(4), shape, 5, cfg)


def test_sample_centers_deterministic_and_distinct():
    shape = GridShape(5, 5)
    rng = np.random.default_rng(0)
    imp = rng.random(25)
    for sampler in ("uniform-random", "importance", "topk-random"):
        cfg = ClusterConfig(sampler=sampler, seed=42)
        a = sample_centers(imp, shape, 7, cfg)
        b = sample_centers(imp, shape, 7, cfg)
        assert np.array_equal(a.seeds, b.seeds)
        assert len(set(a.seeds.tolist())) == 7


def test_importance_sampler_partial_mass_fallback():
    shape = GridShape(2, 3)
    imp = np.array([0.0, 3.0, 0.0, 0.0, 1.0, 0.0])
    cfg = ClusterConfig(sampler="importance", seed=1)
    centers = sample_centers(imp, shape, 4, cfg)
    assert {1, 4} <= set(centers.seeds.tolist())
    assert len(set(centers.seeds.tolist())) == 4


def test_topk_random_uniform_importance_is_uniform():
    # With flat importance the sampler must degenerate to uniform sampling.
    shape = GridShape(4, 4)
    imp = np.ones(16)
    cfg = ClusterConfig(sampler="topk-random", seed=9)
    rng = make_rng(9, "chi-square-trials")
    counts = np.zeros(16)
    draws, per_draw = 10_000, 4
    for _ in range(draws):
        centers = sample_centers(imp, shape, per_draw, cfg, rng=rng)
        counts[centers.seeds] += 1
    expected = draws * per_draw / 16
    stat = ((counts - expected) ** 2 / expected).sum()
    p_value = chi2.sf(stat, df=15)
    assert p_value > 0.01, (stat, p_value)


def test_default_ratio_is_one_sixty_fourth():
    cfg = ClusterConfig()
    assert cfg.downsample_ratio == Fraction(1, 64)
    assert cfg.n_groups(64 * 64) == 64


def test_diff_slic_single_group():
    shape = GridShape(2, 3)
    rng = np.random.default_rng(2)
    x = rng.random((6, 2)).astype(np.float32)
    centers = CenterSet.from_seeds([3], shape)
    cfg = ClusterConfig(downsample_ratio=Fraction(1, 6), iterations=3)
    s, final = diff_slic(x, shape, centers, cfg)
    assert s.k == 1
    assert np.allclose(s.weights, 1.0)
    assert np.allclose(final.features[0], x.mean(axis=0), atol=1e-6)
    assert np.allclose(final.positions[0], shape.positions().mean(axis=0), atol=1e-6)


def test_diff_slic_two_blobs_matches_naive_oracle():
    shape = GridShape(4, 4)
    img = np.zeros((4, 4), dtype=np.float64)
    img[:, 2:] = 1.0
    x = img.reshape(16, 1)
    seeds = [shape.index(1, 0), shape.index(2, 3)]
    cfg = ClusterConfig(
        downsample_ratio=Fraction(1, 8), iterations=5,
        temperature=0.05, position_weight=0.0, knn=9,
    )
    centers = CenterSet.from_seeds(seeds, shape)
    s, final = diff_slic(x, shape, centers, cfg)

    labels = s.argmax_groups().reshape(4, 4)
    assert np.all(labels[:, :2] == 0) and np.all(labels[:, 2:] == 1)
    assert s.weights.max(axis=1).min() >= 0.99

    want_w, want_feat, want_pos = naive_soft_clustering(x, shape, np.array(seeds), cfg)
    dense_s = s.to_csr(np.float64).toarray()
    assert np.max(np.abs(dense_s - want_w)) <= 1e-8
    assert np.max(np.abs(final.features - want_feat)) <= 1e-8
    assert np.max(np.abs(final.positions - want_pos)) <= 1e-8


def test_diff_slic_rows_sum_to_one_each_iteration():
    shape = GridShape(5, 5)
    rng = np.random.default_rng(4)
    x = rng.random((25, 3)).astype(np.float32)
    centers = CenterSet.from_seeds([0, 6, 12, 18, 24], shape)
    for t in range(1, 6):
        cfg = ClusterConfig(downsample_ratio=Fraction(1, 5), iterations=t, knn=3)
        s, _ = diff_slic(x, shape, centers, cfg)
        assert s.k == 3
        assert np.max(np.abs(s.weights.sum(axis=1) - 1.0)) <= 1e-5


def test_diff_slic_deterministic():
    shape = GridShape(6, 6)
    rng = np.random.default_rng(5)
    x = rng.random((36, 2)).astype(np.float32)
    cfg = ClusterConfig(downsample_ratio=Fraction(1, 6), seed=11)
    imp = importance_map(x, shape)
    c1 = sample_centers(imp, shape, 6, cfg)
    s1, f1 = diff_slic(x, shape, c1, cfg)
    c2 = sample_centers(imp, shape, 6, cfg)
    s2, f2 = diff_slic(x, shape, c2, cfg)
    assert s1.weights.tobytes() == s2.weights.tobytes()
    assert s1.groups.tobytes() == s2.groups.tobytes()
    assert f1.features.tobytes() == f2.features.tobytes()


def test_diff_slic_permutation_equivariance():
    shape = GridShape(4, 5)
    rng = np.random.default_rng(6)
    x = rng.random((20, 2)).astype(np.float64)
    seeds = np.array([1, 7, 13, 19])
    # jitter the start positions off the lattice so no two centres are ever
    # exactly equidistant from a pixel (ties cannot permute consistently)
    positions = shape.positions()[seeds] + rng.uniform(-0.01, 0.01, size=(4, 2))
    cfg = ClusterConfig(downsample_ratio=Fraction(1, 5), knn=2, iterations=3)
    s_base, _ = diff_slic(x, shape, CenterSet(seeds, positions), cfg)
    perm = np.array([2, 0, 3, 1])
    s_perm, _ = diff_slic(x, shape, CenterSet(seeds[perm], positions[perm]), cfg)
    dense_base = s_base.to_csr().toarray()
    dense_perm = s_perm.to_csr().toarray()
    # column g of the permuted run corresponds to original group perm[g]
    assert np.max(np.abs(dense_perm - dense_base[:, perm])) <= 1e-9


def test_monotone_focus():
    shape = GridShape(10, 10)
    imp = np.ones(100)
    mask = np.zeros(100)
    mask[:10] = 1.0  # attention covers 10% of pixels
    cfg = ClusterConfig(sampler="importance", seed=21)
    fractions = []
    for alpha in (0.0, 1.0, 10.0):
        focus = modulate_importance(imp, mask, alpha)
        rng = make_rng(77, "focus-trials", int(alpha))
        inside = 0
        total = 0
        for _ in range(1000):
            centers = sample_centers(focus, shape, 10, cfg, rng=rng)
            inside += int(mask[centers.seeds].sum())
            total += 10
        fractions.append(inside / total)
    assert fractions[0] < fractions[1] < fractions[2]
    assert fractions[2] >= 2.0 * fractions[0]


def test_assignment_matrix_validation():
    with pytest.raises(ValueError):
        AssignmentMatrix(n_grp=2, groups=np.array([[0, 0]]), weights=np.array([[0.5, 0.5]]))
    with pytest.raises(ValueError):
        AssignmentMatrix(n_grp=2, groups=np.array([[0, 1]]), weights=np.array([[0.9, 0.5]]))
    ident = AssignmentMatrix.identity(3)
    assert ident.to_csr().toarray().tolist() == np.eye(3).tolist()


def test_cluster_config_validation():
    with pytest.raises(ValueError):
        ClusterConfig(downsample_ratio=Fraction(3, 2))
    with pytest.raises(ValueError):
        ClusterConfig(iterations=0)
    with pytest.raises(ValueError):
        ClusterConfig(temperature=0.0)
    with pytest.raises(ValueError):
        ClusterConfig(sampler="nope")
