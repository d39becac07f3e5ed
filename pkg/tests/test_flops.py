from fractions import Fraction

import numpy as np
import pytest

from hetgrid.clustering import AssignmentMatrix
from hetgrid.flops import flops_conv3x3, flops_hg_module
from hetgrid.grid import GridShape, full_adjacency
from hetgrid.hgconv import coarsen_all, refine
from hetgrid.verify import flops_fixture


def test_conv3x3_hand_values():
    assert flops_conv3x3(64, 64, 64, 64) == 301_989_888
    assert flops_conv3x3(1, 1, 1, 1) == 18


def test_conv3x3_rejects_zero_dimension():
    with pytest.raises(ValueError):
        flops_conv3x3(1, 1, 1, 0)
    with pytest.raises(ValueError):
        flops_conv3x3(0, 4, 2, 2)


def small_fixture(cin=2, cout=2, layers=1):
    shape = GridShape(4, 4)
    s = AssignmentMatrix.from_labels(np.repeat(np.arange(4), 4), 4)
    g = refine(coarsen_all(s, full_adjacency(shape)))
    return s, g, flops_hg_module(s, g, cin, cout, layers)


def test_totals_are_exact_sums():
    _, _, report = small_fixture()
    assert report.hg_total == (report.pooling + report.adjacency + report.kernels
                               + report.bn_relu + report.unpooling + report.normalization)
    assert isinstance(report.hg_total, int)
    assert report.ratio > 0


def test_doubling_cin_doubles_pooling():
    s, g, _ = small_fixture()
    a = flops_hg_module(s, g, 2, 2, 1)
    b = flops_hg_module(s, g, 4, 2, 1)
    assert b.pooling == 2 * a.pooling


def test_identity_grouping_self_loop_case():
    # One group per pixel with a self-loop-only adjacency: no savings claimed,
    # just a coherent report whose total dominates a 1x1-conv-equivalent cost.
    shape = GridShape(3, 3)
    s = AssignmentMatrix.identity(9)
    g = refine(coarsen_all(s, full_adjacency(shape)))
    report = flops_hg_module(s, g, 2, 2, 1)
    assert report.hg_total >= 2 * 9 * 2 * 2
    assert 0 < report.ratio


def test_requires_refined_adjacency():
    shape = GridShape(2, 2)
    s = AssignmentMatrix.identity(4)
    g = coarsen_all(s, full_adjacency(shape))
    with pytest.raises(ValueError):
        flops_hg_module(s, g, 1, 1, 1)


def test_report_text_contains_ratio():
    _, _, report = small_fixture()
    text = report.as_text()
    assert "ratio:" in text and "hg_total:" in text


def test_fixture_ratio_monotone_under_downsampling():
    ratios = [Fraction(1, 4), Fraction(1, 16), Fraction(1, 64)]
    values = []
    for r in ratios:
        _, _, report = flops_fixture(height=16, width=16, channels=8,
                                     ratio=r, layers=2, seed=5)
        values.append(report.ratio)
    assert values[0] >= values[1] >= values[2]


def test_fixture_reports_clustering_side_channel():
    _, _, report = flops_fixture(height=8, width=8, channels=4,
                                 ratio=Fraction(1, 8), layers=1, seed=3)
    assert report.clustering is not None and report.clustering > 0
    assert "clustering" in report.as_text()
    # side channel never leaks into the headline total
    assert report.hg_total == (report.pooling + report.adjacency + report.kernels
                               + report.bn_relu + report.unpooling + report.normalization)
