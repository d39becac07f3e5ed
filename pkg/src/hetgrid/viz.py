"""Cluster visualisation: one colour per argmax group, seed pixels overdrawn
with a fixed white marker. Palette colours are seeded, pairwise distinct, and
capped below the marker colour so markers always stand out."""

from __future__ import annotations

import numpy as np

from .clustering import AssignmentMatrix, CenterSet
from .grid import GridShape
from .rng import make_rng

MARKER_COLOR = np.array([255, 255, 255], dtype=np.uint8)
_PALETTE_CAP = 230


def group_palette(n_grp: int, seed: int) -> np.ndarray:
    """(n_grp, 3) uint8 palette, deterministic and duplicate-free."""
    rng = make_rng(seed, "palette")
    colors = rng.integers(0, _PALETTE_CAP + 1, size=(n_grp, 3))
    seen = {tuple(c) for c in colors.tolist()}
    while len(seen) < n_grp:
        colors = rng.integers(0, _PALETTE_CAP + 1, size=(n_grp, 3))
        seen = {tuple(c) for c in colors.tolist()}
    return colors.astype(np.uint8)


def cluster_visualize(
    s: AssignmentMatrix,
    shape: GridShape,
    centers: CenterSet,
    seed: int,
) -> np.ndarray:
    """(h, w, 3) uint8 image of the hard grouping with centre markers."""
    if s.n_pix != shape.n_pix:
        raise ValueError(f"assignment covers {s.n_pix} pixels, grid has {shape.n_pix}")
    labels = s.argmax_groups()
    palette = group_palette(s.n_grp, seed)
    img = palette[labels].reshape(shape.height, shape.width, 3).copy()
    flat = img.reshape(shape.n_pix, 3)
    flat[centers.seeds] = MARKER_COLOR
    return img
