"""Error-driven click generation: largest error component, EDT maximum,
signed click."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .kernels import connected_components_26, edt_squared, error_mask
from .prompts import Click, ClickSet


@dataclass(frozen=True)
class ClickProposal:
    click: Click
    component_label: int
    component_size: int
    edt_sq: int  # squared distance at the chosen center


def generate_click(
    pred: np.ndarray,
    gt: np.ndarray,
    rng: np.random.Generator | None = None,
    sample_ties: bool = False,
) -> ClickProposal | None:
    """Propose the next corrective click for a (prediction, ground truth) pair.

    Returns None when prediction and ground truth agree everywhere after
    thresholding. Otherwise picks the largest 26-connected error component
    (ties: earliest in scan order), computes the EDT of that component
    alone (all other voxels count as background) and clicks its interior
    maximum. Ties at the maximum go to the lexicographically smallest
    (z, y, x), or to a seeded uniform choice when sample_ties is set.
    Polarity follows the ground truth value at the chosen center.
    """
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    err = error_mask(pred, gt)
    if not err.any():
        return None
    labels, stats = connected_components_26(err)
    best = max(stats, key=lambda s: s.voxel_count)  # first max == smallest label
    comp = (labels == best.label).astype(np.uint8)
    d = edt_squared(comp)
    if sample_ties and rng is not None:
        flat = d.ravel()
        cand = np.flatnonzero(flat == flat.max())
        center = np.unravel_index(int(rng.choice(cand)), d.shape)
    else:
        center = np.unravel_index(int(np.argmax(d)), d.shape)
    center = tuple(int(c) for c in center)
    polarity = "positive" if gt[center] > 0.5 else "negative"
    return ClickProposal(
        click=Click(center, polarity),
        component_label=best.label,
        component_size=best.voxel_count,
        edt_sq=int(d[center]),
    )


def apply_click(clicks: ClickSet, proposal: ClickProposal) -> ClickSet:
    """Return a new click set with the proposal appended; input untouched."""
    return list(clicks) + [proposal.click]
