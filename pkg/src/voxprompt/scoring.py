"""Segmentation metrics (DSC, NSD, AUC) and the training losses with
analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, WrongLength
from .kernels import boundary_mask, sq_distance_to_set

DEFAULT_NSD_TAU = 2.0
_CLAMP = 1e-7


@dataclass(frozen=True)
class IterationScore:
    dsc: float
    nsd: float
    wall_ms: float


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 10.0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ValueError("alpha and epsilon must be positive")


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|P∩G| / (|P| + |G|); 1.0 when both masks are empty."""
    _check_shapes(pred, gt)
    p = pred > 0
    g = gt > 0
    np_, ng = int(p.sum()), int(g.sum())
    if np_ + ng == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (np_ + ng)


def nsd(pred: np.ndarray, gt: np.ndarray, tau: float = DEFAULT_NSD_TAU) -> float:
    """Fraction of boundary voxels of each mask within Euclidean distance
    tau of the other mask's boundary. Both empty -> 1.0; one empty -> 0.0."""
    _check_shapes(pred, gt)
    if tau <= 0:
        raise ValueError("tau must be positive")
    p_any, g_any = bool((pred > 0).any()), bool((gt > 0).any())
    if not p_any and not g_any:
        return 1.0
    if p_any != g_any:
        return 0.0
    bp = boundary_mask(pred)
    bg = boundary_mask(gt)
    tau_sq = tau * tau
    d_to_g = sq_distance_to_set(bg)
    d_to_p = sq_distance_to_set(bp)
    hits = int((d_to_g[bp] <= tau_sq).sum()) + int((d_to_p[bg] <= tau_sq).sum())
    return hits / (int(bp.sum()) + int(bg.sum()))


def trapezoid(scores) -> float:
    """Unit-spaced trapezoidal area under a metric curve."""
    s = [float(v) for v in scores]
    return sum((a + b) / 2.0 for a, b in zip(s, s[1:]))


def auc(scores) -> float:
    """Trapezoidal AUC over exactly five per-click scores; range [0, 4]."""
    if len(scores) != 5:
        raise WrongLength(f"need exactly 5 scores, got {len(scores)}")
    return trapezoid(scores)


def soft_dice_loss(
    p: np.ndarray, g: np.ndarray, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    """Soft Dice loss 1 - (2 Σ p g + ε) / (Σ p + Σ g + ε) and its analytic
    gradient with respect to p."""
    _check_shapes(p, g)
    pf = p.astype(np.float64)
    gf = (g > 0).astype(np.float64)
    num = 2.0 * float((pf * gf).sum()) + cfg.epsilon
    den = float(pf.sum()) + float(gf.sum()) + cfg.epsilon
    loss = 1.0 - num / den
    grad = -(2.0 * gf * den - num) / (den * den)
    return loss, grad


def bce_loss(p: np.ndarray, g: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy with probabilities clamped to
    [1e-7, 1 - 1e-7] before the logs; analytic gradient w.r.t. p."""
    _check_shapes(p, g)
    pf = np.clip(p.astype(np.float64), _CLAMP, 1.0 - _CLAMP)
    gf = (g > 0).astype(np.float64)
    n = pf.size
    loss = -float((gf * np.log(pf) + (1.0 - gf) * np.log(1.0 - pf)).sum()) / n
    grad = -(gf / pf - (1.0 - gf) / (1.0 - pf)) / n
    return loss, grad


def compound_loss(
    p: np.ndarray, g: np.ndarray, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    """Weighted sum alpha * soft_dice_loss + bce_loss, values and gradients."""
    dl, dg = soft_dice_loss(p, g, cfg)
    cl, cg = bce_loss(p, g)
    return cfg.alpha * dl + cl, cfg.alpha * dg + cg
