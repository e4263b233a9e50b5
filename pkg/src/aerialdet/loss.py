"""Detection losses on plain dense grids: values plus analytic gradients.

Three parts, combined as a weighted sum:

* a focal loss over the class-hierarchy heatmap — at peak cells
  (target exactly 1) the penalty is ``-(1 - p)^alpha * log(p)``; everywhere
  else ``-(1 - y)^beta * p^alpha * log(1 - p)``, which down-weights cells
  sitting on Gaussian tails of nearby peaks;
* an L1 loss on predicted box extents at ground-truth peak cells;
* an L1 loss on predicted sub-cell center offsets at the same cells.

All values are normalized by the object count. Everything is pure numpy so
gradients can be verified cell-by-cell against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heatmap import DenseTargetSet


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0  # focal exponent on the prediction
    beta: float = 4.0  # down-weighting exponent on soft background targets
    heatmap_weight: float = 1.0
    size_weight: float = 0.1
    offset_weight: float = 1.0
    clamp_eps: float = 1e-4

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("focal exponents must be >= 0")
        if min(self.heatmap_weight, self.size_weight, self.offset_weight) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must be in (0, 0.5)")


@dataclass
class Prediction:
    """Dense heatmap prediction plus per-peak size/offset regressions.

    sizes_hat and offsets_hat are aligned with the target's peak list.
    Heatmap values are clamped into [clamp_eps, 1 - clamp_eps] before any
    loss is evaluated; clamped cells get zero gradient.
    """

    heatmap_hat: np.ndarray  # same shape as the target heatmap
    sizes_hat: np.ndarray  # (n_objects, 2)
    offsets_hat: np.ndarray  # (n_objects, 2)


def focal_loss_shm(
    target: DenseTargetSet, pred: Prediction, cfg: LossConfig
) -> tuple[float, np.ndarray]:
    """Focal loss over the full heatmap grid; returns (value, d value / d prediction).

    The peak branch fires only where the target is exactly 1 (the written
    peaks); Gaussian tails take the background branch. Empty images yield
    zero loss and zero gradient.
    """
    y = target.heatmap
    p_raw = pred.heatmap_hat
    if p_raw.shape != y.shape:
        raise ValueError(f"prediction shape {p_raw.shape} != target shape {y.shape}")
    n = target.n_objects
    if n == 0:
        return 0.0, np.zeros_like(y)

    lo, hi = cfg.clamp_eps, 1.0 - cfg.clamp_eps
    p = np.clip(p_raw, lo, hi)
    peak = y == 1.0

    log_p = np.log(p)
    log_1p = np.log1p(-p)
    one_m_p = 1.0 - p

    pos = np.where(peak, one_m_p**cfg.alpha * log_p, 0.0)
    neg = np.where(peak, 0.0, (1.0 - y) ** cfg.beta * p**cfg.alpha * log_1p)
    value = -(pos.sum() + neg.sum()) / n

    # d/dp of the per-cell summand, then scaled by the -1/N out front.
    dpos = -cfg.alpha * one_m_p ** (cfg.alpha - 1.0) * log_p + one_m_p**cfg.alpha / p
    dneg = (1.0 - y) ** cfg.beta * (
        cfg.alpha * p ** (cfg.alpha - 1.0) * log_1p - p**cfg.alpha / one_m_p
    )
    grad = np.where(peak, dpos, dneg) * (-1.0 / n)
    grad[(p_raw < lo) | (p_raw > hi)] = 0.0  # flat outside the clamp range
    return float(value), grad


def size_loss_wh(target: DenseTargetSet, pred: Prediction) -> tuple[float, np.ndarray]:
    """Mean L1 error of predicted (w, h) against true box extents."""
    n = target.n_objects
    if n == 0:
        return 0.0, np.zeros((0, 2))
    diff = np.asarray(pred.sizes_hat, dtype=np.float64) - target.sizes
    value = float(np.abs(diff).sum() / n)
    return value, np.sign(diff) / n


def offset_loss(target: DenseTargetSet, pred: Prediction) -> tuple[float, np.ndarray]:
    """Mean L1 error of predicted sub-cell offsets against fractional targets."""
    n = target.n_objects
    if n == 0:
        return 0.0, np.zeros((0, 2))
    diff = np.asarray(pred.offsets_hat, dtype=np.float64) - target.offsets
    value = float(np.abs(diff).sum() / n)
    return value, np.sign(diff) / n


def total_loss(parts: tuple[float, float, float], cfg: LossConfig) -> float:
    """Weighted sum of (heatmap focal, size, offset) loss values."""
    shm, wh, off = parts
    return cfg.heatmap_weight * shm + cfg.size_weight * wh + cfg.offset_weight * off


def evaluate_all(
    target: DenseTargetSet, pred: Prediction, cfg: LossConfig
) -> dict[str, float]:
    """All loss parts and the weighted total, by their wire-format names."""
    shm, _ = focal_loss_shm(target, pred, cfg)
    wh, _ = size_loss_wh(target, pred)
    off, _ = offset_loss(target, pred)
    return {
        "l_shm": shm,
        "l_wh": wh,
        "l_off": off,
        "total": total_loss((shm, wh, off), cfg),
    }


def perfect_prediction(target: DenseTargetSet, cfg: LossConfig) -> Prediction:
    """The loss-minimizing realizable prediction for a target set.

    1 - eps at the written peaks and eps everywhere else: the background
    branch is increasing in the prediction, so even Gaussian-tail cells are
    best answered with (clamped) zero.
    """
    lo, hi = cfg.clamp_eps, 1.0 - cfg.clamp_eps
    return Prediction(
        heatmap_hat=np.where(target.heatmap == 1.0, hi, lo),
        sizes_hat=target.sizes.copy(),
        offsets_hat=target.offsets.copy(),
    )


def finite_difference_heatmap_grad(
    target: DenseTargetSet,
    pred: Prediction,
    cfg: LossConfig,
    step: float = 1e-5,
    cells: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient of the focal loss at selected flat cell indices.

    Perturbing one cell changes exactly one summand of the loss, so the
    difference quotient is evaluated per summand (vectorized over cells)
    rather than by re-summing the whole grid; the value is identical up to
    the cancellation error the full sum would add. Returns
    (flat_indices, fd_gradient); cells defaults to the entire grid.
    """
    if target.n_objects == 0:
        cells = np.arange(pred.heatmap_hat.size) if cells is None else cells
        return cells, np.zeros(cells.size)
    y = target.heatmap.reshape(-1)
    p_raw = np.asarray(pred.heatmap_hat, dtype=np.float64).reshape(-1)
    if cells is None:
        cells = np.arange(p_raw.size)
    peak = y[cells] == 1.0
    y_c = y[cells]

    def summand(values: np.ndarray) -> np.ndarray:
        p = np.clip(values, cfg.clamp_eps, 1.0 - cfg.clamp_eps)
        pos = (1.0 - p) ** cfg.alpha * np.log(p)
        neg = (1.0 - y_c) ** cfg.beta * p**cfg.alpha * np.log1p(-p)
        return -np.where(peak, pos, neg) / target.n_objects

    up = summand(p_raw[cells] + step)
    down = summand(p_raw[cells] - step)
    return cells, (up - down) / (2.0 * step)
