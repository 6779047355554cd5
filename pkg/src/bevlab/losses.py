"""Training losses and their hand-written gradients.

Pretraining combines a binary cross-entropy occupancy term (averaged
over every voxel) with an occupancy-masked negative-cosine feature term
(averaged over valid voxels only):

    total = l_occ + lam * l_feat

Each loss function returns ``(value, grad_wrt_prediction)`` so the
training loop stays a plain chain of array ops.  Finetuning adds a BEV
cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossBreakdown",
    "occupancy_loss",
    "distillation_loss",
    "total_loss",
    "cross_entropy_loss",
    "write_loss_log",
    "BCE_CLAMP",
    "COSINE_EPS",
]

BCE_CLAMP = 1e-7   # predictions are clipped to [BCE_CLAMP, 1 - BCE_CLAMP]
COSINE_EPS = 1e-8  # smooth norm guard: ||a|| -> sqrt(sum a^2 + eps^2)

LOG_COLUMNS = ("step", "l_occ", "l_feat", "total", "n_valid")


@dataclass
class LossBreakdown:
    l_occ: float
    l_feat: float
    lam: float
    total: float
    n_voxels: int
    n_occupied: int
    n_valid: int


def occupancy_loss(pred: np.ndarray, occ: np.ndarray):
    """Mean BCE over all voxels; returns (loss, grad wrt pred).

    Predictions are clamped before the logs, and the clamp is part of
    the computation graph: saturated voxels get exactly zero gradient.
    """
    if pred.shape != occ.shape:
        raise ValueError(f"prediction shape {pred.shape} != occupancy shape {occ.shape}")
    n = pred.size
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    p = np.clip(pred, lo, hi)
    loss = float(-(occ * np.log(p) + (1.0 - occ) * np.log1p(-p)).sum() / n)
    live = (pred > lo) & (pred < hi)
    grad = np.where(live, (p - occ) / (p * (1.0 - p) * n), 0.0)
    return loss, grad


def distillation_loss(pred: np.ndarray, target: np.ndarray, valid_mask: np.ndarray):
    """Negative cosine between predicted and target features, averaged
    over valid voxels; returns (loss, grad wrt pred).

    Voxels with valid_mask 0 are excluded structurally: they contribute
    nothing to the value and receive an exactly-zero gradient.  With no
    valid voxels at all the loss is 0 with zero gradient.
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if valid_mask.shape != pred.shape[1:]:
        raise ValueError(f"mask shape {valid_mask.shape} != voxel shape {pred.shape[1:]}")
    mask = valid_mask > 0
    n_valid = int(mask.sum())
    if n_valid == 0:
        return 0.0, np.zeros_like(pred)
    a = pred[:, mask]    # [N_y, n_valid]
    b = target[:, mask]
    na = np.sqrt((a * a).sum(axis=0) + COSINE_EPS ** 2)
    nb = np.sqrt((b * b).sum(axis=0) + COSINE_EPS ** 2)
    cos = (a * b).sum(axis=0) / (na * nb)
    loss = float(-cos.sum() / n_valid)
    ga = -(b / (na * nb) - cos * a / (na * na)) / n_valid
    grad = np.zeros_like(pred)
    grad[:, mask] = ga
    return loss, grad


def total_loss(l_occ: float, l_feat: float, lam: float,
               n_voxels: int = 0, n_occupied: int = 0, n_valid: int = 0) -> LossBreakdown:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return LossBreakdown(l_occ=float(l_occ), l_feat=float(l_feat), lam=float(lam),
                         total=float(l_occ) + float(lam) * float(l_feat),
                         n_voxels=n_voxels, n_occupied=n_occupied, n_valid=n_valid)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over BEV cells; returns (loss, grad).

    ``logits`` is [K, H, W]; ``labels`` is [H, W] integer class ids.
    """
    k, h, w = logits.shape
    if labels.shape != (h, w):
        raise ValueError(f"labels shape {labels.shape} != grid shape {(h, w)}")
    z = logits - logits.max(axis=0, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=0, keepdims=True)
    n = h * w
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    picked = p[labels, ii, jj]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum() / n)
    grad = p.copy()
    grad[labels, ii, jj] -= 1.0
    return loss, grad / n


def write_loss_log(path: str, rows: list[tuple[int, LossBreakdown]]) -> None:
    """Run log CSV with columns step,l_occ,l_feat,total,n_valid."""
    with open(path, "w") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for step, bd in rows:
            fh.write(f"{step},{bd.l_occ!r},{bd.l_feat!r},{bd.total!r},{bd.n_valid}\n")
