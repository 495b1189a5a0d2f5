"""Segmentation, planning and prediction losses.

Trajectory losses are sum-form L1 over waypoints and coordinates; a batch is
reduced by the mean over scenes.
"""
from __future__ import annotations

import numpy as np

from ..numerics import tensor as T
from ..numerics.tensor import ShapeError, Tensor

DEFAULT_LAMBDA = 1.0


def loss_seg(logits: Tensor, gt_masks) -> Tensor:
    """Mean binary cross-entropy over every mask pixel."""
    return T.bce_with_logits(logits, gt_masks, reduction="mean")


def _trajectory_l1(pred: Tensor, gt, what: str) -> Tensor:
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ShapeError(what, pred.shape, gt.shape)
    if pred.shape[-1] != 2:
        raise ShapeError(f"{what} (waypoints are 2-D)", pred.shape)
    return T.l1_loss(pred, gt, reduction="sum")


def loss_planning(plan: Tensor, gt) -> Tensor:
    """sum_t |p_t - p_t^gt|_1 for a [T, 2] plan; [B, T, 2] is averaged over B."""
    total = _trajectory_l1(plan, gt, "loss_planning")
    return total if plan.ndim == 2 else total * (1.0 / plan.shape[0])


def loss_prediction(preds: Tensor | None, gt, n_scenes: int = 1) -> Tensor:
    """sum_i sum_t |p_t^i - p_t^{i,gt}|_1 over the selected other vehicles, divided by ``n_scenes``."""
    gt = np.asarray(gt, dtype=float)
    if preds is None:
        if gt.size:
            raise ShapeError("loss_prediction (labels without predictions)", (0,), gt.shape)
        return Tensor(0.0)
    if gt.ndim != 3 or preds.shape[0] != gt.shape[0]:
        raise ShapeError("loss_prediction (vehicle count)", preds.shape, gt.shape)
    return _trajectory_l1(preds, gt, "loss_prediction") * (1.0 / n_scenes)


def loss_jpp(plan: Tensor, plan_gt, preds: Tensor | None, preds_gt, n_scenes: int = 1) -> Tensor:
    return loss_planning(plan, plan_gt) + loss_prediction(preds, preds_gt, n_scenes)


def loss_total(per, jpp, lam: float = DEFAULT_LAMBDA):
    """per + lam * jpp; plain floats in, plain float out."""
    if isinstance(per, Tensor) or isinstance(jpp, Tensor):
        return T.as_tensor(per) + T.as_tensor(jpp) * lam
    return per + lam * jpp
