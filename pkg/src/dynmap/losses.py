"""Weighted map losses, each returning ``(value, gradient w.r.t. prediction)``.

Every loss averages over all cells of the map, background included; the
weight map decides how much each cell counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


class TooSmall(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.1
    lambda_grad: float = 1.0
    w_valid: float = 5.0
    w_bg: float = 0.95

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.lambda_grad < 0:
            raise ValueError("lambda_grad must be >= 0")
        if not (self.w_valid > 0 and self.w_bg > 0):
            raise ValueError("weights must be > 0")


def _check(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeMismatch(f"shape {np.shape(a)} != {shape}")


def huber_loss(pred, gt, weights, beta: float = 0.1):
    _check(pred, gt, weights)
    diff = np.asarray(pred, dtype=float) - gt
    a = np.abs(diff)
    quad = a <= beta
    per_cell = np.where(quad, 0.5 * diff**2, beta * a - 0.5 * beta**2)
    n = diff.size
    value = float(np.sum(weights * per_cell) / n)
    grad = weights * np.where(quad, diff, beta * np.sign(diff)) / n
    return value, grad


def _forward_diffs(r):
    dx = np.zeros_like(r)
    dy = np.zeros_like(r)
    dx[:, :-1] = r[:, 1:] - r[:, :-1]
    dy[:-1, :] = r[1:, :] - r[:-1, :]
    return dx, dy


def _forward_diffs_adjoint(gx, gy):
    out = np.zeros_like(gx)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:, :] += gy[:-1, :]
    out[:-1, :] -= gy[:-1, :]
    return out


def grad_struct_loss(pred, gt, weights):
    """Weighted squared mismatch of forward-difference spatial gradients.

    The difference between cells (r, c) and (r, c+1) (or (r+1, c)) is
    weighted by ``weights[r, c]``; the last column and row add nothing.
    """
    _check(pred, gt, weights)
    if np.ndim(pred) != 2 or min(np.shape(pred)) < 2:
        raise TooSmall("structural loss needs a 2-D map of at least 2x2 cells")
    r = np.asarray(pred, dtype=float) - gt
    dx, dy = _forward_diffs(r)
    n = r.size
    value = float(np.sum(weights * (dx**2 + dy**2)) / n)
    grad = _forward_diffs_adjoint(2.0 * weights * dx / n, 2.0 * weights * dy / n)
    return value, grad


def weighted_mse(pred, gt, weights):
    _check(pred, gt, weights)
    diff = np.asarray(pred, dtype=float) - gt
    n = diff.size
    return float(np.sum(weights * diff**2) / n), 2.0 * weights * diff / n


def angle_loss(pred_cos, pred_sin, gt_cos, gt_sin, weights):
    _check(pred_cos, pred_sin, gt_cos, gt_sin, weights)
    vc, gc = weighted_mse(pred_cos, gt_cos, weights)
    vs, gs = weighted_mse(pred_sin, gt_sin, weights)
    return vc + vs, (gc, gs)


def flow_loss(pred, gt, weights, cfg: LossConfig = LossConfig()):
    vh, gh = huber_loss(pred, gt, weights, cfg.beta)
    if cfg.lambda_grad == 0:
        return vh, gh
    vg, gg = grad_struct_loss(pred, gt, weights)
    return vh + cfg.lambda_grad * vg, gh + cfg.lambda_grad * gg


# identical form; the entropy map is just another scalar field
entropy_loss = flow_loss


def direction_loss(pred_cos, pred_sin, gt_cos, gt_sin, weights, cfg: LossConfig = LossConfig()):
    va, (gc, gs) = angle_loss(pred_cos, pred_sin, gt_cos, gt_sin, weights)
    if cfg.lambda_grad == 0:
        return va, (gc, gs)
    vgc, ggc = grad_struct_loss(pred_cos, gt_cos, weights)
    vgs, ggs = grad_struct_loss(pred_sin, gt_sin, weights)
    lam = cfg.lambda_grad
    return va + lam * (vgc + vgs), (gc + lam * ggc, gs + lam * ggs)


def finite_diff_check(loss, preds, h: float = 1e-4, floor: float = 1e-8) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``loss(*preds)`` must return ``(value, grad)`` where ``grad`` is an array
    for a single prediction or a tuple of arrays matching ``preds``.
    """
    if isinstance(preds, np.ndarray):
        preds = (preds,)
    preds = [np.array(p, dtype=float) for p in preds]
    _, grads = loss(*preds)
    if isinstance(grads, np.ndarray):
        grads = (grads,)
    worst = 0.0
    for p, g in zip(preds, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss(*preds)[0]
            p[idx] = orig - h
            down = loss(*preds)[0]
            p[idx] = orig
            numeric = (up - down) / (2 * h)
            err = abs(numeric - g[idx]) / max(abs(numeric), abs(g[idx]), floor)
            worst = max(worst, err)
    return worst
