"""Masked L1 losses on rendered occupancy, depth, color and feature.

All arrays carry a leading object axis ``K`` and a ray axis ``R``. Each term
is a mean over the rays it applies to: occupancy over every sampled ray in
the object's 2D box, the other three only over rays inside the object mask
(depth additionally needs valid depth, feature needs part-mask coverage).
Vector residuals are averaged over channels, so every term is a mean
absolute error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TERMS = ("occ", "depth", "color", "feat")


@dataclass(frozen=True)
class LossWeights:
    occ: float = 1.0
    depth: float = 0.2
    color: float = 1.0
    feat: float = 1.0

    def __post_init__(self):
        if any(w < 0 for w in self.as_tuple()):
            raise ValueError("loss weights must be non-negative")
        if not any(self.as_tuple()):
            raise ValueError("loss weights cannot all be zero")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.occ, self.depth, self.color, self.feat


@dataclass
class RayTargets:
    ray_valid: np.ndarray  # (K, R) rays that were actually sampled
    inside: np.ndarray  # (K, R) mask membership M(O_k)[u, v]
    depth: np.ndarray  # (K, R)
    depth_valid: np.ndarray  # (K, R)
    color: np.ndarray  # (K, R, 3) in [0, 1]
    feature: np.ndarray  # (K, R, D)
    feature_valid: np.ndarray  # (K, R)


@dataclass
class LossResult:
    total: float
    per_object: np.ndarray  # (K,) weighted total per object
    terms: np.ndarray  # (K, 4) unweighted terms
    empty: np.ndarray  # (K, 4) bool, term had no supervised rays
    grads: tuple  # dL/d(O, D, C, F)


def _masked_mean_l1(resid: np.ndarray, sel: np.ndarray):
    """Mean over selected rays (and channels) of |resid|, and its gradient."""
    w = sel.astype(resid.dtype)
    count = w.sum(axis=1)
    denom = np.where(count > 0, count, 1.0)
    a = np.abs(resid)
    n_ch = resid.shape[-1] if resid.ndim == 3 else 1
    per_ray = a.mean(axis=-1) if resid.ndim == 3 else a
    value = (per_ray * w).sum(axis=1) / denom
    scale = w / (denom[:, None] * n_ch)
    grad = np.sign(resid) * (scale[..., None] if resid.ndim == 3 else scale)
    return value, grad, count == 0


def compute_losses(O, D, C, F, targets: RayTargets, weights: LossWeights) -> LossResult:
    """Loss terms, weighted sum over objects, and gradients w.r.t. the renders."""
    t = targets
    valid = t.ray_valid
    inside = valid & t.inside
    occ, g_O, e0 = _masked_mean_l1(O - t.inside.astype(O.dtype), valid)
    dep, g_D, e1 = _masked_mean_l1(D - t.depth, inside & t.depth_valid)
    col, g_C, e2 = _masked_mean_l1(C - t.color, inside)
    fea, g_F, e3 = _masked_mean_l1(F - t.feature, inside & t.feature_valid)
    lam = weights.as_tuple()
    terms = np.stack([occ, dep, col, fea], axis=1)
    per_object = terms @ np.asarray(lam, dtype=terms.dtype)
    grads = (lam[0] * g_O, lam[1] * g_D, lam[2] * g_C, lam[3] * g_F)
    return LossResult(float(per_object.sum()), per_object, terms,
                      np.stack([e0, e1, e2, e3], axis=1), grads)
