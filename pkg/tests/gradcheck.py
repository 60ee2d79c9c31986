"""Finite-difference check of the field gradients on a tiny f64 network."""

import numpy as np

from oracles import central_difference
from objmap.fields.losses import LossWeights, RayTargets
from objmap.fields.network import init_params
from objmap.fields.train import RayBatch, loss_and_gradients

N_FREQS, HIDDEN, N_LAYERS, D_E = 1, 4, 1, 3


def random_problem(seed: int, n_rays: int = 3, n_samples: int = 4):
    rng = np.random.default_rng(seed)
    params = {k: v[None] for k, v in init_params(rng, N_FREQS, HIDDEN, N_LAYERS, D_E, np.float64).items()}
    # non-zero biases so every parameter has a generic gradient
    for k in params:
        if k.startswith("b"):
            params[k] = rng.normal(scale=0.3, size=params[k].shape)
    origins = rng.normal(scale=0.1, size=(1, n_rays, 3))
    dirs = rng.normal(size=(1, n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    depths = np.sort(rng.uniform(0.1, 0.8, (1, n_rays, n_samples)), axis=-1)
    targets = RayTargets(
        ray_valid=np.ones((1, n_rays), dtype=bool),
        inside=np.array([[True] * (n_rays - 1) + [False]]),
        depth=rng.uniform(0.1, 0.8, (1, n_rays)),
        depth_valid=np.ones((1, n_rays), dtype=bool),
        color=rng.random((1, n_rays, 3)),
        feature=rng.normal(size=(1, n_rays, D_E)),
        feature_valid=np.ones((1, n_rays), dtype=bool))
    batch = RayBatch(origins, dirs, depths, targets)
    # box large enough that no point is clamped
    return params, np.zeros((1, 3)), np.full((1, 3), 2.0), batch


def max_relative_error(seed: int, h: float = 1e-5, floor: float = 1e-7) -> float:
    params, center, half, batch = random_problem(seed)
    w = LossWeights(1.0, 1.0, 1.0, 1.0)
    _, grads = loss_and_gradients(params, center, half, batch, w, N_FREQS, N_LAYERS)
    worst = 0.0
    for name, p in params.items():
        num = central_difference(
            lambda: loss_and_gradients(params, center, half, batch, w, N_FREQS, N_LAYERS)[0].total, p, h)
        a = grads[name]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        worst = max(worst, float(rel.max()))
    return worst
