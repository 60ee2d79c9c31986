"""Adam with bias correction over dicts of arrays."""

from __future__ import annotations

import numpy as np

from .network import Params


def adam_init(params: Params) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
            "t": 0}


def adam_step(params: Params, grads: Params, state: dict, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[Params, dict]:
    """One update; ``params`` and ``state`` are modified in place and returned."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m, v = state["m"][k], state["v"][k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[k] -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(params[k].dtype)
    return params, state
