"""Per-object coordinate MLP with color, occupancy and feature heads.

Parameters of ``K`` networks with identical shapes are stacked along a
leading axis, so one batched matmul evaluates every object at once. A single
network is just ``K = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

Params = dict[str, np.ndarray]

HEADS = ("c", "o", "f")


def positional_encode(p: np.ndarray, n_freqs: int) -> np.ndarray:
    """``[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]``."""
    p = np.asarray(p)
    out = [p]
    for level in range(n_freqs):
        arg = (2.0 ** level * np.pi) * p
        out.append(np.sin(arg))
        out.append(np.cos(arg))
    return np.concatenate(out, axis=-1)


def encoded_dim(n_freqs: int) -> int:
    return 3 + 6 * n_freqs


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def layer_names(n_layers: int) -> list[str]:
    names = []
    for i in range(n_layers):
        names += [f"w{i}", f"b{i}"]
    for h in HEADS:
        names += [f"w{h}", f"b{h}"]
    return names


def init_params(rng: np.random.Generator, n_freqs: int, hidden: int, n_layers: int,
                feat_dim: int, dtype=np.float32, zero_heads: bool = False) -> Params:
    """He-uniform hidden layers, Glorot-uniform heads, zero biases."""
    params: Params = {}
    fan_in = encoded_dim(n_freqs)
    for i in range(n_layers):
        lim = np.sqrt(6.0 / fan_in)
        params[f"w{i}"] = rng.uniform(-lim, lim, (fan_in, hidden))
        params[f"b{i}"] = np.zeros(hidden)
        fan_in = hidden
    for h, dim in zip(HEADS, (3, 1, feat_dim)):
        lim = np.sqrt(6.0 / (hidden + dim))
        params[f"w{h}"] = np.zeros((hidden, dim)) if zero_heads else rng.uniform(-lim, lim, (hidden, dim))
        params[f"b{h}"] = np.zeros(dim)
    return {k: v.astype(dtype) for k, v in params.items()}


@dataclass
class FieldNetwork:
    """One object's field plus the transform from world to its ``[-1, 1]^3`` box."""

    params: Params
    center: np.ndarray
    half_extent: np.ndarray
    n_freqs: int = 5
    hidden: int = 32
    n_layers: int = 4
    feat_dim: int = 16
    object_id: int = 0
    trained_steps: int = 0
    opt_state: Optional[dict] = field(default=None, repr=False)

    @classmethod
    def create(cls, bbox: np.ndarray, feat_dim: int, rng: np.random.Generator,
               n_freqs: int = 5, hidden: int = 32, n_layers: int = 4, margin: float = 0.1,
               dtype=np.float32, object_id: int = 0, zero_heads: bool = False) -> "FieldNetwork":
        """Network whose domain is ``bbox`` (rows min/max) grown by ``margin`` of its extent."""
        lo, hi = np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64)
        extent = np.maximum(hi - lo, 1e-3)
        lo, hi = lo - margin * extent, hi + margin * extent
        params = init_params(rng, n_freqs, hidden, n_layers, feat_dim, dtype, zero_heads)
        return cls(params, (lo + hi) / 2, (hi - lo) / 2, n_freqs, hidden, n_layers, feat_dim, object_id)

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.center - self.half_extent, self.center + self.half_extent])

    def query(self, points: np.ndarray):
        """``(c, o, f)`` at world points ``(N, 3)``."""
        check_finite(self.params)
        dtype = self.params["w0"].dtype
        stacked = {k: v[None] for k, v in self.params.items()}
        x = normalize_points(points[None].astype(np.float64), self.center[None], self.half_extent[None])
        c, o, f, _ = forward(stacked, x.astype(dtype), self.n_freqs, self.n_layers)
        return c[0], o[0], f[0]


class NonFiniteError(FloatingPointError):
    pass


def check_finite(params: Params, what: str = "parameter") -> None:
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite {what} {name!r}")


def normalize_points(x: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    """World ``(K, N, 3)`` to each object's unit box, clamped to ``[-1, 1]``."""
    return np.clip((x - center[:, None, :]) / half[:, None, :], -1.0, 1.0)


def stack_params(nets: Sequence[FieldNetwork]) -> Params:
    return {k: np.stack([n.params[k] for n in nets]) for k in nets[0].params}


def forward(params: Params, x: np.ndarray, n_freqs: int, n_layers: int):
    """Batched forward pass on normalized points ``x (K, N, 3)``.

    Returns ``(c, o, f, cache)`` with ``c (K, N, 3)``, ``o (K, N)``,
    ``f (K, N, D)``; ``cache`` feeds :func:`backward`.
    """
    h = positional_encode(x, n_freqs)
    acts = [h]
    for i in range(n_layers):
        h = np.maximum(np.matmul(h, params[f"w{i}"]) + params[f"b{i}"][:, None, :], 0)
        acts.append(h)
    c = sigmoid(np.matmul(h, params["wc"]) + params["bc"][:, None, :])
    o = sigmoid(np.matmul(h, params["wo"]) + params["bo"][:, None, :])[..., 0]
    f = np.matmul(h, params["wf"]) + params["bf"][:, None, :]
    return c, o, f, {"acts": acts, "c": c, "o": o}


def backward(params: Params, cache: dict, g_c: np.ndarray, g_o: np.ndarray, g_f: np.ndarray,
             n_layers: int) -> Params:
    """Parameter gradients given upstream gradients on the three head outputs."""
    acts = cache["acts"]
    c, o = cache["c"], cache["o"]
    h = acts[-1]
    ht = np.swapaxes(h, 1, 2)
    grads: Params = {}
    z_c = g_c * c * (1 - c)
    z_o = (g_o * o * (1 - o))[..., None]
    grads["wc"], grads["bc"] = np.matmul(ht, z_c), z_c.sum(axis=1)
    grads["wo"], grads["bo"] = np.matmul(ht, z_o), z_o.sum(axis=1)
    grads["wf"], grads["bf"] = np.matmul(ht, g_f), g_f.sum(axis=1)
    g_h = (np.matmul(z_c, np.swapaxes(params["wc"], 1, 2))
           + np.matmul(z_o, np.swapaxes(params["wo"], 1, 2))
           + np.matmul(g_f, np.swapaxes(params["wf"], 1, 2)))
    for i in reversed(range(n_layers)):
        g_z = g_h * (acts[i + 1] > 0)
        grads[f"w{i}"] = np.matmul(np.swapaxes(acts[i], 1, 2), g_z)
        grads[f"b{i}"] = g_z.sum(axis=1)
        if i:
            g_h = np.matmul(g_z, np.swapaxes(params[f"w{i}"], 1, 2))
    return grads
