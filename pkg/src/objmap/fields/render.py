"""Occupancy-based volume rendering along rays.

A ray stops at sample ``m`` with probability
``T_m = o_m * prod_{n<m} (1 - o_n)``; occupancy, depth, color and feature are
the ``T``-weighted sums over samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RenderedPixel:
    occupancy: float
    depth: float
    color: np.ndarray
    feature: np.ndarray
    weights: np.ndarray


def exclusive_cumprod(a: np.ndarray) -> np.ndarray:
    """``out[..., m] = prod_{n<m} a[..., n]`` along the last axis."""
    out = np.ones_like(a)
    if a.shape[-1] > 1:
        out[..., 1:] = np.cumprod(a[..., :-1], axis=-1)
    return out


def termination_weights(o: np.ndarray) -> np.ndarray:
    return o * exclusive_cumprod(1.0 - o)


def composite(o: np.ndarray, d: np.ndarray, c: np.ndarray, f: np.ndarray):
    """Batched render; sample axis is the last axis of ``o``/``d``, second to last of ``c``/``f``.

    Returns ``(O, D, C, F, T)``.
    """
    T = termination_weights(o)
    O = T.sum(axis=-1)
    D = (T * d).sum(axis=-1)
    C = np.einsum("...s,...sc->...c", T, c)
    F = np.einsum("...s,...sc->...c", T, f)
    return O, D, C, F, T


def composite_backward(o: np.ndarray, d: np.ndarray, c: np.ndarray, f: np.ndarray, T: np.ndarray,
                       g_O: np.ndarray, g_D: np.ndarray, g_C: np.ndarray, g_F: np.ndarray):
    """Gradients w.r.t. per-sample ``o``, ``c``, ``f`` given gradients on the renders.

    With ``P_m = prod_{n<m} (1 - o_n)`` and ``g_m = dL/dT_m``,
    ``dL/do_m = P_m (g_m - R_m)`` where ``R_m = sum_{j>m} g_j T_j / (P_m (1 - o_m))``
    is accumulated backwards without division.
    """
    g_T = (g_O[..., None] + g_D[..., None] * d
           + np.einsum("...c,...sc->...s", g_C, c)
           + np.einsum("...c,...sc->...s", g_F, f))
    P = exclusive_cumprod(1.0 - o)
    S = o.shape[-1]
    R = np.zeros_like(o)
    for m in range(S - 2, -1, -1):
        R[..., m] = g_T[..., m + 1] * o[..., m + 1] + (1.0 - o[..., m + 1]) * R[..., m + 1]
    g_o = P * (g_T - R)
    g_c = T[..., None] * g_C[..., None, :]
    g_f = T[..., None] * g_F[..., None, :]
    return g_o, g_c, g_f


def render_ray(c: np.ndarray, o: np.ndarray, f: np.ndarray, d: np.ndarray) -> RenderedPixel:
    """Render one ray from per-sample ``c (S, 3)``, ``o (S,)``, ``f (S, D)``, ``d (S,)``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(np.diff(d) < 0):
        raise ValueError("sample depths must be sorted ascending")
    O, D, C, F, T = composite(np.asarray(o, dtype=np.float64), d,
                              np.asarray(c, dtype=np.float64), np.asarray(f, dtype=np.float64))
    return RenderedPixel(float(O), float(D), C, F, T)
