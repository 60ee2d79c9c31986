"""Depth-guided sample placement along camera rays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from ..dataset import Intrinsics


@dataclass(frozen=True)
class RayConfig:
    n_uniform: int = 10  # stratified samples on [near, t_s]
    n_surface: int = 6  # truncated-Gaussian samples around t_s
    near: float = 0.05
    sigma: float = 0.03

    @property
    def n_samples(self) -> int:
        return self.n_uniform + self.n_surface


@dataclass
class RaySampleBatch:
    pixels: np.ndarray  # (R, 2) u, v
    origins: np.ndarray  # (R, 3)
    directions: np.ndarray  # (R, 3), unit camera z
    depths: np.ndarray  # (R, S) ascending
    surface: np.ndarray  # (R,)
    near: float

    @property
    def points(self) -> np.ndarray:
        return self.origins[:, None, :] + self.depths[..., None] * self.directions[:, None, :]


class UnresolvableDepthError(ValueError):
    pass


def pixel_rays(u: np.ndarray, v: np.ndarray, K: Intrinsics, pose: np.ndarray):
    """Ray origins and directions; a point at parameter ``d`` has camera z-depth ``d``."""
    cam = np.stack([(np.asarray(u, dtype=np.float64) - K.cx) / K.fx,
                    (np.asarray(v, dtype=np.float64) - K.cy) / K.fy,
                    np.ones(np.shape(u))], axis=-1)
    dirs = cam @ pose[:3, :3].T
    origins = np.broadcast_to(pose[:3, 3], dirs.shape).copy()
    return origins, dirs


def sample_depths(surface: np.ndarray, cfg: RayConfig, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Sorted sample depths ``(R, n_uniform + n_surface)`` for surface depths ``surface (R,)``.

    Uniform samples are stratified on ``[near, t_s]``; surface samples follow
    ``N(t_s, sigma^2)`` truncated to ``(max(near, t_s - 3 sigma), t_s + 3 sigma)``. With
    ``rng=None`` the stratum midpoints and evenly spaced quantiles are used.
    """
    t_s = np.asarray(surface, dtype=np.float64)
    R = len(t_s)
    if np.any(t_s <= cfg.near):
        raise UnresolvableDepthError("surface depth must exceed the near bound")
    parts = []
    if cfg.n_uniform:
        jitter = 0.5 * np.ones((R, cfg.n_uniform)) if rng is None else rng.random((R, cfg.n_uniform))
        frac = (np.arange(cfg.n_uniform) + jitter) / cfg.n_uniform
        parts.append(cfg.near + frac * (t_s - cfg.near)[:, None])
    if cfg.n_surface:
        z_lo = np.maximum((cfg.near - t_s) / cfg.sigma, -3.0)[:, None]
        lo, hi = ndtr(z_lo), ndtr(3.0)
        if rng is None:
            q = np.broadcast_to((np.arange(cfg.n_surface) + 0.5) / cfg.n_surface, (R, cfg.n_surface))
        else:
            q = rng.random((R, cfg.n_surface))
        z = ndtri(lo + q * (hi - lo))
        parts.append(t_s[:, None] + cfg.sigma * np.clip(z, z_lo, 3.0))
    return np.sort(np.concatenate(parts, axis=1), axis=1)


def resolve_surface(depth: np.ndarray, u: np.ndarray, v: np.ndarray,
                    fallback: Optional[float], near: float) -> tuple[np.ndarray, np.ndarray]:
    """Surface depth per pixel with fallback for invalid depth; returns ``(t_s, ok)``."""
    t_s = depth[v, u].astype(np.float64)
    bad = ~(t_s > near)
    if fallback is not None and fallback > near:
        t_s = np.where(bad, fallback, t_s)
        ok = np.ones(len(t_s), dtype=bool)
    else:
        ok = ~bad
    return t_s, ok


def sample_ray(pixel: tuple[int, int], depth: np.ndarray, K: Intrinsics, pose: np.ndarray,
               cfg: RayConfig = RayConfig(), rng: Optional[np.random.Generator] = None,
               fallback: Optional[float] = None) -> RaySampleBatch:
    """Samples for one pixel ``(u, v)``.

    Raises:
        UnresolvableDepthError: if the pixel depth is invalid and no fallback is given.
    """
    u, v = np.array([pixel[0]]), np.array([pixel[1]])
    t_s, ok = resolve_surface(depth, u, v, fallback, cfg.near)
    if not ok[0]:
        raise UnresolvableDepthError(f"no valid depth at pixel {pixel} and no fallback")
    origins, dirs = pixel_rays(u, v, K, np.asarray(pose, dtype=np.float64))
    return RaySampleBatch(np.stack([u, v], axis=1), origins, dirs, sample_depths(t_s, cfg, rng), t_s, cfg.near)


def slab_range(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Entry/exit ray parameters for an AABB; ``t_in > t_out`` means a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origins) / dirs
        t2 = (hi - origins) / dirs
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    t_in = np.maximum(np.minimum(t1, t2).max(axis=-1), 0.0)
    t_out = np.maximum(t1, t2).min(axis=-1)
    return t_in, t_out
