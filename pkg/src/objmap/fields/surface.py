"""Iso-surface extraction from occupancy fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from skimage.measure import marching_cubes

from .network import FieldNetwork


class EmptySurfaceError(ValueError):
    pass


@dataclass
class Surface:
    vertices: np.ndarray  # (V, 3) world coordinates
    faces: np.ndarray  # (F, 3) vertex indices
    colors: Optional[np.ndarray] = None  # (V, 3)
    features: Optional[np.ndarray] = None  # (V, D)


def occupancy_grid(occupancy: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray,
                   resolution: int, chunk: int = 65536):
    """Occupancy sampled on a ``resolution``³ lattice spanning ``[lo, hi]``; returns ``(grid, spacing)``."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.concatenate([np.asarray(occupancy(pts[s:s + chunk]), dtype=np.float64).ravel()
                           for s in range(0, len(pts), chunk)])
    return vals.reshape((resolution,) * 3), (hi - lo) / (resolution - 1)


def extract_isosurface(occupancy: Callable[[np.ndarray], np.ndarray], lo, hi, resolution: int = 64,
                       iso: float = 0.5) -> Surface:
    """Marching cubes on ``occupancy`` over the box ``[lo, hi]``.

    The occupancy must cross ``iso`` somewhere on the grid. The grid is then
    padded by one empty layer so surfaces touching the box still close.
    """
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    grid, spacing = occupancy_grid(occupancy, lo, hi, resolution)
    if not (grid.min() < iso < grid.max()):
        raise EmptySurfaceError(f"occupancy never crosses {iso} (range {grid.min():.3g}..{grid.max():.3g})")
    padded = np.pad(grid, 1, constant_values=min(0.0, iso - 1.0))
    verts, faces, _, _ = marching_cubes(padded, level=iso, spacing=tuple(spacing))
    if len(verts) == 0:
        raise EmptySurfaceError("marching cubes produced no vertices")
    return Surface(verts - spacing + lo, faces.astype(np.int64))


def extract_surface(field: FieldNetwork, resolution: int = 64, iso: float = 0.5) -> Surface:
    """Surface of a trained field over its (already 10%-expanded) box, with vertex color and feature."""
    lo, hi = field.bounds
    surf = extract_isosurface(lambda p: field.query(p)[1], lo, hi, resolution, iso)
    c, _, f = field.query(surf.vertices)
    surf.colors, surf.features = c.astype(np.float64), f.astype(np.float64)
    return surf
