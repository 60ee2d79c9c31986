"""Dense part-level feature images from (possibly nested) part masks."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, MaskRecord
from .tensor_io import read_tensor, write_tensor


@dataclass
class FeatureImage:
    features: np.ndarray  # (H, W, D) float32
    coverage: np.ndarray  # (H, W) uint8

    def lookup(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.features[v, u], self.coverage[v, u] > 0


def composite_feature_image(masks: Sequence[np.ndarray], embeddings: Sequence[np.ndarray],
                            height: int, width: int, dim: int) -> FeatureImage:
    """Per pixel, the mean embedding of all masks covering it; zero where uncovered."""
    if len(masks) != len(embeddings):
        raise ValueError("need one embedding per mask")
    acc = np.zeros((height, width, dim), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)
    for m, f in zip(masks, embeddings):
        f = np.asarray(f, dtype=np.float64)
        if m.shape != (height, width):
            raise ValueError(f"mask shape {m.shape} != {(height, width)}")
        if f.shape != (dim,):
            raise ValueError(f"embedding dim {f.shape} != ({dim},)")
        sel = m > 0
        acc[sel] += f
        count[sel] += 1
    covered = count > 0
    acc[covered] /= count[covered, None]
    return FeatureImage(acc.astype(np.float32), covered.astype(np.uint8))


def feature_target(image: FeatureImage, pixel: tuple[int, int]) -> tuple[np.ndarray, bool]:
    """Supervision vector at ``pixel = (u, v)`` and whether any part mask covers it."""
    u, v = pixel
    h, w = image.coverage.shape
    if not (0 <= u < w and 0 <= v < h):
        raise IndexError(f"pixel {pixel} outside {w}x{h} image")
    return image.features[v, u], bool(image.coverage[v, u])


def frame_feature_image(dataset: Dataset, frame_index: int,
                        cache_dir: Optional[str | PathLike] = None) -> FeatureImage:
    """Composite a frame's part masks, optionally caching as ``feat_<t>.obnt``.

    The cache stores the features with an extra trailing coverage channel.
    """
    fid = dataset.frame_ids[frame_index]
    path = Path(cache_dir) / f"feat_{fid}.obnt" if cache_dir is not None else None
    if path is not None and path.exists():
        blob = read_tensor(path)
        return FeatureImage(np.ascontiguousarray(blob[..., :-1]), (blob[..., -1] > 0).astype(np.uint8))
    parts: list[MaskRecord] = dataset.part_masks(frame_index)
    img = composite_feature_image([p.mask for p in parts], [p.clip for p in parts],
                                  dataset.height, dataset.width, dataset.D_e)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_tensor(path, np.concatenate([img.features, img.coverage[..., None].astype(np.float32)], axis=-1))
    return img
