"""Per-object supervision views and image-space rendering of trained fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..clustering import ObjectInstance
from ..dataset import Dataset, Intrinsics, project_points
from ..part_features import FeatureImage, frame_feature_image
from .network import FieldNetwork, forward, normalize_points, stack_params
from .render import composite
from .sampling import RayConfig, pixel_rays, sample_depths, slab_range


@dataclass
class ObjectView:
    """Supervision for one object in one frame."""

    frame_index: int
    frame_id: int
    K: Intrinsics
    pose: np.ndarray
    mask: np.ndarray  # (H, W) bool, union of the object's masks in this frame
    bbox: tuple[int, int, int, int]  # u0, v0, u1, v1 inclusive
    depth: np.ndarray
    color: np.ndarray  # (H, W, 3) float in [0, 1]
    features: FeatureImage
    fallback_depth: Optional[float]

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def object_mask(obj: ObjectInstance, dataset: Dataset, frame_index: int) -> np.ndarray:
    fid = dataset.frame_ids[frame_index]
    idx = set(obj.member_frames().get(fid, []))
    mask = np.zeros((dataset.height, dataset.width), dtype=bool)
    for rec in dataset.instance_masks(frame_index):
        if rec.index in idx:
            mask |= rec.mask > 0
    return mask


def mask_bbox(mask: np.ndarray, pad: int = 0) -> tuple[int, int, int, int]:
    v, u = np.nonzero(mask)
    h, w = mask.shape
    return (max(int(u.min()) - pad, 0), max(int(v.min()) - pad, 0),
            min(int(u.max()) + pad, w - 1), min(int(v.max()) + pad, h - 1))


def make_view(obj: ObjectInstance, dataset: Dataset, frame_index: int, bbox_pad: int = 0,
              feature_cache=None, near: float = 0.05) -> ObjectView:
    frame = dataset.frame(frame_index)
    mask = object_mask(obj, dataset, frame_index)
    if not mask.any():
        raise ValueError(f"object {obj.object_id} not observed in frame {frame.frame_id}")
    valid = mask & (frame.depth > near)
    fallback = float(np.median(frame.depth[valid])) if valid.any() else None
    return ObjectView(frame_index, frame.frame_id, frame.intrinsics, frame.pose, mask,
                      mask_bbox(mask, bbox_pad), frame.depth,
                      frame.color.astype(np.float32) / 255.0,
                      frame_feature_image(dataset, frame_index, feature_cache), fallback)


def observing_frames(obj: ObjectInstance, dataset: Dataset) -> list[int]:
    fids = set(obj.member_frames())
    return [i for i, fid in enumerate(dataset.frame_ids) if fid in fids]


def observed_vertices(obj: ObjectInstance, dataset: Dataset, vertices: np.ndarray,
                      tol: float = 0.03) -> np.ndarray:
    """Vertices seen by at least one frame: inside the object mask and within ``tol`` of the depth image."""
    seen = np.zeros(len(vertices), dtype=bool)
    for i in observing_frames(obj, dataset):
        frame = dataset.frame(i)
        uv, z = project_points(vertices, frame.intrinsics, frame.pose)
        u, v = np.round(uv[:, 0]).astype(np.int64), np.round(uv[:, 1]).astype(np.int64)
        ok = (z > 0) & (u >= 0) & (u < dataset.width) & (v >= 0) & (v < dataset.height)
        idx = np.nonzero(ok)[0]
        mask = object_mask(obj, dataset, i)[v[idx], u[idx]]
        d = frame.depth[v[idx], u[idx]]
        seen[idx] |= mask & (d > 0) & (np.abs(z[idx] - d) <= tol)
    return seen


def query_points(fields: Sequence[FieldNetwork], points: np.ndarray):
    """Evaluate ``K`` fields on per-object points ``(K, N, 3)``."""
    params = stack_params(fields)
    center = np.stack([f.center for f in fields])
    half = np.stack([f.half_extent for f in fields])
    x = normalize_points(points, center, half).astype(params["w0"].dtype)
    f0 = fields[0]
    return forward(params, x, f0.n_freqs, f0.n_layers)[:3]


def render_rays_free(field: FieldNetwork, origins: np.ndarray, dirs: np.ndarray,
                     n_samples: int = 128, chunk: int = 4096):
    """Render rays without depth guidance, sampling the field's box uniformly.

    Returns ``(O, D, C, F)``; rays missing the box render as empty.
    """
    lo, hi = field.bounds
    t_in, t_out = slab_range(origins, dirs, lo, hi)
    hit = t_out > t_in
    n = len(origins)
    O, D = np.zeros(n), np.zeros(n)
    C, F = np.zeros((n, 3)), np.zeros((n, field.feat_dim))
    idx = np.nonzero(hit)[0]
    frac = (np.arange(n_samples) + 0.5) / n_samples
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        d = t_in[sel, None] + frac * (t_out - t_in)[sel, None]
        pts = origins[sel, None, :] + d[..., None] * dirs[sel, None, :]
        c, o, f = field.query(pts.reshape(-1, 3))
        r = (len(sel), n_samples)
        res = composite(o.reshape(r).astype(np.float64), d, c.reshape(*r, 3).astype(np.float64),
                        f.reshape(*r, -1).astype(np.float64))
        O[sel], D[sel], C[sel], F[sel] = res[:4]
    return O, D, C, F


def render_rays_guided(field: FieldNetwork, origins: np.ndarray, dirs: np.ndarray,
                       surface: np.ndarray, cfg: RayConfig = RayConfig()):
    """Render with deterministic depth-guided samples (stratum midpoints)."""
    d = sample_depths(surface, cfg, None)
    pts = origins[:, None, :] + d[..., None] * dirs[:, None, :]
    c, o, f = field.query(pts.reshape(-1, 3))
    r = d.shape
    return composite(o.reshape(r).astype(np.float64), d, c.reshape(*r, 3).astype(np.float64),
                     f.reshape(*r, -1).astype(np.float64))[:4]


def render_image(fields: Sequence[FieldNetwork], K: Intrinsics, pose: np.ndarray, height: int,
                 width: int, n_samples: int = 128, min_occupancy: float = 0.5):
    """Composite all object fields into color, depth, feature and object-id images.

    Each pixel takes the nearest object whose rendered occupancy reaches
    ``min_occupancy``; depth is the occupancy-normalized expected depth.
    """
    v, u = np.mgrid[0:height, 0:width]
    origins, dirs = pixel_rays(u.ravel(), v.ravel(), K, np.asarray(pose, dtype=np.float64))
    n = height * width
    feat_dim = fields[0].feat_dim if fields else 0
    color, depth = np.zeros((n, 3)), np.zeros(n)
    feat, occ = np.zeros((n, feat_dim)), np.zeros(n)
    ids = np.full(n, -1, dtype=np.int64)
    for fld in fields:
        O, D, C, F = render_rays_free(fld, origins, dirs, n_samples)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(O > 0, D / O, np.inf)
        take = (O >= min_occupancy) & ((ids < 0) | (z < depth))
        color[take], depth[take], feat[take], occ[take] = C[take], z[take], F[take], O[take]
        ids[take] = fld.object_id
    shape = (height, width)
    return {"color": color.reshape(*shape, 3), "depth": depth.reshape(shape),
            "feature": feat.reshape(*shape, feat_dim), "occupancy": occ.reshape(shape),
            "object_id": ids.reshape(shape)}


def evaluate_view(field: FieldNetwork, view: ObjectView, n_samples: int = 128) -> dict:
    """Masked depth/color errors and feature cosine over every pixel of the object mask.

    Rendering samples the field's box uniformly and does not look at the depth image.
    """
    v, u = np.nonzero(view.mask)
    origins, dirs = pixel_rays(u, v, view.K, view.pose)
    O, D, C, F = render_rays_free(field, origins, dirs, n_samples)
    dvalid = view.depth[v, u] > 0
    feat, cov = view.features.features[v, u], view.features.coverage[v, u] > 0
    nf = np.linalg.norm(F, axis=1) * np.linalg.norm(feat, axis=1)
    cos = np.where(nf > 0, np.sum(F * feat, axis=1) / np.where(nf > 0, nf, 1), 0.0)
    return {
        "n_pixels": int(len(u)),
        "depth_abs": np.abs(D - view.depth[v, u])[dvalid],
        "color_abs": np.abs(C - view.color[v, u]).mean(axis=1),
        "feature_cos": cos[cov],
        "occupancy": O,
    }
