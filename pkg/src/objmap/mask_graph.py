"""Per-mask descriptors, the fused similarity matrix and the thresholded mask graph."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .dataset import Dataset, DatasetError, MaskRecord, backproject_mask

log = logging.getLogger(__name__)

HIST_BINS = 32
MAX_CLOUD_POINTS = 4096


@dataclass
class MaskDescriptor:
    frame_index: int  # position in the dataset's frame order
    frame_id: int
    mask_index: int
    points: np.ndarray  # (n, 3) world coordinates
    bbox: np.ndarray  # (2, 3): min row, max row
    hist: np.ndarray  # (96,) unit L2
    clip: np.ndarray
    cap: Optional[np.ndarray]
    gt_id: Optional[int] = None
    area: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return self.frame_id, self.mask_index


@dataclass(frozen=True)
class SimilarityConfig:
    w_geo: float = 0.25
    w_pho: float = 0.25
    w_clip: float = 0.25
    w_cap: float = 0.25
    theta_mask: float = 0.6

    def __post_init__(self):
        w = self.weights
        if any(x < 0 for x in w):
            raise ValueError(f"similarity weights must be non-negative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"similarity weights must sum to 1, got {sum(w):.12g}")

    @property
    def weights(self) -> tuple[float, float, float, float]:
        return self.w_geo, self.w_pho, self.w_clip, self.w_cap


@dataclass
class MaskGraph:
    n_nodes: int
    edges: np.ndarray  # (E, 2) int64, i < j
    weights: np.ndarray  # (E,) float64

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric weighted adjacency without self-loops."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        a = sparse.coo_matrix((np.r_[self.weights, self.weights], (np.r_[i, j], np.r_[j, i])),
                              shape=(self.n_nodes, self.n_nodes))
        return a.tocsr()


def compute_color_histogram(color: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """32 bins per channel over [0, 256), concatenated R|G|B and L2-normalized."""
    sel = mask > 0
    if not sel.any():
        raise ValueError("empty mask")
    px = color[sel].astype(np.int64) // (256 // HIST_BINS)
    hist = np.concatenate([np.bincount(px[:, c], minlength=HIST_BINS) for c in range(3)])
    hist = hist.astype(np.float64)
    return hist / np.linalg.norm(hist)


def trimmed_bbox(points: np.ndarray, trim_quantile: float = 0.02) -> np.ndarray:
    """Per-axis ``[q, 1 - q]`` quantile box, shape ``(2, 3)``."""
    if len(points) == 0:
        raise ValueError("empty point cloud")
    if not 0 <= trim_quantile < 0.5:
        raise ValueError("trim_quantile must lie in [0, 0.5)")
    if trim_quantile == 0:
        return np.stack([points.min(axis=0), points.max(axis=0)])
    return np.quantile(points, [trim_quantile, 1 - trim_quantile], axis=0)


def bbox_iou_3d(a: np.ndarray, b: np.ndarray) -> float:
    return float(_iou_matrix(a[None], b[None])[0, 0])


def _iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between box sets ``a (n, 2, 3)`` and ``b (m, 2, 3)``."""
    lo = np.maximum(a[:, None, 0], b[None, :, 0])
    hi = np.minimum(a[:, None, 1], b[None, :, 1])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    va = np.prod(a[:, 1] - a[:, 0], axis=-1)
    vb = np.prod(b[:, 1] - b[:, 0], axis=-1)
    union = va[:, None] + vb[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    degenerate = union <= 0
    if degenerate.any():
        same = np.all(a[:, None] == b[None, :], axis=(-1, -2))
        iou = np.where(degenerate & same, 1.0, iou)
    return np.clip(iou, 0.0, 1.0)


def subsample_points(points: np.ndarray, limit: int = MAX_CLOUD_POINTS) -> np.ndarray:
    if len(points) <= limit:
        return points
    idx = np.linspace(0, len(points) - 1, limit).round().astype(np.int64)
    return points[idx]


def describe_mask(dataset: Dataset, frame_index: int, rec: MaskRecord,
                  trim_quantile: float = 0.02) -> MaskDescriptor:
    frame = dataset.frame(frame_index)
    pts = backproject_mask(rec.mask, frame.depth, frame.intrinsics, frame.pose)
    pts = subsample_points(pts)
    return MaskDescriptor(
        frame_index=frame_index, frame_id=rec.frame_id, mask_index=rec.index, points=pts,
        bbox=trimmed_bbox(pts, trim_quantile), hist=compute_color_histogram(frame.color, rec.mask),
        clip=rec.clip.astype(np.float64), cap=None if rec.cap is None else rec.cap.astype(np.float64),
        gt_id=rec.gt_id, area=int(rec.mask.sum()))


def compute_descriptors(dataset: Dataset, trim_quantile: float = 0.02,
                        threads: int = 1) -> list[MaskDescriptor]:
    """Descriptors for every instance mask, in frame order then mask order.

    Masks without any valid depth are skipped with a warning.
    """
    def one_frame(i):
        out = []
        for rec in dataset.instance_masks(i):
            try:
                out.append(describe_mask(dataset, i, rec, trim_quantile))
            except DatasetError as exc:
                log.warning("skipping frame %d mask %d: %s", rec.frame_id, rec.index, exc)
        return out

    idx = range(len(dataset))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_frame = list(pool.map(one_frame, idx))
    else:
        per_frame = [one_frame(i) for i in idx]
    return [d for frame in per_frame for d in frame]


def _clamped_cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    y = y / np.linalg.norm(y, axis=1, keepdims=True)
    return np.clip(x @ y.T, 0.0, 1.0)


def component_similarities(descriptors: Sequence[MaskDescriptor], rows: slice = slice(None)):
    """The four component matrices for a block of rows against all masks."""
    boxes = np.stack([d.bbox for d in descriptors])
    hists = np.stack([d.hist for d in descriptors])
    clips = np.stack([d.clip for d in descriptors])
    geo = _iou_matrix(boxes[rows], boxes)
    pho = np.clip(hists[rows] @ hists.T, 0.0, 1.0)
    sim_clip = _clamped_cosine(clips[rows], clips)
    if all(d.cap is not None for d in descriptors):
        caps = np.stack([d.cap for d in descriptors])
        sim_cap = _clamped_cosine(caps[rows], caps)
    else:
        sim_cap = np.zeros_like(sim_clip)
    return geo, pho, sim_clip, sim_cap


def combine_similarities(cfg: SimilarityConfig, geo, pho, clip, cap) -> np.ndarray:
    return cfg.w_geo * geo + cfg.w_pho * pho + cfg.w_clip * clip + cfg.w_cap * cap


def assemble_similarity(cfg: SimilarityConfig, descriptors: Sequence[MaskDescriptor],
                        block: int = 2048) -> np.ndarray:
    """Dense ``(N, N)`` fused similarity with unit diagonal."""
    n = len(descriptors)
    S = np.empty((n, n))
    for start in range(0, n, block):
        rows = slice(start, min(start + block, n))
        S[rows] = combine_similarities(cfg, *component_similarities(descriptors, rows))
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


def build_mask_graph(S: np.ndarray, theta_mask: float) -> MaskGraph:
    i, j = np.triu_indices(len(S), k=1)
    keep = S[i, j] > theta_mask
    edges = np.stack([i[keep], j[keep]], axis=1).astype(np.int64)
    return MaskGraph(len(S), edges, S[i[keep], j[keep]].astype(np.float64))
