"""Two-stage mask clustering: Louvain on the mask graph, then cluster fusion.

The fine stage fuses coarse clusters whose merged point clouds overlap
(matched-points coverage) and whose averaged color histograms agree. Small
clusters are dropped as outliers.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .louvain import louvain
from .mask_graph import (MaskDescriptor, SimilarityConfig, assemble_similarity,
                         build_mask_graph)

log = logging.getLogger(__name__)

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])


@dataclass(frozen=True)
class FineConfig:
    theta_dist: float = 0.03
    theta_pc: float = 0.5
    theta_pho: float = 0.7

    def __post_init__(self):
        if self.theta_dist <= 0:
            raise ValueError("theta_dist must be positive")
        if not (0 <= self.theta_pc <= 1 and 0 <= self.theta_pho <= 1):
            raise ValueError("theta_pc and theta_pho must lie in [0, 1]")


class VoxelHash:
    """Uniform grid over a point cloud for fixed-radius neighbor tests.

    With cell size equal to the query radius, every neighbor within the
    radius lies in one of the 27 cells around the query's cell.
    """

    def __init__(self, points: np.ndarray, cell: float):
        self.points = np.asarray(points, dtype=np.float64)
        self.cell = float(cell)
        ijk = np.floor(self.points / self.cell).astype(np.int64)
        self.origin = ijk.min(axis=0) - 1
        self.dims = ijk.max(axis=0) - self.origin + 2
        keys = self._keys(ijk)
        order = np.argsort(keys, kind="stable")
        self.sorted_points = self.points[order]
        self.cell_keys, self.starts, counts = np.unique(keys[order], return_index=True, return_counts=True)
        self.ends = self.starts + counts

    def _keys(self, ijk: np.ndarray) -> np.ndarray:
        rel = ijk - self.origin
        return (rel[:, 0] * self.dims[1] + rel[:, 1]) * self.dims[2] + rel[:, 2]

    def has_neighbor(self, queries: np.ndarray, radius: Optional[float] = None,
                     chunk: int = 4096) -> np.ndarray:
        """Boolean per query: some indexed point lies strictly within ``radius``."""
        radius = self.cell if radius is None else radius
        if radius > self.cell:
            raise ValueError("radius cannot exceed the cell size")
        out = np.zeros(len(queries), dtype=bool)
        r2 = radius * radius
        for s in range(0, len(queries), chunk):
            q = np.asarray(queries[s:s + chunk], dtype=np.float64)
            base = np.floor(q / self.cell).astype(np.int64)
            found = np.zeros(len(q), dtype=bool)
            for off in _OFFSETS:
                ijk = base + off
                rel = ijk - self.origin
                inside = np.all((rel >= 0) & (rel < self.dims), axis=1) & ~found
                if not inside.any():
                    continue
                qi = np.nonzero(inside)[0]
                keys = self._keys(ijk[qi])
                pos = np.searchsorted(self.cell_keys, keys)
                pos_c = np.minimum(pos, len(self.cell_keys) - 1)
                hit = self.cell_keys[pos_c] == keys
                qi, pos_c = qi[hit], pos_c[hit]
                if len(qi) == 0:
                    continue
                counts = self.ends[pos_c] - self.starts[pos_c]
                owner = np.repeat(qi, counts)
                offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
                pidx = np.repeat(self.starts[pos_c], counts) + offsets
                d2 = np.sum((self.sorted_points[pidx] - q[owner]) ** 2, axis=1)
                close = owner[d2 < r2]
                found[close] = True
            out[s:s + chunk] = found
        return out


def coverage_rate(a: np.ndarray, b: np.ndarray, theta_dist: float) -> float:
    """Fraction of the smaller cloud whose nearest neighbor in the other is closer than ``theta_dist``."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty point cloud")
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    return float(VoxelHash(big, theta_dist).has_neighbor(small).mean())


@dataclass
class Cluster:
    members: list[int]  # descriptor indices, ascending
    points: np.ndarray
    hist: np.ndarray


@dataclass
class ClusterSet:
    clusters: list[Cluster]
    n_total: int

    def labels(self) -> np.ndarray:
        """Cluster index per descriptor, -1 for dropped masks."""
        out = np.full(self.n_total, -1, dtype=np.int64)
        for c, cl in enumerate(self.clusters):
            out[cl.members] = c
        return out

    def __len__(self) -> int:
        return len(self.clusters)


def make_cluster(members: Sequence[int], descriptors: Sequence[MaskDescriptor]) -> Cluster:
    members = sorted(int(m) for m in members)
    points = np.concatenate([descriptors[m].points for m in members])
    hist = np.mean([descriptors[m].hist for m in members], axis=0)
    return Cluster(members, points, hist / np.linalg.norm(hist))


def clusters_from_labels(labels: np.ndarray, descriptors: Sequence[MaskDescriptor]) -> ClusterSet:
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        if lab >= 0:
            groups.setdefault(int(lab), []).append(i)
    ordered = sorted(groups.values(), key=lambda m: m[0])
    return ClusterSet([make_cluster(m, descriptors) for m in ordered], len(descriptors))


def _boxes_near(a: np.ndarray, b: np.ndarray, pad: float) -> bool:
    return bool(np.all(a.min(axis=0) - pad <= b.max(axis=0)) and np.all(b.min(axis=0) - pad <= a.max(axis=0)))


def fine_merge(clusters: ClusterSet, cfg: FineConfig,
               descriptors: Sequence[MaskDescriptor]) -> ClusterSet:
    """Fuse cluster pairs exceeding both coverage and color thresholds.

    Pairs are evaluated once against the input clusters; qualifying pairs are
    unioned (transitively) in descending-coverage order, and merged clouds and
    histograms are rebuilt at the end.
    """
    cl = clusters.clusters
    n = len(cl)
    hashes: dict[int, VoxelHash] = {}
    candidates = []
    for i in range(n):
        for j in range(i + 1, n):
            pho = float(cl[i].hist @ cl[j].hist)
            if pho <= cfg.theta_pho or not _boxes_near(cl[i].points, cl[j].points, cfg.theta_dist):
                continue
            small, big = (i, j) if len(cl[i].points) <= len(cl[j].points) else (j, i)
            if big not in hashes:
                hashes[big] = VoxelHash(cl[big].points, cfg.theta_dist)
            cov = float(hashes[big].has_neighbor(cl[small].points).mean())
            if cov > cfg.theta_pc:
                candidates.append((cov, i, j))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for cov, i, j in sorted(candidates, key=lambda c: (-c[0], c[1], c[2])):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
            log.debug("fine merge %d + %d (coverage %.3f)", i, j, cov)
    if not candidates:
        return clusters
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).extend(cl[i].members)
    merged = sorted(groups.values(), key=min)
    return ClusterSet([make_cluster(m, descriptors) for m in merged], clusters.n_total)


def outlier_threshold(n_total: int) -> int:
    return max(1, math.ceil(n_total / 500))


def filter_outliers(clusters: ClusterSet, n_total: Optional[int] = None) -> ClusterSet:
    n_total = clusters.n_total if n_total is None else n_total
    keep = [c for c in clusters.clusters if len(c.members) >= outlier_threshold(n_total)]
    return ClusterSet(keep, clusters.n_total)


@dataclass
class ObjectInstance:
    """One clustered object: its member masks and merged geometry."""

    object_id: int
    members: list[tuple[int, int]]  # (frame id, mask index)
    descriptor_indices: list[int]
    points: np.ndarray
    hist: np.ndarray
    gt_id: Optional[int] = None  # majority generator id, synthetic data only
    summary: Optional[object] = None
    field: Optional[object] = None

    @property
    def bbox(self) -> np.ndarray:
        return np.stack([self.points.min(axis=0), self.points.max(axis=0)])

    def member_frames(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for fid, idx in self.members:
            out.setdefault(fid, []).append(idx)
        return out


@dataclass
class ClusteringResult:
    objects: list[ObjectInstance]
    coarse: ClusterSet
    fine: ClusterSet
    similarity: Optional[np.ndarray] = field(default=None, repr=False)
    n_edges: int = 0


def _majority_gt(members: Sequence[int], descriptors: Sequence[MaskDescriptor]) -> Optional[int]:
    ids = [descriptors[m].gt_id for m in members if descriptors[m].gt_id is not None]
    if not ids:
        return None
    vals, counts = np.unique(ids, return_counts=True)
    return int(vals[np.argmax(counts)])


def cluster_pipeline(descriptors: Sequence[MaskDescriptor], sim_cfg: SimilarityConfig = SimilarityConfig(),
                     fine_cfg: FineConfig = FineConfig(), seed: int = 0,
                     keep_similarity: bool = False) -> ClusteringResult:
    """similarity -> graph -> Louvain -> fine merge -> outlier filter."""
    if not descriptors:
        raise ValueError("no mask descriptors to cluster")
    S = assemble_similarity(sim_cfg, descriptors)
    graph = build_mask_graph(S, sim_cfg.theta_mask)
    labels = louvain(graph, seed=seed)
    coarse = clusters_from_labels(labels, descriptors)
    fine = fine_merge(coarse, fine_cfg, descriptors)
    kept = filter_outliers(fine, len(descriptors))
    log.info("clustering: %d masks, %d edges, %d coarse, %d fine, %d kept",
             len(descriptors), len(graph.edges), len(coarse), len(fine), len(kept))
    objects = []
    for k, c in enumerate(kept.clusters):
        members = [descriptors[m].key for m in c.members]
        objects.append(ObjectInstance(k, members, list(c.members), c.points, c.hist,
                                      gt_id=_majority_gt(c.members, descriptors)))
    return ClusteringResult(objects, coarse, fine, S if keep_similarity else None, len(graph.edges))


def write_objects_json(path: str | PathLike, objects: Sequence[ObjectInstance]) -> None:
    data = {"objects": [
        {"id": o.object_id, "members": [[int(f), int(m)] for f, m in o.members],
         "bbox": o.bbox.tolist(),
         **({"gt_id": o.gt_id} if o.gt_id is not None else {})}
        for o in objects]}
    Path(path).write_text(json.dumps(data, indent=1), encoding="utf-8")


def read_objects_json(path: str | PathLike) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))["objects"]
