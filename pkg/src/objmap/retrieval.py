"""Object summaries, object/part queries, label-argmax segmentation and metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .tensor_io import read_tensor, write_tensor


@dataclass
class ObjectSummary:
    object_id: int
    clip: np.ndarray
    cap: Optional[np.ndarray]
    n_members: int
    centroid: np.ndarray


@dataclass
class QueryResult:
    ranking: list[tuple[int, float]]

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.ranking]


@dataclass
class PartQueryResult:
    scores: np.ndarray
    best_index: int
    best_point: np.ndarray


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def largest_cluster_mean(vectors: np.ndarray, cutoff: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """Unit mean of the largest single-linkage cluster under cosine distance.

    Two vectors share a cluster when a chain of pairs with cosine distance
    ``<= cutoff`` connects them. Ties between equally large clusters go to the
    one holding the lowest index. Returns ``(summary, member_indices)``.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) == 0:
        raise ValueError("no member embeddings")
    if len(vectors) == 1:
        return _unit_rows(vectors[0]), np.array([0])
    dist = np.clip(pdist(_unit_rows(vectors), metric="cosine"), 0.0, None)
    labels = fcluster(linkage(dist, method="single"), t=cutoff, criterion="distance")
    best, best_key = None, None
    for lab in np.unique(labels):
        idx = np.nonzero(labels == lab)[0]
        key = (-len(idx), idx[0])
        if best_key is None or key < best_key:
            best, best_key = idx, key
    return _unit_rows(vectors[best].mean(axis=0)), best


def aggregate_object_summary(object_id: int, clips: np.ndarray, caps: Optional[np.ndarray],
                             points: Optional[np.ndarray] = None, cutoff: float = 0.15) -> ObjectSummary:
    clip, _ = largest_cluster_mean(clips, cutoff)
    cap = None if caps is None else largest_cluster_mean(caps, cutoff)[0]
    centroid = np.zeros(3) if points is None or len(points) == 0 else points.mean(axis=0)
    return ObjectSummary(object_id, clip, cap, len(clips), centroid)


def _cos(q: np.ndarray, m: np.ndarray) -> np.ndarray:
    return _unit_rows(m) @ _unit_rows(q)


def query_objects(summaries: Sequence[ObjectSummary], q_clip: Optional[np.ndarray] = None,
                  q_cap: Optional[np.ndarray] = None, fusion: str = "max",
                  clip_weight: float = 0.5) -> QueryResult:
    """Rank objects by similarity to the query pair.

    ``fusion="max"`` scores each object by the larger of the two cosines;
    ``"weighted"`` uses ``clip_weight * cos_clip + (1 - clip_weight) * cos_cap``.
    A missing half is ignored. Ties rank the lower object id first.
    """
    if q_clip is None and q_cap is None:
        raise ValueError("query needs a clip or caption embedding")
    ids = np.array([s.object_id for s in summaries])
    scores = []
    if q_clip is not None:
        mat = np.stack([s.clip for s in summaries])
        if mat.shape[1] != len(q_clip):
            raise ValueError(f"clip query dim {len(q_clip)} != {mat.shape[1]}")
        scores.append(_cos(q_clip, mat))
    if q_cap is not None:
        if any(s.cap is None for s in summaries):
            raise ValueError("summaries carry no caption embeddings")
        mat = np.stack([s.cap for s in summaries])
        if mat.shape[1] != len(q_cap):
            raise ValueError(f"caption query dim {len(q_cap)} != {mat.shape[1]}")
        scores.append(_cos(q_cap, mat))
    if len(scores) == 1:
        score = scores[0]
    elif fusion == "max":
        score = np.maximum(*scores)
    elif fusion == "weighted":
        score = clip_weight * scores[0] + (1 - clip_weight) * scores[1]
    else:
        raise ValueError(f"unknown fusion {fusion!r}")
    order = np.lexsort((ids, -score))
    return QueryResult([(int(ids[i]), float(score[i])) for i in order])


def query_part(field, query: np.ndarray, surface_points: np.ndarray) -> PartQueryResult:
    """Cosine between ``query`` and the field's feature at each surface point."""
    if getattr(field, "trained_steps", 1) == 0:
        raise ValueError("field has not been trained")
    if surface_points is None or len(surface_points) == 0:
        raise ValueError("empty surface")
    _, _, feats = field.query(np.asarray(surface_points, dtype=np.float64))
    scores = _cos(query, feats)
    best = int(np.argmax(scores))
    return PartQueryResult(scores, best, np.asarray(surface_points[best]))


def semantic_segment(features: np.ndarray, label_embeddings: np.ndarray,
                     floor: float = -np.inf) -> np.ndarray:
    """Label index of highest cosine per element; ``-1`` where the best score is below ``floor``."""
    sims = _unit_rows(features) @ _unit_rows(label_embeddings).T
    labels = np.argmax(sims, axis=1)
    labels[sims[np.arange(len(sims)), labels] < floor] = -1
    return labels


@dataclass
class SegMetrics:
    miou: float
    macc: float
    iou: np.ndarray  # per class, nan if absent from GT
    acc: np.ndarray
    confusion: np.ndarray


def compute_miou_macc(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> SegMetrics:
    """Class-mean IoU and accuracy over classes present in ``gt``.

    Predictions of ``-1`` (unlabeled) count as misses.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    # extra column collects unlabeled predictions
    p = np.where(pred < 0, n_classes, pred)
    conf = np.bincount(gt * (n_classes + 1) + p, minlength=n_classes * (n_classes + 1))
    conf = conf.reshape(n_classes, n_classes + 1)
    tp = np.diag(conf[:, :n_classes]).astype(np.float64)
    gt_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf[:, :n_classes].sum(axis=0).astype(np.float64)
    present = gt_count > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(present, tp / (gt_count + pred_count - tp), np.nan)
        acc = np.where(present, tp / gt_count, np.nan)
    if not present.any():
        raise ValueError("ground truth is empty")
    return SegMetrics(float(np.nanmean(iou)), float(np.nanmean(acc)), iou, acc, conf)


def recall_at_k(ranked_ids: Sequence[int], gt_id, k: int) -> int:
    """1 if ``gt_id`` (or any id in a set of acceptable ids) is among the first ``k``."""
    ok = set(gt_id) if isinstance(gt_id, (set, frozenset, list, tuple)) else {gt_id}
    return int(any(i in ok for i in list(ranked_ids)[:k]))


def load_label_remap(path: str | PathLike, n_classes: int) -> np.ndarray:
    """Lookup array from a JSON ``{"old": new, ...}`` class merge file; unmapped ids keep their value."""
    table = np.arange(n_classes)
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for old, new in data.items():
        table[int(old)] = int(new)
    return table


def write_summaries(directory: str | PathLike, summaries: Sequence[ObjectSummary]) -> None:
    """``summaries.obnt`` rows are ``[clip | cap]``; ``summaries.json`` holds the rest."""
    directory = Path(directory)
    rows = [np.concatenate([s.clip, s.cap if s.cap is not None else []]) for s in summaries]
    write_tensor(directory / "summaries.obnt", np.stack(rows).astype(np.float32))
    meta = {"D_e": int(len(summaries[0].clip)),
            "D_c": int(0 if summaries[0].cap is None else len(summaries[0].cap)),
            "objects": [{"id": s.object_id, "n_members": s.n_members,
                         "centroid": [round(float(x), 9) for x in s.centroid]} for s in summaries]}
    (directory / "summaries.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def read_summaries(directory: str | PathLike) -> list[ObjectSummary]:
    directory = Path(directory)
    meta = json.loads((directory / "summaries.json").read_text(encoding="utf-8"))
    rows = read_tensor(directory / "summaries.obnt").astype(np.float64)
    de, dc = meta["D_e"], meta["D_c"]
    return [ObjectSummary(o["id"], rows[i, :de], rows[i, de:de + dc] if dc else None,
                          o["n_members"], np.asarray(o["centroid"]))
            for i, o in enumerate(meta["objects"])]
