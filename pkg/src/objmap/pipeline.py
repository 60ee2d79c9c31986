"""Stage drivers shared by the command line and the demos.

Every stage reads its inputs from the output directory written by earlier
stages, writes its own artifacts there, and returns a JSON-serializable
result dictionary with no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .clustering import (FineConfig, ObjectInstance, cluster_pipeline, read_objects_json,
                         write_objects_json)
from .dataset import Dataset, load_manifest
from .fields import LossWeights, RayConfig, TrainConfig, train_objects
from .fields.checkpoint import load_fields, save_fields, write_training_log
from .fields.network import FieldNetwork
from .fields.surface import Surface, extract_surface
from .fields.views import evaluate_view, make_view, observed_vertices, render_image
from .mask_graph import SimilarityConfig, compute_descriptors
from .retrieval import (aggregate_object_summary, compute_miou_macc, load_label_remap,
                        query_objects, query_part, read_summaries, recall_at_k, semantic_segment,
                        write_summaries)
from .synthetic import shape_distance
from .tensor_io import read_checkpoint, read_tensor, write_checkpoint, write_tensor

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; the command line exits with status 2."""


class PipelineError(RuntimeError):
    """A stage could not run on valid configuration; exit status 1."""


@dataclass
class SurfaceConfig:
    resolution: int = 64
    iso: float = 0.5


@dataclass
class RetrievalConfig:
    cutoff: float = 0.15
    fusion: str = "max"
    clip_weight: float = 0.5
    # part queries score only surface vertices some frame observed (None: all vertices)
    observed_tol: Optional[float] = 0.03


@dataclass
class SegmentationConfig:
    floor: Optional[float] = None
    label_remap: Optional[str] = None
    render_samples: int = 128


@dataclass
class PipelineConfig:
    dataset: Optional[str] = None
    output: str = "out"
    seed: int = 0
    threads: int = 1
    trim_quantile: float = 0.02
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    fine: FineConfig = field(default_factory=FineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)

    @property
    def out(self) -> Path:
        return Path(self.output)

    def load_dataset(self) -> Dataset:
        if not self.dataset:
            raise ConfigError("no dataset path given")
        if not (Path(self.dataset) / "manifest.json").exists():
            raise ConfigError(f"dataset {self.dataset!r} has no manifest.json")
        return load_manifest(self.dataset)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {
    PipelineConfig: {"similarity": SimilarityConfig, "fine": FineConfig, "train": TrainConfig,
                     "surface": SurfaceConfig, "retrieval": RetrievalConfig,
                     "segmentation": SegmentationConfig},
    TrainConfig: {"ray": RayConfig, "weights": LossWeights},
}


def _build(cls, data: dict, where: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(data: Optional[dict] = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Config from a dict plus ``dotted.key=value`` overrides (overrides win)."""
    merged = json.loads(json.dumps(data or {}))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        node = merged
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p} is not a section")
        node[parts[-1]] = _parse_value(text)
    cfg = _build(PipelineConfig, merged)
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.retrieval.fusion not in ("max", "weighted"):
        raise ConfigError(f"retrieval.fusion must be 'max' or 'weighted', got {cfg.retrieval.fusion!r}")
    if cfg.train.steps < 0 or cfg.train.rays_per_object < 1:
        raise ConfigError("train.steps must be >= 0 and train.rays_per_object >= 1")
    return cfg


def load_config(path: Optional[str | PathLike], overrides: Sequence[str] = ()) -> PipelineConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
    return build_config(data, overrides)


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _f(x) -> float:
    return float(np.float64(x))


# ---------------------------------------------------------------------------
# clustering

def run_cluster(cfg: PipelineConfig, dump_similarity: bool = False) -> dict:
    ds = cfg.load_dataset()
    desc = compute_descriptors(ds, cfg.trim_quantile, cfg.threads)
    if not desc:
        raise PipelineError("dataset has no usable instance masks")
    res = cluster_pipeline(desc, cfg.similarity, cfg.fine, cfg.seed, keep_similarity=dump_similarity)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for obj in res.objects:
        clips = np.stack([desc[i].clip for i in obj.descriptor_indices])
        caps = [desc[i].cap for i in obj.descriptor_indices]
        caps = None if any(c is None for c in caps) else np.stack(caps)
        obj.summary = aggregate_object_summary(obj.object_id, clips, caps, obj.points, cfg.retrieval.cutoff)
        summaries.append(obj.summary)
    write_objects_json(out / "objects.json", res.objects)
    if summaries:
        write_summaries(out, summaries)
    if dump_similarity:
        write_tensor(out / "similarity.obnt", res.similarity)

    result = {"stage": "cluster", "n_masks": len(desc), "n_edges": int(res.n_edges),
              "n_coarse": len(res.coarse), "n_fine": len(res.fine), "n_objects": len(res.objects),
              "objects": [{"id": o.object_id, "n_members": len(o.members),
                           "bbox": o.bbox.tolist()} for o in res.objects]}
    gt = [d.gt_id for d in desc]
    if all(g is not None for g in gt):
        assigned = [(o.gt_id, desc[i].gt_id) for o in res.objects for i in o.descriptor_indices]
        agree = sum(a == b for a, b in assigned)
        result["gt"] = {
            "agreement": agree / len(desc),
            "unique": len({o.gt_id for o in res.objects}) == len(res.objects),
            "n_gt_objects": len(set(gt)),
        }
    write_json(out / "result.json", result)
    return result


def load_objects(cfg: PipelineConfig) -> list[ObjectInstance]:
    """Objects from ``objects.json``; geometry is reduced to the bbox corners."""
    path = cfg.out / "objects.json"
    if not path.exists():
        raise PipelineError(f"{path} missing; run the cluster stage first")
    objs = []
    for o in read_objects_json(path):
        objs.append(ObjectInstance(o["id"], [tuple(m) for m in o["members"]], [],
                                   np.asarray(o["bbox"], dtype=np.float64), np.zeros(96),
                                   gt_id=o.get("gt_id")))
    return objs


# ---------------------------------------------------------------------------
# training

def _train_config(cfg: PipelineConfig) -> TrainConfig:
    return dataclasses.replace(cfg.train, seed=cfg.seed)


def run_train(cfg: PipelineConfig, eval_samples: int = 128) -> dict:
    ds = cfg.load_dataset()
    objects = load_objects(cfg)
    if not objects:
        raise PipelineError("no objects to train")
    tcfg = _train_config(cfg)
    cache = cfg.out / "feature_cache"
    res = train_objects(objects, ds, tcfg, feature_cache=cache)
    save_fields(cfg.out / "checkpoints", res.fields)
    write_training_log(cfg.out / "training_log.csv", res.history, [o.object_id for o in objects])

    per_object = []
    for k, (obj, fld, kf) in enumerate(zip(objects, res.fields, res.keyframes)):
        depth, color, cos = [], [], []
        for i in kf:
            ev = evaluate_view(fld, make_view(obj, ds, i, near=tcfg.ray.near, feature_cache=cache),
                               eval_samples)
            depth.append(ev["depth_abs"])
            color.append(ev["color_abs"])
            cos.append(ev["feature_cos"])
        depth, color, cos = (np.concatenate(x) for x in (depth, color, cos))
        per_object.append({
            "id": obj.object_id, "keyframes": [ds.frame_ids[i] for i in kf],
            "final_loss": [_f(x) for x in res.history[-1, k]] if tcfg.steps else None,
            "depth_mae": _f(depth.mean()) if len(depth) else None,
            "color_mae": _f(color.mean()) if len(color) else None,
            "feature_cos": _f(cos.mean()) if len(cos) else None,
            "empty_term_steps": res.empty_terms[k].tolist(),
        })
    result = {"stage": "train", "steps": tcfg.steps, "objects": per_object}
    write_json(cfg.out / "result.json", result)
    return result


def load_trained_fields(cfg: PipelineConfig) -> list[FieldNetwork]:
    fields = load_fields(cfg.out / "checkpoints")
    if not fields:
        raise PipelineError(f"no checkpoints under {cfg.out / 'checkpoints'}; run the train stage first")
    return fields


# ---------------------------------------------------------------------------
# rendering and surfaces

def run_render(cfg: PipelineConfig, frame: int = 0, n_samples: int = 128) -> dict:
    ds = cfg.load_dataset()
    fields = load_trained_fields(cfg)
    if not 0 <= frame < len(ds):
        raise ConfigError(f"frame index {frame} outside 0..{len(ds) - 1}")
    img = render_image(fields, ds.intrinsics[frame], ds.poses[frame], ds.height, ds.width, n_samples)
    fid = ds.frame_ids[frame]
    out = cfg.out / "render"
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / f"color_{fid}.obnt", np.round(np.clip(img["color"], 0, 1) * 255).astype(np.uint8))
    write_tensor(out / f"depth_{fid}.obnt", img["depth"].astype(np.float32))
    write_tensor(out / f"feature_{fid}.obnt", img["feature"].astype(np.float32))
    write_tensor(out / f"object_id_{fid}.obnt", img["object_id"].astype(np.int32))
    frame_rec = ds.frame(frame)
    hit = img["object_id"] >= 0
    valid = hit & (frame_rec.depth > 0)
    result = {"stage": "render", "frame_id": fid, "n_pixels_covered": int(hit.sum()),
              "depth_mae_covered": _f(np.abs(img["depth"] - frame_rec.depth)[valid].mean()) if valid.any() else None}
    write_json(cfg.out / "result.json", result)
    return result


def surface_path(cfg: PipelineConfig, object_id: int) -> Path:
    return cfg.out / "surfaces" / f"object_{object_id}.obck"


def save_surface(path: Path, object_id: int, surf: Surface) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(path, {"object_id": object_id},
                     {"vertices": surf.vertices, "faces": surf.faces.astype(np.int32),
                      "colors": surf.colors.astype(np.float32), "features": surf.features.astype(np.float32)})


def load_surface(path: Path) -> Surface:
    _, t = read_checkpoint(path)
    return Surface(t["vertices"], t["faces"].astype(np.int64), t["colors"].astype(np.float64),
                   t["features"].astype(np.float64))


def run_extract_surface(cfg: PipelineConfig) -> dict:
    fields = load_trained_fields(cfg)
    rows = []
    for fld in fields:
        try:
            surf = extract_surface(fld, cfg.surface.resolution, cfg.surface.iso)
        except ValueError as exc:
            log.warning("object %d: %s", fld.object_id, exc)
            rows.append({"id": fld.object_id, "n_vertices": 0, "n_faces": 0, "error": str(exc)})
            continue
        save_surface(surface_path(cfg, fld.object_id), fld.object_id, surf)
        rows.append({"id": fld.object_id, "n_vertices": len(surf.vertices), "n_faces": len(surf.faces),
                     "bbox": [surf.vertices.min(axis=0).tolist(), surf.vertices.max(axis=0).tolist()]})
    result = {"stage": "extract-surface", "resolution": cfg.surface.resolution, "objects": rows}
    write_json(cfg.out / "result.json", result)
    return result


def load_surfaces(cfg: PipelineConfig) -> dict[int, Surface]:
    out = {}
    for p in sorted((cfg.out / "surfaces").glob("object_*.obck")):
        out[int(p.stem.split("_")[1])] = load_surface(p)
    if not out:
        raise PipelineError("no extracted surfaces; run extract-surface first")
    return out


# ---------------------------------------------------------------------------
# queries

def _rows(path) -> Optional[np.ndarray]:
    if path is None:
        return None
    if not Path(path).exists():
        raise ConfigError(f"query file {path} not found")
    x = read_tensor(path).astype(np.float64)
    return x[None] if x.ndim == 1 else x


def run_query_object(cfg: PipelineConfig, clip_path=None, cap_path=None) -> dict:
    if clip_path is None and cap_path is None:
        raise ConfigError("query-object needs --clip and/or --cap")
    summaries = read_summaries(cfg.out)
    qc, qa = _rows(clip_path), _rows(cap_path)
    n = len(qc) if qc is not None else len(qa)
    if qc is not None and qa is not None and len(qc) != len(qa):
        raise ConfigError("clip and caption query files have different row counts")
    queries = []
    for j in range(n):
        try:
            r = query_objects(summaries, None if qc is None else qc[j], None if qa is None else qa[j],
                              cfg.retrieval.fusion, cfg.retrieval.clip_weight)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        queries.append({"ranking": [{"id": i, "score": s} for i, s in r.ranking]})
    result = {"stage": "query-object", "queries": queries}
    write_json(cfg.out / "result.json", result)
    return result


def part_query_points(cfg: PipelineConfig, obj: ObjectInstance, ds: Dataset, vertices: np.ndarray) -> np.ndarray:
    """Indices of the surface vertices a part query scores.

    Features on surface regions no frame has seen are unsupervised, so by
    default only observed vertices take part; all vertices if none qualify.
    """
    tol = cfg.retrieval.observed_tol
    if tol is None:
        return np.arange(len(vertices))
    idx = np.nonzero(observed_vertices(obj, ds, vertices, tol))[0]
    if len(idx) == 0:
        log.warning("object %d: no observed surface vertex, scoring all %d", obj.object_id, len(vertices))
        return np.arange(len(vertices))
    return idx


def run_query_part(cfg: PipelineConfig, object_id: int, query_path) -> dict:
    fields = {f.object_id: f for f in load_trained_fields(cfg)}
    if object_id not in fields:
        raise ConfigError(f"unknown object id {object_id}")
    path = surface_path(cfg, object_id)
    if path.exists():
        surf = load_surface(path)
    else:
        surf = extract_surface(fields[object_id], cfg.surface.resolution, cfg.surface.iso)
    obj = next(o for o in load_objects(cfg) if o.object_id == object_id)
    idx = part_query_points(cfg, obj, cfg.load_dataset(), surf.vertices)
    rows = []
    for q in _rows(query_path):
        r = query_part(fields[object_id], q, surf.vertices[idx])
        rows.append({"best_index": int(idx[r.best_index]), "best_point": r.best_point.tolist(),
                     "best_score": _f(r.scores[r.best_index]), "mean_score": _f(r.scores.mean())})
    result = {"stage": "query-part", "object_id": object_id, "n_points": len(surf.vertices),
              "n_scored": int(len(idx)), "queries": rows}
    write_json(cfg.out / "result.json", result)
    return result


# ---------------------------------------------------------------------------
# evaluation

def _label_embeddings(ds: Dataset, labels_path=None) -> np.ndarray:
    if labels_path is not None:
        return _rows(labels_path)
    meta = ds.manifest.get("labels")
    if not meta:
        raise ConfigError("dataset has no label embeddings; pass --labels")
    return read_tensor(ds.path(meta["clip"])).astype(np.float64)


def _write_seg_report(out: Path, name: str, metrics, n_classes: int) -> dict:
    with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "iou", "acc", "n_gt"])
        for c in range(n_classes):
            n_gt = int(metrics.confusion[c].sum())
            if n_gt:
                w.writerow([c, f"{metrics.iou[c]:.9g}", f"{metrics.acc[c]:.9g}", n_gt])
    return {"miou": metrics.miou, "macc": metrics.macc}


def segment_surfaces(cfg: PipelineConfig, ds: Dataset, labels: np.ndarray, surfaces: dict[int, Surface],
                     gt_points=None, gt_labels=None):
    """Predicted and ground-truth labels for the 3D evaluation.

    With ``gt_points``/``gt_labels`` every GT point takes the prediction of the
    nearest surface vertex. Otherwise, on generated scenes, each vertex is
    scored against the analytic shape it lies on.
    """
    verts = np.concatenate([s.vertices for s in surfaces.values()])
    feats = np.concatenate([s.features for s in surfaces.values()])
    floor = -np.inf if cfg.segmentation.floor is None else cfg.segmentation.floor
    pred = semantic_segment(feats, labels, floor)
    if gt_points is not None:
        _, nn = cKDTree(verts).query(gt_points)
        return pred[nn], np.asarray(gt_labels, dtype=np.int64)
    scene = ds.scene()
    if scene is None:
        raise ConfigError("no ground truth: pass --gt-points and --gt-labels")
    ids = np.array([o["id"] for o in scene["objects"]])
    return pred, ids[np.argmin(shape_distance(scene, verts), axis=1)]


def run_eval_seg(cfg: PipelineConfig, labels_path=None, gt_points_path=None, gt_labels_path=None,
                 frames: Sequence[int] = ()) -> dict:
    ds = cfg.load_dataset()
    labels = _label_embeddings(ds, labels_path)
    n_classes = len(labels)
    remap = None
    if cfg.segmentation.label_remap:
        remap = load_label_remap(cfg.segmentation.label_remap, n_classes)
        n_classes = int(remap.max()) + 1

    def apply(x):
        x = np.asarray(x, dtype=np.int64)
        return x if remap is None else np.where(x >= 0, remap[np.maximum(x, 0)], -1)

    out = cfg.out
    result: dict = {"stage": "eval-seg", "n_classes": n_classes}
    gp = read_tensor(gt_points_path).astype(np.float64) if gt_points_path else None
    gl = read_tensor(gt_labels_path) if gt_labels_path else None
    pred, gt = segment_surfaces(cfg, ds, labels, load_surfaces(cfg), gp, gl)
    m3 = compute_miou_macc(apply(pred), apply(gt), n_classes)
    result["3d"] = {**_write_seg_report(out, "eval_seg_3d", m3, n_classes), "n_points": len(gt)}

    if frames:
        fields = load_trained_fields(cfg)
        floor = -np.inf if cfg.segmentation.floor is None else cfg.segmentation.floor
        preds, gts = [], []
        for i in frames:
            img = render_image(fields, ds.intrinsics[i], ds.poses[i], ds.height, ds.width,
                               cfg.segmentation.render_samples)
            g = np.full((ds.height, ds.width), -1, dtype=np.int64)
            for rec in ds.instance_masks(i):
                if rec.gt_id is not None:
                    g[rec.mask > 0] = rec.gt_id
            p = semantic_segment(img["feature"].reshape(-1, labels.shape[1]), labels, floor)
            p[img["object_id"].ravel() < 0] = -1
            keep = g.ravel() >= 0
            preds.append(p[keep])
            gts.append(g.ravel()[keep])
        m2 = compute_miou_macc(apply(np.concatenate(preds)), apply(np.concatenate(gts)), n_classes)
        result["2d"] = {**_write_seg_report(out, "eval_seg_2d", m2, n_classes),
                        "frames": [ds.frame_ids[i] for i in frames]}
    write_json(out / "eval_seg.json", result)
    write_json(out / "result.json", result)
    return result


def run_eval_retrieval(cfg: PipelineConfig, clip_path=None, cap_path=None, gt_path=None) -> dict:
    """Recall@1/2/3 for clip-only, caption-only and fused queries.

    Default queries are the dataset's label embeddings; query ``j`` is
    answered correctly by any object whose ground-truth id is ``j``.
    """
    ds = cfg.load_dataset()
    summaries = read_summaries(cfg.out)
    meta = ds.manifest.get("labels") or {}
    qc = _rows(clip_path) if clip_path else (
        read_tensor(ds.path(meta["clip"])).astype(np.float64) if "clip" in meta else None)
    qa = _rows(cap_path) if cap_path else (
        read_tensor(ds.path(meta["cap"])).astype(np.float64) if "cap" in meta else None)
    if qc is None and qa is None:
        raise ConfigError("no retrieval queries: pass --clip/--cap")
    n = len(qc) if qc is not None else len(qa)
    if gt_path:
        gt = [set(g) if isinstance(g, list) else {g}
              for g in json.loads(Path(gt_path).read_text(encoding="utf-8"))]
    else:
        objs = read_objects_json(cfg.out / "objects.json")
        if any("gt_id" not in o for o in objs):
            raise ConfigError("objects carry no ground-truth ids; pass --gt")
        gt = [{o["id"] for o in objs if o["gt_id"] == j} for j in range(n)]
    if len(gt) != n:
        raise ConfigError(f"{len(gt)} ground-truth entries for {n} queries")

    modes = {}
    if qc is not None:
        modes["clip"] = (qc, None)
    if qa is not None:
        modes["cap"] = (None, qa)
    if qc is not None and qa is not None:
        modes["fused"] = (qc, qa)
    report, rows = {}, []
    for mode, (c, a) in modes.items():
        hits = np.zeros((n, 3), dtype=np.int64)
        for j in range(n):
            r = query_objects(summaries, None if c is None else c[j], None if a is None else a[j],
                              cfg.retrieval.fusion, cfg.retrieval.clip_weight)
            hits[j] = [recall_at_k(r.ids, gt[j], k) for k in (1, 2, 3)]
            rows.append([mode, j, *hits[j].tolist()])
        report[mode] = {f"R@{k}": _f(hits[:, k - 1].mean()) for k in (1, 2, 3)}
    with open(cfg.out / "eval_retrieval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "query", "R@1", "R@2", "R@3"])
        w.writerows(rows)
    result = {"stage": "eval-retrieval", "n_queries": n, "recall": report}
    write_json(cfg.out / "eval_retrieval.json", result)
    write_json(cfg.out / "result.json", result)
    return result


# ---------------------------------------------------------------------------
# end to end

def run_part_queries(cfg: PipelineConfig, ds: Dataset) -> Optional[list]:
    """Query each generated part embedding on the object that owns it."""
    meta = ds.manifest.get("part_queries")
    if not meta:
        return None
    queries = read_tensor(ds.path(meta["clip"])).astype(np.float64)
    by_gt = {o["gt_id"]: o["id"] for o in read_objects_json(cfg.out / "objects.json") if "gt_id" in o}
    fields = {f.object_id: f for f in load_trained_fields(cfg)}
    surfaces = load_surfaces(cfg)
    objects = {o.object_id: o for o in load_objects(cfg)}
    scored = {}
    out = []
    for q, (gt_obj, face) in zip(queries, meta["gt"]):
        oid = by_gt.get(gt_obj)
        if oid is None or oid not in surfaces:
            out.append({"gt_object": gt_obj, "face": face, "object_id": None})
            continue
        if oid not in scored:
            scored[oid] = part_query_points(cfg, objects[oid], ds, surfaces[oid].vertices)
        r = query_part(fields[oid], q, surfaces[oid].vertices[scored[oid]])
        out.append({"gt_object": gt_obj, "face": face, "object_id": oid,
                    "best_point": r.best_point.tolist(), "best_score": _f(r.scores[r.best_index])})
    return out


def run_all(cfg: PipelineConfig, dump_similarity: bool = False) -> dict:
    stages = {}
    stages["cluster"] = run_cluster(cfg, dump_similarity)
    stages["train"] = run_train(cfg)
    stages["extract-surface"] = run_extract_surface(cfg)
    ds = cfg.load_dataset()
    if ds.manifest.get("labels") and ds.scene() is not None:
        stages["eval-seg"] = run_eval_seg(cfg)
        stages["eval-retrieval"] = run_eval_retrieval(cfg)
        parts = run_part_queries(cfg, ds)
        if parts is not None:
            stages["part-queries"] = parts
    result = {"stage": "run-all", "stages": stages}
    write_json(cfg.out / "result.json", result)
    return result
