"""Fully labeled synthetic RGB-D scenes built by ray casting analytic shapes.

A scene description is a plain dict::

    {
      "width": 128, "height": 96, "fx": 110.0, "fy": 110.0,   # cx, cy optional
      "D_e": 16, "D_c": 8, "embedding_noise": 0.05,
      "objects": [
        {"id": 0, "shape": "box", "min": [..], "max": [..], "color": [r, g, b],
         "parts": "faces", "part_base_weight": 1.0},
        {"id": 1, "shape": "sphere", "center": [..], "radius": 0.3, "color": [..]},
      ],
      "trajectory": {"type": "orbit", "n_views": 20, "radius": 2.5,
                     "height": 1.5, "target": [0, 0, 0]},
      "truncation_shift": false,
    }

``trajectory`` may also be a list of orbit segments or ``{"type": "poses",
"poses": [...]}``. World z points up. Object ``i`` owns the one-hot clip
direction ``i`` and caption direction ``i``; box faces with ``parts: "faces"``
get extra clip directions mixed with the object direction by
``part_base_weight``. With ``truncation_shift`` on, instance masks touching the
image border get a separate per-object embedding direction, mimicking
recognition failures on cut-off crops.

Face ids for boxes are ``2 * axis + side``: 0=-x, 1=+x, 2=-y, 3=+y, 4=-z, 5=+z.
"""

from __future__ import annotations

import copy
import json
import math
from os import PathLike
from pathlib import Path

import numpy as np

from .tensor_io import write_tensor

FACE_NAMES = ["-x", "+x", "-y", "+y", "-z", "+z"]
TOP_FACE = 5


class SceneError(ValueError):
    pass


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose with x-right, y-down, z-forward."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, forward, position
    return pose


def trajectory_poses(traj) -> list[np.ndarray]:
    if isinstance(traj, list):
        return [p for seg in traj for p in trajectory_poses(seg)]
    kind = traj.get("type", "orbit")
    if kind == "poses":
        return [np.asarray(p, dtype=np.float64) for p in traj["poses"]]
    if kind != "orbit":
        raise SceneError(f"unknown trajectory type {kind!r}")
    n = int(traj["n_views"])
    start = math.radians(traj.get("start_deg", 0.0))
    arc = math.radians(traj.get("arc_deg", 360.0))
    full = math.isclose(arc, 2 * math.pi)
    target = np.asarray(traj.get("target", [0.0, 0.0, 0.0]), dtype=np.float64)
    center = np.asarray(traj.get("center", target), dtype=np.float64)
    poses = []
    for i in range(n):
        frac = i / n if full else (i / max(n - 1, 1))
        a = start + arc * frac
        pos = center + [traj["radius"] * math.cos(a), traj["radius"] * math.sin(a), traj["height"]]
        poses.append(look_at(pos, target))
    return poses


def _box_bounds(obj) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(obj["min"], dtype=np.float64), np.asarray(obj["max"], dtype=np.float64)


def _aabb(obj) -> tuple[np.ndarray, np.ndarray]:
    if obj["shape"] == "box":
        return _box_bounds(obj)
    c, r = np.asarray(obj["center"], dtype=np.float64), float(obj["radius"])
    return c - r, c + r


def _shapes_touch(a, b) -> bool:
    if a["shape"] == "sphere" and b["shape"] == "box":
        a, b = b, a
    if a["shape"] == "box" and b["shape"] == "box":
        amin, amax = _box_bounds(a)
        bmin, bmax = _box_bounds(b)
        return bool(np.all(amin <= bmax) and np.all(bmin <= amax))
    if a["shape"] == "box":
        lo, hi = _box_bounds(a)
        c = np.asarray(b["center"], dtype=np.float64)
        return float(np.linalg.norm(np.clip(c, lo, hi) - c)) <= float(b["radius"])
    d = np.linalg.norm(np.subtract(a["center"], b["center"]))
    return d <= float(a["radius"]) + float(b["radius"])


def validate_scene(scene: dict) -> None:
    objs = scene["objects"]
    ids = [o["id"] for o in objs]
    if sorted(ids) != list(range(len(objs))):
        raise SceneError(f"object ids must be 0..{len(objs) - 1}, got {ids}")
    for o in objs:
        if o["shape"] == "box":
            lo, hi = _box_bounds(o)
            if np.any(hi <= lo):
                raise SceneError(f"object {o['id']}: box max must exceed min")
        elif o["shape"] == "sphere":
            if float(o["radius"]) <= 0:
                raise SceneError(f"object {o['id']}: radius must be positive")
        else:
            raise SceneError(f"object {o['id']}: unknown shape {o['shape']!r}")
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            if _shapes_touch(objs[i], objs[j]):
                raise SceneError(f"objects {objs[i]['id']} and {objs[j]['id']} overlap")


def intersect_box(origin, dirs, lo, hi):
    """Ray parameter of first hit with an AABB and the face id hit.

    ``dirs`` is ``(M, 3)``; returns ``(t, face)`` with ``t = inf`` for misses.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = dirs == 0
    inside = (origin >= lo) & (origin <= hi)
    t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    axis = tmin.argmax(axis=1)
    rows = np.arange(len(dirs))
    # entering through the min-side plane means t1 < t2 on that axis
    side = (t1[rows, axis] > t2[rows, axis]).astype(np.int64)
    hit = (t_near <= t_far) & (t_near > 0)
    t = np.where(hit, t_near, np.inf)
    return t, 2 * axis + side


def intersect_sphere(origin, dirs, center, radius):
    oc = origin - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    ok = (disc >= 0) & (t > 0)
    return np.where(ok, t, np.inf)


def camera_rays(pose, width, height, fx, fy, cx, cy):
    """Per-pixel world ray directions with unit camera z (so ``t`` is z-depth)."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    cam = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    return pose[:3, 3].copy(), cam @ pose[:3, :3].T


def render_view(scene: dict, pose: np.ndarray):
    """Ray-cast one view.

    Returns ``(depth f64, object id map, part id map)``; misses have depth 0
    and id -1.
    """
    w, h = int(scene["width"]), int(scene["height"])
    fx, fy = float(scene["fx"]), float(scene["fy"])
    cx, cy = float(scene.get("cx", (w - 1) / 2)), float(scene.get("cy", (h - 1) / 2))
    origin, dirs = camera_rays(pose, w, h, fx, fy, cx, cy)
    best = np.full(len(dirs), np.inf)
    obj_id = np.full(len(dirs), -1, dtype=np.int64)
    part_id = np.full(len(dirs), -1, dtype=np.int64)
    for o in scene["objects"]:
        if o["shape"] == "box":
            t, face = intersect_box(origin, dirs, *_box_bounds(o))
        else:
            t = intersect_sphere(origin, dirs, np.asarray(o["center"], dtype=np.float64), float(o["radius"]))
            face = np.zeros(len(dirs), dtype=np.int64)
        closer = t < best
        best = np.where(closer, t, best)
        obj_id = np.where(closer, o["id"], obj_id)
        part_id = np.where(closer, face if o.get("parts") == "faces" else 0, part_id)
    depth = np.where(np.isfinite(best), best, 0.0)
    return depth.reshape(h, w), obj_id.reshape(h, w), part_id.reshape(h, w)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class _EmbeddingLayout:
    """Assigns orthogonal embedding directions to objects, faces and truncation."""

    def __init__(self, scene: dict):
        objs = scene["objects"]
        n = len(objs)
        self.D_e, self.D_c = int(scene["D_e"]), int(scene["D_c"])
        self.face_dim = {}
        nxt = n
        for o in objs:
            if o.get("parts") == "faces":
                self.face_dim[o["id"]] = nxt
                nxt += 6
        self.trunc_dim = {}
        if scene.get("truncation_shift"):
            for o in objs:
                self.trunc_dim[o["id"]] = nxt
                nxt += 1
        if nxt > self.D_e:
            raise SceneError(f"D_e={self.D_e} too small, scene needs {nxt} dims")
        need_c = 2 * n if scene.get("truncation_shift") else n
        if need_c > self.D_c:
            raise SceneError(f"D_c={self.D_c} too small, scene needs {need_c} dims")
        self.n = n
        self.base_weight = {o["id"]: float(o.get("part_base_weight", 1.0)) for o in objs}

    def clip(self, k: int) -> np.ndarray:
        e = np.zeros(self.D_e)
        e[k] = 1.0
        return e

    def cap(self, k: int) -> np.ndarray:
        e = np.zeros(self.D_c)
        e[k] = 1.0
        return e

    def trunc_clip(self, k: int) -> np.ndarray:
        e = np.zeros(self.D_e)
        e[self.trunc_dim[k]] = 1.0
        return e

    def trunc_cap(self, k: int) -> np.ndarray:
        e = np.zeros(self.D_c)
        e[self.n + k] = 1.0
        return e

    def part(self, k: int, face: int) -> np.ndarray:
        if k not in self.face_dim:
            return self.clip(k)
        e = self.base_weight[k] * self.clip(k)
        e[self.face_dim[k] + face] += 1.0
        return _unit(e)


def _noisy(base: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
    return _unit(base + sigma * rng.standard_normal(base.shape)).astype(np.float32)


def generate_synthetic_scene(scene: dict, out_dir: str | PathLike, seed: int = 0,
                             min_mask_pixels: int = 20) -> Path:
    """Write a dataset for ``scene`` under ``out_dir`` and return its path.

    Output is byte-identical for a fixed ``(scene, seed)``.
    """
    scene = copy.deepcopy(scene)
    validate_scene(scene)
    layout = _EmbeddingLayout(scene)
    rng = np.random.default_rng(seed)
    noise = float(scene.get("embedding_noise", 0.05))
    w, h = int(scene["width"]), int(scene["height"])
    scene.setdefault("cx", (w - 1) / 2)
    scene.setdefault("cy", (h - 1) / 2)
    colors = {o["id"]: np.asarray(o.get("color", [200, 200, 200]), dtype=np.uint8) for o in scene["objects"]}
    background = np.asarray(scene.get("background", [0, 0, 0]), dtype=np.uint8)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for t, pose in enumerate(trajectory_poses(scene["trajectory"])):
        depth, obj_map, part_map = render_view(scene, pose)
        color = np.broadcast_to(background, (h, w, 3)).copy()
        for k, c in colors.items():
            color[obj_map == k] = c

        inst_masks, inst_clip, inst_cap, captions, gt_ids = [], [], [], [], []
        part_masks, part_clip, part_gt = [], [], []
        for k in sorted(colors):
            m = obj_map == k
            if m.sum() < min_mask_pixels:
                continue
            border = m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any()
            shifted = border and bool(scene.get("truncation_shift"))
            inst_masks.append(m.astype(np.uint8))
            inst_clip.append(_noisy(layout.trunc_clip(k) if shifted else layout.clip(k), rng, noise))
            inst_cap.append(_noisy(layout.trunc_cap(k) if shifted else layout.cap(k), rng, noise))
            captions.append(f"object {k}" + (" (partial)" if shifted else ""))
            gt_ids.append(k)
            for face in np.unique(part_map[m]):
                pm = m & (part_map == face)
                part_masks.append(pm.astype(np.uint8))
                part_clip.append(_noisy(layout.part(k, int(face)), rng, noise))
                part_gt.append([k, int(face)])

        stem = f"{t:04d}"
        write_tensor(out / f"color_{stem}.obnt", color)
        write_tensor(out / f"depth_{stem}.obnt", depth.astype(np.float32))
        meta = {"id": t, "color": f"color_{stem}.obnt", "depth": f"depth_{stem}.obnt",
                "pose": pose.tolist()}
        if inst_masks:
            write_tensor(out / f"inst_{stem}.obnt", np.stack(inst_masks))
            write_tensor(out / f"inst_clip_{stem}.obnt", np.stack(inst_clip))
            write_tensor(out / f"inst_cap_{stem}.obnt", np.stack(inst_cap))
            meta["instances"] = {"masks": f"inst_{stem}.obnt", "clip": f"inst_clip_{stem}.obnt",
                                 "cap": f"inst_cap_{stem}.obnt", "captions": captions,
                                 "gt_ids": gt_ids}
        if part_masks:
            write_tensor(out / f"part_{stem}.obnt", np.stack(part_masks))
            write_tensor(out / f"part_clip_{stem}.obnt", np.stack(part_clip))
            meta["parts"] = {"masks": f"part_{stem}.obnt", "clip": f"part_clip_{stem}.obnt",
                             "gt_ids": part_gt}
        frames.append(meta)

    # noiseless label / query embeddings, indexed by GT object id
    n = len(colors)
    write_tensor(out / "labels_clip.obnt", np.stack([layout.clip(k) for k in range(n)]).astype(np.float32))
    write_tensor(out / "labels_cap.obnt", np.stack([layout.cap(k) for k in range(n)]).astype(np.float32))
    part_queries, part_meta = [], []
    for k in sorted(layout.face_dim):
        for face in range(6):
            part_queries.append(layout.part(k, face))
            part_meta.append([k, face])
    if part_queries:
        write_tensor(out / "part_queries.obnt", np.stack(part_queries).astype(np.float32))

    manifest = {
        "D_e": layout.D_e, "D_c": layout.D_c, "depth_scale": 1.0,
        "height": h, "width": w,
        "intrinsics": [float(scene["fx"]), float(scene["fy"]), float(scene["cx"]), float(scene["cy"])],
        "frames": frames,
        "scene": scene,
        "labels": {"clip": "labels_clip.obnt", "cap": "labels_cap.obnt",
                   "names": [f"object {k}" for k in range(n)]},
    }
    if part_queries:
        manifest["part_queries"] = {"clip": "part_queries.obnt", "gt": part_meta}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return out


def shape_distance(scene: dict, points: np.ndarray) -> np.ndarray:
    """Unsigned distance from each point to each object's surface, ``(N, K)``."""
    out = []
    for o in scene["objects"]:
        if o["shape"] == "box":
            lo, hi = _box_bounds(o)
            c, half = (lo + hi) / 2, (hi - lo) / 2
            q = np.abs(points - c) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            out.append(np.abs(outside + inside))
        else:
            c = np.asarray(o["center"], dtype=np.float64)
            out.append(np.abs(np.linalg.norm(points - c, axis=1) - float(o["radius"])))
    return np.stack(out, axis=1)


def nearest_face(obj: dict, points: np.ndarray) -> np.ndarray:
    """Face id of a box closest to each point."""
    lo, hi = _box_bounds(obj)
    d = np.stack([np.abs(points[:, a] - b[a]) for a in range(3) for b in (lo, hi)], axis=1)
    return d.argmin(axis=1)


# ---------------------------------------------------------------------------
# preset scenes

def three_box_scene(n_views: int = 20) -> dict:
    """Three disjoint boxes; box 2 carries distinct per-face part embeddings."""
    return {
        "width": 128, "height": 96, "fx": 110.0, "fy": 110.0,
        "D_e": 16, "D_c": 8, "embedding_noise": 0.05,
        "objects": [
            {"id": 0, "shape": "box", "min": [-0.75, -0.45, 0.0], "max": [-0.25, 0.05, 0.5],
             "color": [220, 40, 40]},
            {"id": 1, "shape": "box", "min": [0.25, -0.55, 0.0], "max": [0.7, -0.1, 0.35],
             "color": [40, 200, 60]},
            {"id": 2, "shape": "box", "min": [-0.2, 0.3, 0.0], "max": [0.3, 0.8, 0.4],
             "color": [50, 80, 220], "parts": "faces", "part_base_weight": 1.0},
        ],
        "trajectory": {"type": "orbit", "n_views": n_views, "radius": 2.6, "height": 1.6,
                       "target": [0.0, 0.0, 0.15]},
    }


def truncated_box_scene() -> dict:
    """Two boxes; extra views cut box 0 at the image border."""
    return {
        "width": 128, "height": 96, "fx": 110.0, "fy": 110.0,
        "D_e": 16, "D_c": 8, "embedding_noise": 0.05, "truncation_shift": True,
        "objects": [
            {"id": 0, "shape": "box", "min": [-0.7, -0.25, 0.0], "max": [-0.2, 0.25, 0.5],
             "color": [220, 40, 40]},
            {"id": 1, "shape": "box", "min": [0.3, -0.2, 0.0], "max": [0.7, 0.2, 0.4],
             "color": [40, 200, 60]},
        ],
        "trajectory": [
            {"type": "orbit", "n_views": 12, "radius": 2.6, "height": 1.6, "target": [0.0, 0.0, 0.15]},
            {"type": "orbit", "n_views": 4, "radius": 2.6, "height": 1.6, "start_deg": 250.0,
             "arc_deg": 40.0, "center": [0.0, 0.0, 0.15], "target": [0.95, 0.0, 0.15]},
        ],
    }


def single_box_scene(part_base_weight: float = 0.0, n_views: int = 12) -> dict:
    """One box whose faces carry mutually orthogonal part embeddings."""
    return {
        "width": 128, "height": 96, "fx": 110.0, "fy": 110.0,
        "D_e": 8, "D_c": 4, "embedding_noise": 0.02,
        "objects": [
            {"id": 0, "shape": "box", "min": [-0.3, -0.3, 0.0], "max": [0.3, 0.3, 0.5],
             "color": [200, 160, 40], "parts": "faces", "part_base_weight": part_base_weight},
        ],
        "trajectory": {"type": "orbit", "n_views": n_views, "radius": 2.2, "height": 1.4,
                       "target": [0.0, 0.0, 0.2]},
    }


PRESETS = {
    "three_boxes": three_box_scene,
    "truncated_box": truncated_box_scene,
    "single_box": single_box_scene,
}
