"""On-disk dataset layout, frame/mask records and pinhole back-projection.

A dataset directory holds ``manifest.json`` plus tensor files::

    {
      "D_e": 16, "D_c": 8, "depth_scale": 1.0, "height": 96, "width": 128,
      "intrinsics": [fx, fy, cx, cy],
      "frames": [
        {"id": 0, "color": "color_0000.obnt", "depth": "depth_0000.obnt",
         "pose": [[...4x4 camera-to-world...]],
         "instances": {"masks": "inst_0000.obnt", "clip": "inst_clip_0000.obnt",
                       "cap": "inst_cap_0000.obnt", "captions": [...],
                       "gt_ids": [...]},
         "parts": {"masks": "part_0000.obnt", "clip": "part_clip_0000.obnt",
                   "gt_ids": [[object, part], ...]}}
      ]
    }

Depth in meters is ``raw / depth_scale``; 0 marks invalid pixels. Cameras use
x-right, y-down, z-forward and poses map camera to world.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from os import PathLike
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tensor_io import read_tensor, read_tensor_header

log = logging.getLogger(__name__)

POSE_TOL = 1e-6
UNIT_NORM_TOL = 1e-4


class DatasetError(ValueError):
    """Raised for missing files, dimension mismatches and invalid poses."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DatasetError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class FrameRecord:
    frame_id: int
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32 meters
    pose: np.ndarray  # (4, 4) float64 camera-to-world
    intrinsics: Intrinsics

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class MaskRecord:
    frame_id: int
    index: int
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    kind: str  # "instance" or "part"
    clip: np.ndarray
    caption: str = ""
    cap: Optional[np.ndarray] = None
    gt_id: Optional[int] = None
    gt_part: Optional[int] = None


def check_pose(pose: np.ndarray, tol: float = POSE_TOL) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
        raise DatasetError(f"pose must be a finite 4x4 matrix, got shape {pose.shape}")
    rot = pose[:3, :3]
    if np.abs(rot @ rot.T - np.eye(3)).max() > tol or abs(np.linalg.det(rot) - 1.0) > tol:
        raise DatasetError(f"pose rotation is not orthonormal (det={np.linalg.det(rot):.6g})")
    if np.abs(pose[3] - [0, 0, 0, 1]).max() > tol:
        raise DatasetError("pose bottom row must be [0, 0, 0, 1]")
    return pose


def backproject_pixels(u: np.ndarray, v: np.ndarray, depth: np.ndarray,
                       K: Intrinsics, pose: np.ndarray) -> np.ndarray:
    """World points for pixel columns ``u``, rows ``v`` at z-depth ``depth``."""
    cam = np.stack([depth * (u - K.cx) / K.fx, depth * (v - K.cy) / K.fy, depth], axis=-1)
    return cam @ pose[:3, :3].T + pose[:3, 3]


def backproject_mask(mask: np.ndarray, depth: np.ndarray, K: Intrinsics,
                     pose: np.ndarray) -> np.ndarray:
    """Lift masked pixels with valid depth to an ``(N, 3)`` world point cloud.

    Raises:
        DatasetError: if shapes disagree or no masked pixel has valid depth.
    """
    if mask.shape != depth.shape:
        raise DatasetError(f"mask shape {mask.shape} != depth shape {depth.shape}")
    v, u = np.nonzero((mask > 0) & (depth > 0))
    if len(u) == 0:
        raise DatasetError("mask has no pixel with valid depth")
    d = depth[v, u].astype(np.float64)
    return backproject_pixels(u.astype(np.float64), v.astype(np.float64), d, K,
                              np.asarray(pose, dtype=np.float64))


def project_points(points: np.ndarray, K: Intrinsics, pose: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into pixel coordinates; returns ``(uv, z)``."""
    pose = np.asarray(pose, dtype=np.float64)
    cam = (points - pose[:3, 3]) @ pose[:3, :3]
    z = cam[:, 2]
    uv = np.stack([K.fx * cam[:, 0] / z + K.cx, K.fy * cam[:, 1] / z + K.cy], axis=-1)
    return uv, z


class Dataset:
    """Read-only handle over a manifest directory.

    Frame images and masks are loaded lazily and cached.
    """

    def __init__(self, root: Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.height = int(manifest["height"])
        self.width = int(manifest["width"])
        self.D_e = int(manifest["D_e"])
        self.D_c = int(manifest["D_c"])
        self.depth_scale = float(manifest.get("depth_scale", 1.0))
        if self.depth_scale <= 0:
            raise DatasetError("depth_scale must be positive")
        self.frames_meta = list(manifest["frames"])
        self.poses = []
        self.intrinsics = []
        default_k = manifest.get("intrinsics")
        for meta in self.frames_meta:
            self.poses.append(check_pose(self._load_pose(meta)))
            k = meta.get("intrinsics", default_k)
            if k is None:
                raise DatasetError(f"frame {meta['id']}: no intrinsics")
            self.intrinsics.append(Intrinsics(*map(float, k)))
        self._validate_files()
        self.frame_ids = [int(m["id"]) for m in self.frames_meta]
        self.frame = lru_cache(maxsize=64)(self._frame)
        self.instance_masks = lru_cache(maxsize=64)(self._instance_masks)
        self.part_masks = lru_cache(maxsize=16)(self._part_masks)

    def __len__(self) -> int:
        return len(self.frames_meta)

    def __repr__(self) -> str:
        return f"Dataset({str(self.root)!r}, frames={len(self)}, D_e={self.D_e}, D_c={self.D_c})"

    def path(self, rel: str) -> Path:
        p = self.root / rel
        if not p.exists():
            raise DatasetError(f"missing file {p}")
        return p

    def _load_pose(self, meta: dict) -> np.ndarray:
        pose = meta["pose"]
        if isinstance(pose, str):
            return read_tensor(self.path(pose)).astype(np.float64)
        return np.asarray(pose, dtype=np.float64)

    def _check_header(self, rel: str, ndim: int, last: Optional[int] = None,
                      hw: bool = False) -> tuple[int, ...]:
        _, shape = read_tensor_header(self.path(rel))
        if len(shape) != ndim:
            raise DatasetError(f"{rel}: expected {ndim} dims, got shape {shape}")
        if last is not None and shape[-1] != last:
            raise DatasetError(f"{rel}: dim mismatch, expected {last}, got {shape[-1]}")
        if hw and tuple(shape[-2:]) != (self.height, self.width):
            raise DatasetError(f"{rel}: mask size {shape[-2:]} != {(self.height, self.width)}")
        return shape

    def _validate_files(self) -> None:
        for meta in self.frames_meta:
            self._check_header(meta["color"], 3, 3)
            self._check_header(meta["depth"], 2, hw=True)
            inst = meta.get("instances")
            if inst:
                n = self._check_header(inst["masks"], 3, hw=True)[0]
                if self._check_header(inst["clip"], 2, self.D_e)[0] != n:
                    raise DatasetError(f"{inst['clip']}: row count != mask count {n}")
                if "cap" in inst and self._check_header(inst["cap"], 2, self.D_c)[0] != n:
                    raise DatasetError(f"{inst['cap']}: row count != mask count {n}")
            parts = meta.get("parts")
            if parts:
                n = self._check_header(parts["masks"], 3, hw=True)[0]
                if self._check_header(parts["clip"], 2, self.D_e)[0] != n:
                    raise DatasetError(f"{parts['clip']}: row count != mask count {n}")

    def _frame(self, i: int) -> FrameRecord:
        meta = self.frames_meta[i]
        color = read_tensor(self.path(meta["color"]))
        if color.dtype != np.uint8:
            raise DatasetError(f"{meta['color']}: color must be u8")
        depth = read_tensor(self.path(meta["depth"])).astype(np.float32)
        if self.depth_scale != 1.0:
            depth = (depth / self.depth_scale).astype(np.float32)
        depth[~np.isfinite(depth) | (depth < 0)] = 0.0
        return FrameRecord(int(meta["id"]), color, depth, self.poses[i], self.intrinsics[i])

    def _load_masks(self, i: int, key: str, kind: str) -> list[MaskRecord]:
        meta = self.frames_meta[i]
        block = meta.get(key)
        if not block:
            return []
        masks = read_tensor(self.path(block["masks"]))
        clip = read_tensor(self.path(block["clip"])).astype(np.float32)
        cap = read_tensor(self.path(block["cap"])).astype(np.float32) if "cap" in block else None
        captions = block.get("captions") or [""] * len(masks)
        gt = block.get("gt_ids")
        records = []
        for j in range(len(masks)):
            m = (masks[j] > 0).astype(np.uint8)
            if not m.any():
                raise DatasetError(f"frame {meta['id']} {kind} mask {j} is empty")
            _check_unit(clip[j], f"frame {meta['id']} {kind} {j} clip")
            if cap is not None:
                _check_unit(cap[j], f"frame {meta['id']} {kind} {j} cap")
            gt_id = gt_part = None
            if gt is not None:
                if kind == "part":
                    gt_id, gt_part = (int(x) for x in gt[j])
                else:
                    gt_id = int(gt[j])
            records.append(MaskRecord(
                frame_id=int(meta["id"]), index=j, mask=m, kind=kind, clip=clip[j],
                caption=captions[j], cap=None if cap is None else cap[j],
                gt_id=gt_id, gt_part=gt_part))
        if kind == "instance" and records:
            overlap = np.sum([r.mask for r in records], axis=0, dtype=np.int32).max()
            if overlap > 1:
                raise DatasetError(f"frame {meta['id']}: instance masks overlap")
        return records

    def _instance_masks(self, i: int) -> list[MaskRecord]:
        return self._load_masks(i, "instances", "instance")

    def _part_masks(self, i: int) -> list[MaskRecord]:
        return self._load_masks(i, "parts", "part")

    def iter_frames(self):
        for i in range(len(self)):
            yield self.frame(i)

    def scene(self) -> Optional[dict]:
        """Synthetic scene description, if the dataset was generated."""
        return self.manifest.get("scene")


def _check_unit(vec: np.ndarray, what: str) -> None:
    n = float(np.linalg.norm(vec))
    if abs(n - 1.0) > UNIT_NORM_TOL:
        raise DatasetError(f"{what}: embedding norm {n:.6f} is not 1")


def load_manifest(root: str | PathLike) -> Dataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DatasetError(f"missing manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    for key in ("frames", "D_e", "D_c", "height", "width"):
        if key not in manifest:
            raise DatasetError(f"manifest missing key {key!r}")
    return Dataset(root, manifest)


def frame_index(dataset: Dataset, frame_ids: Sequence[int]) -> list[int]:
    lookup = {fid: i for i, fid in enumerate(dataset.frame_ids)}
    return [lookup[f] for f in frame_ids]
