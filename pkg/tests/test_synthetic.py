import filecmp
import json

import numpy as np
import pytest

from objmap.dataset import load_manifest
from objmap.synthetic import (PRESETS, SceneError, generate_synthetic_scene, nearest_face, render_view,
                              shape_distance, three_box_scene, trajectory_poses)


def _face_hits(origin, d, lo, hi):
    """First-hit parameter by testing each of the six face rectangles."""
    best, best_face = np.inf, -1
    for axis in range(3):
        if d[axis] == 0:
            continue
        for side, plane in enumerate((lo[axis], hi[axis])):
            t = (plane - origin[axis]) / d[axis]
            if t <= 0:
                continue
            p = origin + t * d
            others = [a for a in range(3) if a != axis]
            if all(lo[a] - 1e-12 <= p[a] <= hi[a] + 1e-12 for a in others) and t < best:
                best, best_face = t, 2 * axis + side
    return best, best_face


def test_three_boxes_twenty_views(three_box):
    assert len(three_box) == 20
    ids = set()
    for i in range(len(three_box)):
        for rec in three_box.instance_masks(i):
            assert rec.gt_id in {0, 1, 2}
            ids.add(rec.gt_id)
    assert ids == {0, 1, 2}


def test_deterministic_output(tmp_path):
    a = generate_synthetic_scene(three_box_scene(4), tmp_path / "a", seed=3)
    b = generate_synthetic_scene(three_box_scene(4), tmp_path / "b", seed=3)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_seed_changes_embeddings(tmp_path):
    a = generate_synthetic_scene(three_box_scene(2), tmp_path / "a", seed=0)
    b = generate_synthetic_scene(three_box_scene(2), tmp_path / "b", seed=1)
    assert (a / "inst_clip_0000.obnt").read_bytes() != (b / "inst_clip_0000.obnt").read_bytes()


def test_overlapping_boxes_rejected(tmp_path):
    scene = three_box_scene(2)
    scene["objects"][1]["min"] = [-0.5, -0.3, 0.1]
    with pytest.raises(SceneError, match="overlap"):
        generate_synthetic_scene(scene, tmp_path)


def test_depth_matches_analytic_intersection():
    scene = three_box_scene(6)
    w, h = scene["width"], scene["height"]
    cx, cy = (w - 1) / 2, (h - 1) / 2
    rng = np.random.default_rng(0)
    for pose in trajectory_poses(scene["trajectory"]):
        depth, obj, part = render_view(scene, pose)
        v, u = np.nonzero(obj >= 0)
        pick = rng.choice(len(u), size=min(200, len(u)), replace=False)
        for j in pick:
            d_cam = np.array([(u[j] - cx) / scene["fx"], (v[j] - cy) / scene["fy"], 1.0])
            d = pose[:3, :3] @ d_cam
            hits = [_face_hits(pose[:3, 3], d, np.array(o["min"]), np.array(o["max"]))
                    for o in scene["objects"]]
            k = int(np.argmin([t for t, _ in hits]))
            assert obj[v[j], u[j]] == k
            assert abs(depth[v[j], u[j]] - hits[k][0]) < 1e-9
            if scene["objects"][k].get("parts") == "faces":
                assert part[v[j], u[j]] == hits[k][1]


def test_stored_depth_is_float32_of_render(three_box_dir):
    ds = load_manifest(three_box_dir)
    scene = ds.scene()
    depth, _, _ = render_view(scene, ds.poses[3])
    assert np.array_equal(ds.frame(3).depth, depth.astype(np.float32))


def test_part_masks_follow_faces(three_box):
    for rec in three_box.part_masks(0):
        assert rec.gt_id in {0, 1, 2}
    scene = three_box.scene()
    box = scene["objects"][2]
    recs = [r for r in three_box.part_masks(0) if r.gt_id == 2]
    assert len(recs) >= 2
    faces = {r.gt_part for r in recs}
    assert faces <= set(range(6))


def test_shape_distance_and_faces():
    scene = three_box_scene(1)
    box = scene["objects"][0]
    lo, hi = np.array(box["min"]), np.array(box["max"])
    top = np.array([[(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[2]]])
    assert shape_distance(scene, top)[0, 0] == pytest.approx(0.0)
    assert nearest_face(box, top)[0] == 5
    centre = (lo + hi)[None] / 2
    assert shape_distance(scene, centre)[0, 0] == pytest.approx(np.min(hi - lo) / 2)


def test_presets_generate(tmp_path):
    for name, make in PRESETS.items():
        out = generate_synthetic_scene(make(), tmp_path / name)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["frames"]
        load_manifest(out)
