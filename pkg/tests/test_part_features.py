import numpy as np
import pytest

from objmap.part_features import composite_feature_image, feature_target, frame_feature_image
from objmap.tensor_io import read_tensor


def test_single_and_double_cover():
    m1 = np.zeros((3, 4), dtype=np.uint8)
    m1[0, :3] = 1
    m2 = np.zeros((3, 4), dtype=np.uint8)
    m2[0, 1:] = 1
    f1, f2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    img = composite_feature_image([m1, m2], [f1, f2], 3, 4, 3)
    assert np.array_equal(img.features[0, 0], f1)
    assert np.allclose(img.features[0, 1], (f1 + f2) / 2, atol=1e-12)
    assert np.array_equal(img.features[0, 3], f2)
    assert np.array_equal(img.features[2, 2], np.zeros(3)) and img.coverage[2, 2] == 0
    vec, ok = feature_target(img, (1, 0))
    assert ok and np.allclose(vec, (f1 + f2) / 2)
    vec, ok = feature_target(img, (2, 2))
    assert not ok and not vec.any()
    with pytest.raises(IndexError):
        feature_target(img, (-1, 0))


def test_no_masks():
    img = composite_feature_image([], [], 2, 2, 5)
    assert not img.features.any() and not img.coverage.any()


def test_dim_mismatch():
    with pytest.raises(ValueError):
        composite_feature_image([np.ones((2, 2))], [np.ones(3)], 2, 2, 4)
    with pytest.raises(ValueError):
        composite_feature_image([np.ones((2, 2))], [], 2, 2, 4)


def test_identical_embeddings_and_order_invariance(rng):
    masks = [(rng.random((6, 7)) < 0.5).astype(np.uint8) for _ in range(5)]
    f = rng.normal(size=4)
    f /= np.linalg.norm(f)
    img = composite_feature_image(masks, [f] * 5, 6, 7, 4)
    cov = img.coverage > 0
    assert np.allclose(img.features[cov], f.astype(np.float32))
    embs = [rng.normal(size=4) for _ in range(5)]
    a = composite_feature_image(masks, embs, 6, 7, 4)
    perm = [3, 1, 4, 0, 2]
    b = composite_feature_image([masks[i] for i in perm], [embs[i] for i in perm], 6, 7, 4)
    assert np.allclose(a.features, b.features, atol=1e-6)
    bound = max(np.linalg.norm(e) for e in embs)
    assert np.linalg.norm(a.features, axis=-1).max() <= bound + 1e-6


def test_frame_feature_cache(tmp_path, three_box):
    img = frame_feature_image(three_box, 2, tmp_path)
    path = tmp_path / f"feat_{three_box.frame_ids[2]}.obnt"
    assert path.exists()
    blob = read_tensor(path)
    assert blob.shape == (three_box.height, three_box.width, three_box.D_e + 1)
    again = frame_feature_image(three_box, 2, tmp_path)
    assert np.array_equal(img.features, again.features)
    assert np.array_equal(img.coverage, again.coverage)
    inst = sum(r.mask for r in three_box.instance_masks(2))
    assert np.array_equal(img.coverage > 0, inst > 0)
