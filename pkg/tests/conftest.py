import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from objmap.clustering import cluster_pipeline  # noqa: E402
from objmap.dataset import load_manifest  # noqa: E402
from objmap.mask_graph import compute_descriptors  # noqa: E402
from objmap.synthetic import generate_synthetic_scene, single_box_scene, three_box_scene  # noqa: E402


@pytest.fixture(scope="session")
def three_box_dir(tmp_path_factory):
    return generate_synthetic_scene(three_box_scene(20), tmp_path_factory.mktemp("three_boxes"), seed=0)


@pytest.fixture(scope="session")
def three_box(three_box_dir):
    return load_manifest(three_box_dir)


@pytest.fixture(scope="session")
def three_box_descriptors(three_box):
    return compute_descriptors(three_box)


@pytest.fixture(scope="session")
def three_box_clusters(three_box_descriptors):
    return cluster_pipeline(three_box_descriptors, keep_similarity=True)


@pytest.fixture(scope="session")
def single_box_dir(tmp_path_factory):
    return generate_synthetic_scene(single_box_scene(), tmp_path_factory.mktemp("single_box"), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
