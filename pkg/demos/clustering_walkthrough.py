"""Step through mask association on the truncated-box scene.

    python demos/clustering_walkthrough.py

Prints the similarity graph, the Louvain communities and what the fine
merge does with the masks of the box cut at the image border.
"""

import tempfile
from collections import Counter

import numpy as np

from objmap.clustering import FineConfig, clusters_from_labels, filter_outliers, fine_merge
from objmap.dataset import load_manifest
from objmap.louvain import louvain, modularity
from objmap.mask_graph import SimilarityConfig, assemble_similarity, build_mask_graph, compute_descriptors
from objmap.synthetic import generate_synthetic_scene, truncated_box_scene


def describe(name, clusters, desc):
    print(f"{name}: {len(clusters)} clusters")
    for c in clusters.clusters:
        ids = Counter(desc[m].gt_id for m in c.members)
        print(f"  {len(c.members):3d} masks, generator ids {dict(ids)}")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        ds = load_manifest(generate_synthetic_scene(truncated_box_scene(), tmp, seed=0))
        desc = compute_descriptors(ds)
    sim = SimilarityConfig()
    S = assemble_similarity(sim, desc)
    graph = build_mask_graph(S, sim.theta_mask)
    print(f"{len(desc)} masks, {len(graph.edges)} edges above {sim.theta_mask}")

    history = []
    labels = louvain(graph, seed=0, history=history)
    print("modularity per sweep:", np.round(history, 4).tolist())
    print(f"final modularity {modularity(graph, labels):.4f}")

    coarse = clusters_from_labels(labels, desc)
    describe("coarse", coarse, desc)
    fine = fine_merge(coarse, FineConfig(), desc)
    describe("after fine merge", fine, desc)
    describe("after outlier filter", filter_outliers(fine), desc)


if __name__ == "__main__":
    main()
