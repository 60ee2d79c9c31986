"""Louvain community detection on weighted undirected graphs.

Resolution is fixed at 1. A node moves only if that strictly increases
modularity; among equally good target communities the lowest index wins.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
from scipy import sparse

from .mask_graph import MaskGraph

GraphLike = Union[MaskGraph, sparse.spmatrix, np.ndarray]


def _as_csr(graph: GraphLike) -> sparse.csr_matrix:
    if isinstance(graph, MaskGraph):
        adj = graph.adjacency()
    elif sparse.issparse(graph):
        adj = sparse.csr_matrix(graph, dtype=np.float64)
    else:
        adj = sparse.csr_matrix(np.asarray(graph, dtype=np.float64))
    if adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if adj.nnz and adj.data.min() < 0:
        raise ValueError("edge weights must be non-negative")
    adj.sum_duplicates()
    return adj


def modularity(graph: GraphLike, labels: np.ndarray) -> float:
    """Q = (1/2m) sum_ij [A_ij - k_i k_j / 2m] delta(c_i, c_j)."""
    adj = _as_csr(graph)
    labels = np.asarray(labels)
    two_m = adj.sum()
    if two_m == 0:
        return 0.0
    coo = adj.tocoo()
    inside = coo.data[labels[coo.row] == labels[coo.col]].sum()
    k = np.asarray(adj.sum(axis=1)).ravel()
    tot = np.bincount(labels, weights=k)
    return float(inside / two_m - np.sum((tot / two_m) ** 2))


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel communities 0..C-1 in order of their lowest node index."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv]


def _local_moves(adj: sparse.csr_matrix, order: np.ndarray, history: Optional[list],
                 node_map: np.ndarray, base_adj: sparse.csr_matrix,
                 init: Optional[np.ndarray] = None) -> np.ndarray:
    n = adj.shape[0]
    k = np.asarray(adj.sum(axis=1)).ravel()
    two_m = k.sum()
    comm = np.arange(n) if init is None else init.copy()
    tot = np.bincount(comm, weights=k, minlength=n)
    eps = 1e-12 * max(1.0, float(k.max()) if n else 1.0)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    while True:
        moved = 0
        for i in order:
            ci = comm[i]
            links: dict[int, float] = {}
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    c = comm[j]
                    links[c] = links.get(c, 0.0) + data[p]
            tot[ci] -= k[i]
            scale = k[i] / two_m
            stay = links.get(ci, 0.0) - tot[ci] * scale
            best_c, best_gain = ci, stay
            for c in sorted(links):
                if c == ci:
                    continue
                gain = links[c] - tot[c] * scale
                if gain > best_gain + eps:
                    best_c, best_gain = c, gain
                elif best_c != ci and abs(gain - best_gain) <= eps and c < best_c:
                    best_c = c
            tot[best_c] += k[i]
            if best_c != ci:
                comm[i] = best_c
                moved += 1
        if history is not None:
            history.append(modularity(base_adj, comm[node_map]))
        if moved == 0:
            return comm


def _aggregate(adj: sparse.csr_matrix, labels: np.ndarray) -> sparse.csr_matrix:
    z = sparse.csr_matrix((np.ones(len(labels)), (np.arange(len(labels)), labels)),
                          shape=(len(labels), labels.max() + 1))
    return (z.T @ adj @ z).tocsr()


def _multilevel(adj: sparse.csr_matrix, labels: np.ndarray, rng: np.random.Generator,
                history: Optional[list]) -> np.ndarray:
    """Local moves + aggregation to a fixpoint, starting from ``labels`` as supernodes."""
    node_map = labels
    level_adj = _aggregate(adj, labels)
    while True:
        order = rng.permutation(level_adj.shape[0])
        comm = _canonical(_local_moves(level_adj, order, history, node_map, adj))
        n_comm = comm.max() + 1
        node_map = comm[node_map]
        if n_comm == level_adj.shape[0]:
            return _canonical(node_map)
        level_adj = _aggregate(level_adj, comm)


def louvain(graph: GraphLike, seed: int = 0, history: Optional[list] = None,
            refine: bool = True) -> np.ndarray:
    """Partition nodes into communities; returns a label per node.

    After the usual multilevel pass, ``refine`` re-runs single-node moves on
    the original graph starting from the found partition and, if anything
    moved, repeats the multilevel pass from the refined partition. Both steps
    only accept strictly positive modularity gains, so the loop terminates.

    Labels are canonical: community ids increase with their lowest member
    index. If ``history`` is a list, modularity of the original graph after
    every local-move sweep is appended to it.
    """
    adj = _as_csr(graph)
    n = adj.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if adj.sum() == 0:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    identity = np.arange(n)
    labels = _multilevel(adj, identity, rng, history)
    while refine:
        refined = _canonical(_local_moves(adj, rng.permutation(n), history, identity, adj, init=labels))
        if np.array_equal(refined, labels):
            break
        labels = _multilevel(adj, refined, rng, history)
    return labels
