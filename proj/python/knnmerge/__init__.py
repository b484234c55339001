"""Approximate k-NN graph construction by subgraph merging."""

from ._knnmerge import (
    IndexGraph,
    KnnGraph,
    brute_force_knn,
    diversify_graph,
    external_storage_build,
    greedy_search,
    hierarchical_merge,
    incremental_build,
    merge_index_graphs,
    multi_way_merge,
    nn_descent_build,
    read_graph,
    read_vecs,
    recall_at_k,
    simulate_cluster,
    synth_dataset,
    two_way_merge_full,
    write_graph,
    write_vecs,
)

__all__ = [
    "IndexGraph",
    "KnnGraph",
    "brute_force_knn",
    "diversify_graph",
    "external_storage_build",
    "greedy_search",
    "hierarchical_merge",
    "incremental_build",
    "merge_index_graphs",
    "multi_way_merge",
    "nn_descent_build",
    "read_graph",
    "read_vecs",
    "recall_at_k",
    "simulate_cluster",
    "synth_dataset",
    "two_way_merge_full",
    "write_graph",
    "write_vecs",
]
