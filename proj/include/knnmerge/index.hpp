#pragma once

#include <cstdint>
#include <string>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"
#include "knnmerge/merge.hpp"

namespace knnmerge {

struct DiversifyParams {
    float alpha = 1.0f;           // occlusion factor, >= 1
    std::uint32_t max_degree = 64;
};

/// Flat navigable graph: adjacency rows (sorted ascending by distance, at
/// most max_degree entries) plus a search entry point near the centroid.
struct IndexGraph {
    KnnGraph graph;
    std::uint32_t entry_point = 0;
    float alpha = 1.0f;
    std::uint32_t max_degree = 64;
};

/// Element closest to the dataset centroid (medoid approximation).
std::uint32_t medoid(const VectorSet& c, const Metric& metric);

/// Occlusion pruning: scan candidates ascending and keep x_b unless some
/// already-kept x_a lies closer to the owner and alpha * d(a,b) < d(owner,b).
/// With squared distances the rule runs as alpha^2 * d2(a,b) < d2(owner,b),
/// which decides identically. Keeps at most max_degree entries.
NeighborList diversify_neighborhood(std::uint32_t owner, const NeighborList& cands,
                                    const DiversifyParams& p, const VectorSet& c,
                                    const Metric& metric);

/// Applies diversify_neighborhood to every row and recomputes the entry
/// point. Idempotent.
IndexGraph diversify_graph(const KnnGraph& g, const DiversifyParams& p, const VectorSet& c,
                           const Metric& metric);

struct SearchStats {
    std::uint64_t dist_comps = 0;
    std::uint64_t hops = 0;
};

/// Best-first beam search from the entry point with a pool of ef candidates;
/// stops once the nearest unexpanded candidate is worse than the whole pool.
/// Returns the k best pool entries. Requires ef >= k. When `expanded` is
/// given, every node popped for expansion is appended in visit order; the
/// walk spans the space between the entry point and the query, which is what
/// the index builder prunes over.
NeighborList greedy_search(const IndexGraph& idx, const float* query, std::uint32_t ef,
                           std::uint32_t k, const VectorSet& c, const Metric& metric,
                           SearchStats* stats = nullptr,
                           std::vector<Neighbor>* expanded = nullptr);

/// Inserts elements in id order; each insertion searches the current graph
/// with beam ef_construction, diversifies the candidate pool, and links both
/// ways, re-diversifying neighbors that exceed max_degree.
IndexGraph incremental_build(const VectorSet& c, const DiversifyParams& p,
                             std::uint32_t ef_construction, const Metric& metric);

/// Two-way merge over the index adjacencies (nothing is dropped during the
/// merge itself) followed by diversification of every row. The degree caps
/// of the inputs must match; mp.k is forced to that cap.
IndexGraph merge_index_graphs(const VectorSet& c1, const VectorSet& c2, const IndexGraph& idx1,
                              const IndexGraph& idx2, MergeParams mp, const DiversifyParams& dp,
                              const Metric& metric, MergeStats* stats = nullptr);

/// GraphFile plus a one-line sidecar (<path>.meta) that records
/// entry_point, alpha and max_degree.
void write_index(const std::string& path, const IndexGraph& idx);
IndexGraph read_index(const std::string& path);

}  // namespace knnmerge
