#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"

namespace knnmerge {

struct MergeParams {
    std::uint32_t k = 20;
    std::uint32_t lambda = 20;   // sample cap per role; sensible range is 16..24
    double delta = 0.001;        // stop when inserts per iteration < delta * n * k
    std::uint32_t max_iters = 30;
    std::uint64_t seed = 0;
    int threads = 0;             // 0 = KNNMERGE_THREADS or hardware default
    bool validate = false;       // run sampling-discipline audits while merging
};

struct MergeStats {
    std::uint32_t iterations = 0;
    std::vector<std::uint64_t> dist_comps_per_iter;
    std::vector<std::uint64_t> inserts_per_iter;
    std::uint64_t total_dist_comps = 0;
    std::uint64_t audit_violations = 0;       // populated only when validate is set
    std::vector<std::string> audit_notes;     // first few violation descriptions
};

/// One immutable per-element sample of intra-subset neighbors: the lambda
/// closest forward neighbors of each row of g0 plus up to lambda closest
/// reverse neighbors, deduplicated and re-sorted. Capacity 2*lambda.
KnnGraph build_sample_graph(const KnnGraph& g0, std::uint32_t lambda);

/// A contiguous id range [base, base + vecs->n) backed by its own vectors.
struct MergeSegment {
    std::uint32_t base = 0;
    const VectorSet* vecs = nullptr;
};

enum class MergeAlgo { TwoWay, MultiWay };

/// The shared cross-matching engine behind both merge algorithms. Rows of
/// `sample` follow segment order; neighbor ids are global. The result keeps,
/// for each element, the best neighbors found in foreign segments only.
KnnGraph cross_subset_merge(std::span<const MergeSegment> segments, const KnnGraph& sample,
                            MergeAlgo algo, const MergeParams& p, const Metric& metric,
                            MergeStats* stats = nullptr);

/// Cross-subset neighbors of every element of C1 u C2 discovered in the
/// opposite subset. Ids are in concatenation order: C1 rows first.
KnnGraph two_way_merge(const VectorSet& c1, const VectorSet& c2, const KnnGraph& g1,
                       const KnnGraph& g2, const MergeParams& p, const Metric& metric,
                       MergeStats* stats = nullptr);

/// Complete graph over C1 u C2: the cross graph merge-sorted with the
/// concatenated subgraphs, row by row.
KnnGraph two_way_merge_full(const VectorSet& c1, const VectorSet& c2, const KnnGraph& g1,
                            const KnnGraph& g2, const MergeParams& p, const Metric& metric,
                            MergeStats* stats = nullptr);

/// Merges m subgraphs at once; same-subset pairs are never compared. The
/// output is finished with a per-row merge sort against the concatenated
/// subgraphs so intra-subset neighbors are kept.
KnnGraph multi_way_merge(std::span<const VectorSet> subsets, std::span<const KnnGraph> subgraphs,
                         const MergeParams& p, const Metric& metric,
                         MergeStats* stats = nullptr);

struct HierarchicalStats {
    std::uint32_t merge_calls = 0;
    std::vector<MergeStats> per_call;
    std::vector<std::uint32_t> per_call_n;  // element count of each two-way call
};

/// Bottom-up driver: repeatedly two-way-merges adjacent graphs until one
/// remains (an odd graph is promoted unchanged), m-1 merges in total.
KnnGraph hierarchical_merge(std::span<const VectorSet> subsets,
                            std::span<const KnnGraph> subgraphs, const MergeParams& p,
                            const Metric& metric, HierarchicalStats* stats = nullptr);

/// Seed used for the subgraph build of subset s under a base seed.
std::uint64_t subgraph_seed(std::uint64_t seed, std::uint32_t s);

/// Seed used for the pairwise merge of subsets {a, b} under a base seed;
/// symmetric in a and b.
std::uint64_t merge_pair_seed(std::uint64_t seed, std::uint32_t a, std::uint32_t b);

}  // namespace knnmerge
