#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"
#include "knnmerge/merge.hpp"
#include "knnmerge/transport.hpp"

namespace knnmerge {

/// Peer pairing for round `iter` on node i: returns (t, j) where t receives
/// our sample graph and j sends us its own. Valid for 1 <= iter <=
/// ceil((m-1)/2); the final round of an even-sized ring pairs t == j.
std::pair<std::uint32_t, std::uint32_t> schedule(std::uint32_t i, std::uint32_t iter,
                                                 std::uint32_t m);

/// Total rounds: ceil((m-1)/2).
std::uint32_t schedule_rounds(std::uint32_t m);

struct NodeConfig {
    std::uint32_t node_id = 0;
    std::uint32_t m = 0;          // node count; subsets are equal contiguous blocks
    MergeParams params;           // k/lambda/delta/seed shared by build and merges
    Metric metric;
    Transport* transport = nullptr;
};

/// One node of the peer-to-peer build: constructs its subgraph, samples the
/// supporting graph once, then per round exchanges sample graphs per the
/// schedule, runs a two-way merge for its pair and folds both the local and
/// the reclaimed result into its rows. Every node holds the full dataset.
///
/// Returns the node's rows (local frame, owner == local row) with neighbor
/// ids global over C.
KnnGraph run_node(const NodeConfig& cfg, const VectorSet& full);

/// Runs m nodes over an in-process hub and concatenates their outputs into
/// one graph over C. Node merges run single-threaded when p.threads == 1,
/// which makes the result reproducible.
KnnGraph simulate_cluster(const VectorSet& full, std::uint32_t m, const MergeParams& p,
                          const Metric& metric);

struct SpillOptions {
    std::uint32_t m_sub = 4;
    std::uint64_t memory_budget = 0;  // bytes; 0 = unlimited
    std::string workdir;
    bool resume = false;
    int stop_after_pairs = -1;  // test hook: checkpoint and stop after N pair merges
};

struct SpillReport {
    std::uint32_t max_resident_subsets = 0;
    std::uint32_t pairs_done = 0;
    std::uint32_t pairs_skipped = 0;  // already present in the manifest on resume
    bool stopped_early = false;
};

/// Estimated resident bytes for one subset (vectors + graph + sample graph).
std::uint64_t spill_subset_bytes(std::uint32_t subset_n, std::uint32_t d, std::uint32_t k,
                                 std::uint32_t lambda);

/// Smallest m_sub whose two-subset working set fits the budget.
std::uint32_t min_feasible_subsets(std::uint32_t n, std::uint32_t d, std::uint32_t k,
                                   std::uint32_t lambda, std::uint64_t budget);

/// Single-node external-storage build: subgraphs are built one at a time and
/// spilled to workdir; the pairwise merge schedule then runs with exactly two
/// subsets resident. Checkpoints after every pair merge allow resuming.
/// Reads vectors straight from the data file, never holding more than two
/// subsets of them.
KnnGraph external_storage_build(const std::string& data_path, VecFormat fmt,
                                const SpillOptions& opt, const MergeParams& p,
                                const Metric& metric, SpillReport* report = nullptr);

}  // namespace knnmerge
