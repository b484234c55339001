#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"

namespace knnmerge {

struct NNDescentParams {
    std::uint32_t k = 20;
    std::uint32_t lambda = 10;   // sample cap per role (new / old / reverse)
    std::uint32_t max_iters = 30;
    double delta = 0.001;        // stop when inserts per iteration < delta * n * k
    std::uint64_t seed = 0;
    int threads = 0;             // 0 = KNNMERGE_THREADS or hardware default
};

struct NNDescentStats {
    std::uint32_t iterations = 0;
    std::vector<std::uint64_t> inserts_per_iter;
    std::vector<std::uint64_t> dist_comps_per_iter;
    std::uint64_t total_dist_comps = 0;

    /// Successful ordered_insert calls in the most recent iteration.
    std::uint64_t last_insertions() const {
        return inserts_per_iter.empty() ? 0 : inserts_per_iter.back();
    }
};

/// Called at the end of every iteration with the current graph snapshot.
using IterationCallback = std::function<void(std::uint32_t iter, const KnnGraph&)>;

/// Classic iterative refinement from a seeded random graph: sample up to
/// lambda new and lambda old neighbors plus reverse neighbors (capped at
/// lambda per role), cross-match new-new and new-old pairs through their
/// common owner, and insert improving edges until convergence.
///
/// Rows end up with exactly min(k, n-1) neighbors. Single-threaded runs are
/// bit-deterministic for a fixed seed.
KnnGraph nn_descent_build(const VectorSet& c, const NNDescentParams& p, const Metric& metric,
                          NNDescentStats* stats = nullptr,
                          const IterationCallback& on_iteration = {});

}  // namespace knnmerge
