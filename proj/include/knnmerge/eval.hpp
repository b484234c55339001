#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"
#include "knnmerge/index.hpp"

namespace knnmerge {

/// Exact top-K ids per target, ascending by (distance, id).
struct GroundTruth {
    std::uint32_t depth = 0;
    std::vector<std::uint32_t> ids;  // row-major n x depth

    std::uint32_t n() const {
        return depth == 0 ? 0 : static_cast<std::uint32_t>(ids.size() / depth);
    }
    const std::uint32_t* row(std::uint32_t i) const {
        return ids.data() + static_cast<std::size_t>(i) * depth;
    }
};

/// Exhaustive K-NN of every element of C against C itself, self excluded.
GroundTruth brute_force_knn(const VectorSet& c, std::uint32_t K, const Metric& metric,
                            int threads = 0);

/// Exhaustive K-NN of external targets against C (no self exclusion).
GroundTruth brute_force_knn(const VectorSet& c, const VectorSet& targets, std::uint32_t K,
                            const Metric& metric, int threads = 0);

/// Sum of true positives in every row's top-k prefix over n*k. Rows shorter
/// than k count the missing tail as misses.
double recall_at_k(const KnnGraph& g, const GroundTruth& gt, std::uint32_t k);

struct EvalRow {
    std::string label;
    std::uint32_t k = 0;
    double recall10 = -1.0;   // negative = not measured
    double recall100 = -1.0;
    double seconds = 0.0;
    std::uint64_t dist_comps = 0;
    double qps = 0.0;
};

/// Search sweep: one row per ef value, recall over all queries, wall-clock
/// QPS measured on a single thread.
std::vector<EvalRow> eval_search(const IndexGraph& idx, const VectorSet& data,
                                 const VectorSet& queries, const GroundTruth& gt,
                                 std::span<const std::uint32_t> ef_list, std::uint32_t k,
                                 const Metric& metric);

void write_csv_header(std::ostream& os);
void write_csv_row(std::ostream& os, const EvalRow& row);

/// Ground truth persisted as ivecs (one record of K ids per target).
void write_gt_ivecs(const std::string& path, const GroundTruth& gt);
GroundTruth read_gt_ivecs(const std::string& path);

}  // namespace knnmerge
