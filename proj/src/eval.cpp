#include "knnmerge/eval.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace knnmerge {

namespace {

GroundTruth brute_force_impl(const VectorSet& c, const VectorSet& targets, std::uint32_t K,
                             const Metric& metric, bool self_exclude, int threads) {
    if (K < 1) throw std::invalid_argument("brute_force_knn: K out of range");
    if (self_exclude ? K >= c.n : K > c.n) {
        throw std::invalid_argument("brute_force_knn: K out of range");
    }
    if (targets.d != c.d) throw std::invalid_argument("brute_force_knn: dimension mismatch");

    GroundTruth gt;
    gt.depth = K;
    gt.ids.resize(static_cast<std::size_t>(targets.n) * K);
    const int t = resolve_threads(threads);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16) num_threads(t)
#endif
    for (std::uint32_t q = 0; q < targets.n; ++q) {
        NeighborList best(self_exclude ? q : c.n, K);
        for (std::uint32_t i = 0; i < c.n; ++i) {
            if (self_exclude && i == q) continue;
            best.ordered_insert({i, distance_raw(targets.row(q), c.row(i), metric), false});
        }
        for (std::uint32_t r = 0; r < K; ++r) {
            gt.ids[static_cast<std::size_t>(q) * K + r] = best.items[r].id;
        }
    }
    return gt;
}

}  // namespace

GroundTruth brute_force_knn(const VectorSet& c, std::uint32_t K, const Metric& metric,
                            int threads) {
    return brute_force_impl(c, c, K, metric, /*self_exclude=*/true, threads);
}

GroundTruth brute_force_knn(const VectorSet& c, const VectorSet& targets, std::uint32_t K,
                            const Metric& metric, int threads) {
    return brute_force_impl(c, targets, K, metric, /*self_exclude=*/false, threads);
}

double recall_at_k(const KnnGraph& g, const GroundTruth& gt, std::uint32_t k) {
    if (k < 1 || k > gt.depth) {
        throw std::invalid_argument("recall_at_k: k exceeds ground-truth depth");
    }
    if (g.n() != gt.n()) {
        throw std::invalid_argument("recall_at_k: graph and ground truth sizes differ");
    }
    std::uint64_t hits = 0;
    for (std::uint32_t i = 0; i < g.n(); ++i) {
        const std::uint32_t* truth = gt.row(i);
        const auto& row = g.rows[i].items;
        const std::size_t take = std::min<std::size_t>(k, row.size());
        for (std::size_t t = 0; t < take; ++t) {
            const std::uint32_t id = row[t].id;
            for (std::uint32_t r = 0; r < k; ++r) {
                if (truth[r] == id) {
                    ++hits;
                    break;
                }
            }
        }
    }
    return static_cast<double>(hits) /
           (static_cast<double>(g.n()) * static_cast<double>(k));
}

std::vector<EvalRow> eval_search(const IndexGraph& idx, const VectorSet& data,
                                 const VectorSet& queries, const GroundTruth& gt,
                                 std::span<const std::uint32_t> ef_list, std::uint32_t k,
                                 const Metric& metric) {
    if (gt.n() != queries.n) {
        throw std::invalid_argument("eval_search: ground truth does not cover the queries");
    }
    std::vector<EvalRow> rows;
    rows.reserve(ef_list.size());
    for (const auto ef : ef_list) {
        if (ef < k) throw std::invalid_argument("eval_search: ef must be >= k");
        EvalRow row;
        row.label = "ef=" + std::to_string(ef);
        row.k = k;

        std::uint64_t hits10 = 0, hits100 = 0, comps = 0;
        const bool do10 = k >= 10 && gt.depth >= 10;
        const bool do100 = k >= 100 && gt.depth >= 100;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::uint32_t q = 0; q < queries.n; ++q) {
            SearchStats st;
            const NeighborList res =
                greedy_search(idx, queries.row(q), ef, k, data, metric, &st);
            comps += st.dist_comps;
            const std::uint32_t* truth = gt.row(q);
            auto count_hits = [&](std::uint32_t cutoff) {
                std::uint64_t h = 0;
                const std::size_t take = std::min<std::size_t>(cutoff, res.items.size());
                for (std::size_t t = 0; t < take; ++t) {
                    for (std::uint32_t r = 0; r < cutoff; ++r) {
                        if (truth[r] == res.items[t].id) {
                            ++h;
                            break;
                        }
                    }
                }
                return h;
            };
            if (do10) hits10 += count_hits(10);
            if (do100) hits100 += count_hits(100);
        }
        const auto t1 = std::chrono::steady_clock::now();
        row.seconds = std::chrono::duration<double>(t1 - t0).count();
        row.dist_comps = comps;
        row.qps = row.seconds > 0 ? queries.n / row.seconds : 0.0;
        if (do10) {
            row.recall10 = static_cast<double>(hits10) / (10.0 * queries.n);
        }
        if (do100) {
            row.recall100 = static_cast<double>(hits100) / (100.0 * queries.n);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_csv_header(std::ostream& os) {
    os << "label,k,recall_at_10,recall_at_100,seconds,dist_comps,qps\n";
}

void write_csv_row(std::ostream& os, const EvalRow& row) {
    os << row.label << ',' << row.k << ',';
    if (row.recall10 >= 0) os << row.recall10;
    os << ',';
    if (row.recall100 >= 0) os << row.recall100;
    os << ',' << row.seconds << ',' << row.dist_comps << ',' << row.qps << '\n';
}

// GT ids are written straight as int32 records so large ids never pass
// through float.

void write_gt_ivecs(const std::string& path, const GroundTruth& gt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    auto put_u32 = [&os](std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v),
                                    static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    for (std::uint32_t i = 0; i < gt.n(); ++i) {
        put_u32(gt.depth);
        for (std::uint32_t r = 0; r < gt.depth; ++r) put_u32(gt.row(i)[r]);
    }
    if (!os) throw std::runtime_error("short write on " + path);
}

GroundTruth read_gt_ivecs(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    auto get_u32 = [&bytes](std::size_t off) {
        return static_cast<std::uint32_t>(bytes[off]) |
               (static_cast<std::uint32_t>(bytes[off + 1]) << 8) |
               (static_cast<std::uint32_t>(bytes[off + 2]) << 16) |
               (static_cast<std::uint32_t>(bytes[off + 3]) << 24);
    };
    GroundTruth gt;
    std::size_t off = 0;
    while (off < bytes.size()) {
        if (off + 4 > bytes.size()) throw FormatError("truncated record header in " + path, off);
        const std::uint32_t d = get_u32(off);
        off += 4;
        if (gt.depth == 0) {
            gt.depth = d;
        } else if (d != gt.depth) {
            throw FormatError("inconsistent depth in " + path, off - 4);
        }
        if (off + 4ull * d > bytes.size()) {
            throw FormatError("truncated record payload in " + path, off);
        }
        for (std::uint32_t r = 0; r < d; ++r) {
            gt.ids.push_back(get_u32(off));
            off += 4;
        }
    }
    return gt;
}

}  // namespace knnmerge
