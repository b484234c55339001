#include "knnmerge/index.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include "knnmerge/graph_io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace knnmerge {

std::uint32_t medoid(const VectorSet& c, const Metric& metric) {
    if (c.n == 0) throw std::invalid_argument("medoid: empty vector set");
    std::vector<double> centroid(c.d, 0.0);
    for (std::uint32_t i = 0; i < c.n; ++i) {
        const float* row = c.row(i);
        for (std::uint32_t j = 0; j < c.d; ++j) centroid[j] += row[j];
    }
    std::vector<float> mean(c.d);
    for (std::uint32_t j = 0; j < c.d; ++j) {
        mean[j] = static_cast<float>(centroid[j] / c.n);
    }
    std::uint32_t best = 0;
    float best_dist = std::numeric_limits<float>::infinity();
    for (std::uint32_t i = 0; i < c.n; ++i) {
        const float d = distance_raw(mean.data(), c.row(i), metric);
        if (d < best_dist || (d == best_dist && i < best)) {
            best = i;
            best_dist = d;
        }
    }
    return best;
}

namespace {

// one occlusion test, on squared or plain distances depending on the metric
inline bool occludes(float alpha, float d_ab, float d_ib, MetricKind kind) {
    if (kind == MetricKind::SquaredL2) {
        return alpha * alpha * d_ab < d_ib;
    }
    return alpha * d_ab < d_ib;
}

}  // namespace

NeighborList diversify_neighborhood(std::uint32_t owner, const NeighborList& cands,
                                    const DiversifyParams& p, const VectorSet& c,
                                    const Metric& metric) {
    if (p.alpha < 1.0f) throw std::invalid_argument("diversify: alpha must be >= 1");
    NeighborList kept(owner, p.max_degree);
    for (const auto& cand : cands.items) {
        if (kept.items.size() >= p.max_degree) break;
        bool removed = false;
        for (const auto& a : kept.items) {
            if (!(a.dist < cand.dist)) continue;
            const float d_ab = distance_raw(c.row(a.id), c.row(cand.id), metric);
            if (occludes(p.alpha, d_ab, cand.dist, metric.kind)) {
                removed = true;
                break;
            }
        }
        if (!removed) kept.items.push_back(cand);
    }
    return kept;
}

IndexGraph diversify_graph(const KnnGraph& g, const DiversifyParams& p, const VectorSet& c,
                           const Metric& metric) {
    if (p.alpha < 1.0f) throw std::invalid_argument("diversify: alpha must be >= 1");
    IndexGraph idx;
    idx.alpha = p.alpha;
    idx.max_degree = p.max_degree;
    idx.graph = KnnGraph(g.n(), p.max_degree);
    const int threads = resolve_threads(0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 128) num_threads(threads)
#endif
    for (std::uint32_t i = 0; i < g.n(); ++i) {
        idx.graph.rows[i] = diversify_neighborhood(g.rows[i].owner, g.rows[i], p, c, metric);
    }
    idx.entry_point = medoid(c, metric);
    return idx;
}

NeighborList greedy_search(const IndexGraph& idx, const float* query, std::uint32_t ef,
                           std::uint32_t k, const VectorSet& c, const Metric& metric,
                           SearchStats* stats, std::vector<Neighbor>* expanded) {
    if (ef < k) throw std::invalid_argument("greedy_search: ef must be >= k");
    if (idx.graph.n() == 0) throw std::invalid_argument("greedy_search: empty index");

    // pool keeps the ef best results (max on top), frontier the unexpanded
    // candidates (min on top)
    auto worse = [](const Neighbor& a, const Neighbor& b) { return neighbor_less(a, b); };
    auto better = [](const Neighbor& a, const Neighbor& b) { return neighbor_less(b, a); };
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> pool(worse);
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(better)> frontier(better);
    std::vector<bool> visited(idx.graph.n(), false);

    std::uint64_t comps = 0;
    const std::uint32_t entry = idx.entry_point;
    visited[entry] = true;
    const float entry_dist = distance_raw(query, c.row(entry), metric);
    ++comps;
    pool.push({entry, entry_dist, true});
    frontier.push({entry, entry_dist, true});

    std::uint64_t hops = 0;
    while (!frontier.empty()) {
        const Neighbor cur = frontier.top();
        if (pool.size() >= ef && neighbor_less(pool.top(), cur)) break;
        frontier.pop();
        ++hops;
        if (expanded) expanded->push_back(cur);
        for (const auto& nb : idx.graph.rows[cur.id].items) {
            if (visited[nb.id]) continue;
            visited[nb.id] = true;
            const float d = distance_raw(query, c.row(nb.id), metric);
            ++comps;
            if (pool.size() < ef || neighbor_less({nb.id, d, true}, pool.top())) {
                pool.push({nb.id, d, true});
                if (pool.size() > ef) pool.pop();
                frontier.push({nb.id, d, true});
            }
        }
    }
    if (stats) {
        stats->dist_comps = comps;
        stats->hops = hops;
    }

    NeighborList out(idx.graph.n(), k);  // owner outside id space: query result
    std::vector<Neighbor> drained;
    drained.reserve(pool.size());
    while (!pool.empty()) {
        drained.push_back(pool.top());
        pool.pop();
    }
    std::sort(drained.begin(), drained.end(), neighbor_less);
    for (const auto& nb : drained) {
        if (out.items.size() >= k) break;
        out.items.push_back(nb);
    }
    return out;
}

namespace {

/// Search-path candidates for one element: the ef-best pool plus every node
/// the walk expanded. The expanded path spans the space between the entry
/// point and the element, which is where the navigable detour edges live.
NeighborList walk_candidates(const IndexGraph& idx, std::uint32_t i, const VectorSet& c,
                             std::uint32_t ef, const Metric& metric) {
    std::vector<Neighbor> expanded;
    NeighborList pool = greedy_search(idx, c.row(i), ef, ef, c, metric, nullptr, &expanded);
    NeighborList cands(i, ef + static_cast<std::uint32_t>(expanded.size()));
    cands.items.reserve(pool.items.size());
    for (const auto& nb : pool.items) {
        if (nb.id != i) cands.items.push_back(nb);  // during refinement i finds itself
    }
    for (const auto& nb : expanded) {
        if (nb.id == i || cands.contains(nb.id)) continue;
        const auto pos =
            std::lower_bound(cands.items.begin(), cands.items.end(), nb, neighbor_less);
        cands.items.insert(pos, nb);
    }
    return cands;
}

void link_back(IndexGraph& idx, std::uint32_t i, const NeighborList& picked,
               const DiversifyParams& p, const VectorSet& c, const Metric& metric) {
    for (const auto& nb : picked.items) {
        auto& back_row = idx.graph.rows[nb.id];
        NeighborList grown(nb.id, p.max_degree + 1);
        grown.items = back_row.items;
        if (!grown.ordered_insert({i, nb.dist, true})) continue;
        if (grown.items.size() > p.max_degree) {
            back_row = diversify_neighborhood(nb.id, grown, p, c, metric);
        } else {
            grown.capacity = p.max_degree;
            back_row = std::move(grown);
        }
    }
}

}  // namespace

IndexGraph incremental_build(const VectorSet& c, const DiversifyParams& p,
                             std::uint32_t ef_construction, const Metric& metric) {
    if (c.n < 2) throw std::invalid_argument("incremental_build: need at least 2 elements");
    if (p.alpha < 1.0f) throw std::invalid_argument("incremental_build: alpha must be >= 1");

    IndexGraph idx;
    idx.alpha = p.alpha;
    idx.max_degree = p.max_degree;
    idx.graph = KnnGraph(c.n, p.max_degree);
    idx.entry_point = 0;

    // insertion pass prunes at alpha = 1 (the sparsest rule); uninserted
    // nodes have empty rows and no incoming edges, so searches cannot reach
    // them
    DiversifyParams first_pass = p;
    first_pass.alpha = 1.0f;
    for (std::uint32_t i = 1; i < c.n; ++i) {
        const NeighborList cands = walk_candidates(idx, i, c, ef_construction, metric);
        const NeighborList picked = diversify_neighborhood(i, cands, first_pass, c, metric);
        idx.graph.rows[i] = picked;
        link_back(idx, i, picked, first_pass, c, metric);
    }

    // refinement pass over the complete graph re-prunes every element at the
    // target alpha with its current row among the candidates
    idx.entry_point = medoid(c, metric);
    for (std::uint32_t i = 0; i < c.n; ++i) {
        NeighborList cands = walk_candidates(idx, i, c, ef_construction, metric);
        for (const auto& nb : idx.graph.rows[i].items) {
            if (nb.id == i || cands.contains(nb.id)) continue;
            const auto pos =
                std::lower_bound(cands.items.begin(), cands.items.end(), nb, neighbor_less);
            cands.items.insert(pos, nb);
        }
        const NeighborList picked = diversify_neighborhood(i, cands, p, c, metric);
        idx.graph.rows[i] = picked;
        link_back(idx, i, picked, p, c, metric);
    }
    return idx;
}

IndexGraph merge_index_graphs(const VectorSet& c1, const VectorSet& c2, const IndexGraph& idx1,
                              const IndexGraph& idx2, MergeParams mp, const DiversifyParams& dp,
                              const Metric& metric, MergeStats* stats) {
    if (idx1.max_degree != idx2.max_degree) {
        throw std::invalid_argument("merge_index_graphs: degree cap mismatch");
    }
    mp.k = idx1.max_degree;
    const KnnGraph cross = two_way_merge(c1, c2, idx1.graph, idx2.graph, mp, metric, stats);

    // nothing is removed from a neighborhood during the merge itself: each
    // row becomes the union of its index edges and the discovered cross
    // edges, and only the diversification prunes back under the cap
    KnnGraph merged(cross.n(), 2 * idx1.max_degree);
    for (std::uint32_t i = 0; i < cross.n(); ++i) {
        const auto& own = i < c1.n ? idx1.graph.rows[i] : idx2.graph.rows[i - c1.n];
        NeighborList row(i, 2 * idx1.max_degree);
        row.items = cross.rows[i].items;
        for (const auto& nb : own.items) {
            Neighbor shifted{i < c1.n ? nb.id : nb.id + c1.n, nb.dist, nb.flag};
            if (row.contains(shifted.id)) continue;
            const auto pos =
                std::lower_bound(row.items.begin(), row.items.end(), shifted, neighbor_less);
            row.items.insert(pos, shifted);
        }
        merged.rows[i] = std::move(row);
    }

    const VectorSet parts[2] = {c1, c2};
    const VectorSet all = concat_vectors(parts);
    return diversify_graph(merged, dp, all, metric);
}

void write_index(const std::string& path, const IndexGraph& idx) {
    write_graph(path, idx.graph);
    std::ofstream os(path + ".meta", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + ".meta for writing");
    os << "entry_point=" << idx.entry_point << " alpha=" << idx.alpha
       << " max_degree=" << idx.max_degree << '\n';
    if (!os) throw std::runtime_error("short write on " + path + ".meta");
}

IndexGraph read_index(const std::string& path) {
    IndexGraph idx;
    idx.graph = read_graph(path);
    std::ifstream is(path + ".meta");
    if (!is) throw std::runtime_error("cannot open " + path + ".meta");
    std::string line;
    std::getline(is, line);
    std::istringstream ss(line);
    std::string tok;
    bool have_entry = false, have_alpha = false, have_degree = false;
    while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "entry_point") {
            idx.entry_point = static_cast<std::uint32_t>(std::stoul(val));
            have_entry = true;
        } else if (key == "alpha") {
            idx.alpha = std::stof(val);
            have_alpha = true;
        } else if (key == "max_degree") {
            idx.max_degree = static_cast<std::uint32_t>(std::stoul(val));
            have_degree = true;
        }
    }
    if (!have_entry || !have_alpha || !have_degree) {
        throw FormatError("incomplete index sidecar " + path + ".meta", 0);
    }
    return idx;
}

}  // namespace knnmerge
