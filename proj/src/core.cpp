#include "knnmerge/core.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <thread>

namespace knnmerge {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("KNNMERGE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

MetricKind metric_kind_from_name(const std::string& name) {
    if (name == "l2sq" || name == "squared-l2") return MetricKind::SquaredL2;
    if (name == "l2") return MetricKind::L2;
    if (name == "cosine") return MetricKind::Cosine;
    throw std::invalid_argument("unknown metric: " + name);
}

const char* metric_name(MetricKind kind) {
    switch (kind) {
        case MetricKind::SquaredL2: return "l2sq";
        case MetricKind::L2: return "l2";
        case MetricKind::Cosine: return "cosine";
    }
    return "?";
}

float cosine_distance(const float* a, const float* b, std::uint32_t d) {
    if (std::memcmp(a, b, static_cast<std::size_t>(d) * sizeof(float)) == 0) return 0.f;
    float dot = 0.f, na = 0.f, nb = 0.f;
    for (std::uint32_t i = 0; i < d; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.f || nb == 0.f) return 1.f;
    return std::max(0.f, 1.f - dot / (std::sqrt(na) * std::sqrt(nb)));
}

float distance(std::span<const float> a, std::span<const float> b, const Metric& m) {
    if (a.size() != b.size() || a.size() != m.dim) {
        throw std::invalid_argument("distance: dimension mismatch");
    }
    return distance_raw(a.data(), b.data(), m);
}

// ---------------------------------------------------------------------------
// NeighborList

float NeighborList::worst_dist() const {
    return items.empty() ? std::numeric_limits<float>::infinity() : items.back().dist;
}

bool NeighborList::contains(std::uint32_t id) const {
    for (const auto& nb : items) {
        if (nb.id == id) return true;
    }
    return false;
}

bool NeighborList::ordered_insert(const Neighbor& cand) {
    if (cand.id == owner) {
        throw std::invalid_argument("ordered_insert: self-loop candidate");
    }
    if (capacity == 0) return false;
    if (full() && cand.dist >= items.back().dist) return false;
    if (contains(cand.id)) return false;
    const auto pos = std::lower_bound(items.begin(), items.end(), cand, neighbor_less);
    items.insert(pos, cand);
    if (items.size() > capacity) items.pop_back();
    return true;
}

NeighborList merge_sorted_lists(const NeighborList& a, const NeighborList& b,
                                std::uint32_t k) {
    if (a.owner != b.owner) {
        throw std::invalid_argument("merge_sorted_lists: owner mismatch");
    }
    NeighborList out(a.owner, k);
    out.items.reserve(std::min<std::size_t>(k, a.items.size() + b.items.size()));
    std::size_t ia = 0, ib = 0;
    while (out.items.size() < k && (ia < a.items.size() || ib < b.items.size())) {
        const Neighbor* next;
        if (ib >= b.items.size() ||
            (ia < a.items.size() && !neighbor_less(b.items[ib], a.items[ia]))) {
            next = &a.items[ia++];
        } else {
            next = &b.items[ib++];
        }
        // first occurrence of an id has the smaller distance
        if (!out.contains(next->id)) out.items.push_back(*next);
    }
    return out;
}

// ---------------------------------------------------------------------------
// KnnGraph

KnnGraph::KnnGraph(std::uint32_t n, std::uint32_t k_) : k(k_) {
    rows.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) rows.emplace_back(i, k_);
}

void validate_graph(const KnnGraph& g) {
    for (std::uint32_t i = 0; i < g.n(); ++i) {
        const auto& row = g.rows[i];
        if (row.items.size() > row.capacity) {
            throw std::runtime_error("graph row " + std::to_string(i) + " over capacity");
        }
        for (std::size_t t = 0; t < row.items.size(); ++t) {
            const auto& nb = row.items[t];
            if (nb.id == row.owner) {
                throw std::runtime_error("graph row " + std::to_string(i) + " has a self-loop");
            }
            if (nb.dist < 0.f) {
                throw std::runtime_error("graph row " + std::to_string(i) + " has negative distance");
            }
            if (t > 0 && !neighbor_less(row.items[t - 1], nb)) {
                throw std::runtime_error("graph row " + std::to_string(i) +
                                         " unsorted or duplicate (dist,id)");
            }
            for (std::size_t s = 0; s < t; ++s) {
                if (row.items[s].id == nb.id) {
                    throw std::runtime_error("graph row " + std::to_string(i) +
                                             " has duplicate id " + std::to_string(nb.id));
                }
            }
        }
    }
}

std::uint64_t graph_digest(const KnnGraph& g) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto fold = [&h](const void* p, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    const std::uint32_t n = g.n();
    fold(&n, sizeof n);
    fold(&g.k, sizeof g.k);
    for (const auto& row : g.rows) {
        fold(&row.owner, sizeof row.owner);
        const auto c = static_cast<std::uint32_t>(row.items.size());
        fold(&c, sizeof c);
        for (const auto& nb : row.items) {
            fold(&nb.id, sizeof nb.id);
            fold(&nb.dist, sizeof nb.dist);
            const unsigned char f = nb.flag ? 1 : 0;
            fold(&f, 1);
        }
    }
    return h;
}

KnnGraph reverse_graph(const KnnGraph& g, std::uint32_t cap) {
    KnnGraph rev(g.n(), cap);
    for (std::uint32_t i = 0; i < g.n(); ++i) {
        for (const auto& nb : g.rows[i].items) {
            rev.rows.at(nb.id).ordered_insert({i, nb.dist, nb.flag});
        }
    }
    return rev;
}

// ---------------------------------------------------------------------------
// SubsetMap

SubsetMap::SubsetMap(std::uint32_t m_, std::vector<std::uint32_t> assignment_)
    : m(m_), assignment(std::move(assignment_)) {
    members.resize(m);
    for (std::uint32_t g = 0; g < assignment.size(); ++g) {
        const std::uint32_t s = assignment[g];
        if (s >= m) throw std::invalid_argument("SubsetMap: subset index out of range");
        members[s].push_back(g);  // ascending since g is ascending
    }
}

std::uint32_t SubsetMap::local_of(std::uint32_t global) const {
    const auto& mem = members.at(subset_of(global));
    const auto it = std::lower_bound(mem.begin(), mem.end(), global);
    if (it == mem.end() || *it != global) {
        throw std::invalid_argument("SubsetMap: element not in its subset");
    }
    return static_cast<std::uint32_t>(it - mem.begin());
}

KnnGraph relabel_concat_to_global(const KnnGraph& g, const SubsetMap& map) {
    if (g.n() != map.n()) {
        throw std::invalid_argument("relabel_concat_to_global: size mismatch");
    }
    std::vector<std::uint32_t> concat_to_global(map.n());
    std::uint32_t at = 0;
    for (std::uint32_t s = 0; s < map.m; ++s) {
        for (std::uint32_t r = 0; r < map.subset_size(s); ++r) {
            concat_to_global[at++] = map.global_of(s, r);
        }
    }
    KnnGraph out(map.n(), g.k);
    for (std::uint32_t c = 0; c < g.n(); ++c) {
        auto& row = out.rows[concat_to_global[c]];
        row.items = g.rows[c].items;
        for (auto& nb : row.items) nb.id = concat_to_global.at(nb.id);
        std::sort(row.items.begin(), row.items.end(), neighbor_less);
    }
    return out;
}

KnnGraph concat_graphs(std::span<const KnnGraph> graphs, const SubsetMap& map) {
    if (graphs.size() != map.m) {
        throw std::invalid_argument("concat_graphs: graph count does not match map");
    }
    std::uint32_t k = 0;
    for (const auto& g : graphs) k = std::max(k, g.k);
    KnnGraph out(map.n(), k);
    for (std::uint32_t s = 0; s < map.m; ++s) {
        const auto& g = graphs[s];
        if (g.n() != map.subset_size(s)) {
            throw std::invalid_argument("concat_graphs: subgraph size does not match subset");
        }
        for (std::uint32_t r = 0; r < g.n(); ++r) {
            const std::uint32_t gid = map.global_of(s, r);
            auto& row = out.rows[gid];
            row.items.reserve(g.rows[r].items.size());
            // local -> global is monotone within a subset, so (dist, id)
            // order survives the rewrite
            for (const auto& nb : g.rows[r].items) {
                if (nb.id >= g.n()) {
                    throw std::invalid_argument("concat_graphs: neighbor id out of range");
                }
                row.items.push_back({map.global_of(s, nb.id), nb.dist, nb.flag});
            }
        }
    }
    return out;
}

}  // namespace knnmerge
