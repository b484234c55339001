#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace knnmerge {

// ---------------------------------------------------------------------------
// Errors

/// Malformed file or byte stream; carries the offset where decoding failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeding helpers

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a salt.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt));
}

/// FNV-1a over a byte range, used for content checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Number of worker threads to use: explicit request wins, then the
/// KNNMERGE_THREADS environment variable, then the hardware default.
int resolve_threads(int requested);

// ---------------------------------------------------------------------------
// Small per-row lock for concurrent neighbor-list updates.

class Spinlock {
public:
    void lock() {
        while (flag_.test_and_set(std::memory_order_acquire)) {
        }
    }
    void unlock() { flag_.clear(std::memory_order_release); }

private:
    std::atomic_flag flag_ = ATOMIC_FLAG_INIT;
};

class SpinlockGuard {
public:
    explicit SpinlockGuard(Spinlock& l) : l_(l) { l_.lock(); }
    ~SpinlockGuard() { l_.unlock(); }
    SpinlockGuard(const SpinlockGuard&) = delete;
    SpinlockGuard& operator=(const SpinlockGuard&) = delete;

private:
    Spinlock& l_;
};

// ---------------------------------------------------------------------------
// Metric

enum class MetricKind : std::uint8_t { SquaredL2 = 0, L2 = 1, Cosine = 2 };

struct Metric {
    MetricKind kind = MetricKind::SquaredL2;
    std::uint32_t dim = 0;
};

MetricKind metric_kind_from_name(const std::string& name);
const char* metric_name(MetricKind kind);

/// Squared Euclidean distance with a fixed accumulation order, so results
/// are identical from run to run on the same build.
inline float squared_l2(const float* a, const float* b, std::uint32_t d) {
    float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f;
    std::uint32_t i = 0;
    for (; i + 4 <= d; i += 4) {
        const float d0 = a[i] - b[i];
        const float d1 = a[i + 1] - b[i + 1];
        const float d2 = a[i + 2] - b[i + 2];
        const float d3 = a[i + 3] - b[i + 3];
        s0 += d0 * d0;
        s1 += d1 * d1;
        s2 += d2 * d2;
        s3 += d3 * d3;
    }
    for (; i < d; ++i) {
        const float dd = a[i] - b[i];
        s0 += dd * dd;
    }
    return (s0 + s1) + (s2 + s3);
}

float cosine_distance(const float* a, const float* b, std::uint32_t d);

/// Unchecked distance for hot paths; both vectors must have metric.dim values.
inline float distance_raw(const float* a, const float* b, const Metric& m) {
    switch (m.kind) {
        case MetricKind::SquaredL2:
            return squared_l2(a, b, m.dim);
        case MetricKind::L2:
            return std::sqrt(squared_l2(a, b, m.dim));
        case MetricKind::Cosine:
            return cosine_distance(a, b, m.dim);
    }
    return 0.f;
}

/// Checked distance; throws std::invalid_argument on dimension mismatch.
float distance(std::span<const float> a, std::span<const float> b, const Metric& m);

// ---------------------------------------------------------------------------
// Neighbor containers

struct Neighbor {
    std::uint32_t id = 0;
    float dist = 0.f;
    bool flag = true;  // true = not yet sampled into a Local-Join

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Strict ordering used everywhere: ascending distance, ties by ascending id.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.id < b.id;
}

/// Bounded neighbor list, kept sorted ascending by (dist, id), duplicate-free
/// and self-loop-free.
struct NeighborList {
    std::uint32_t owner = 0;
    std::uint32_t capacity = 0;
    std::vector<Neighbor> items;

    NeighborList() = default;
    NeighborList(std::uint32_t owner_, std::uint32_t capacity_)
        : owner(owner_), capacity(capacity_) {}

    bool full() const { return items.size() >= capacity; }
    float worst_dist() const;
    bool contains(std::uint32_t id) const;

    /// Inserts cand at its sorted position, evicting the worst item when over
    /// capacity. Returns true iff the list changed. Candidates already
    /// present, or not better than the worst item of a full list, are
    /// rejected. A candidate with cand.id == owner is an error.
    bool ordered_insert(const Neighbor& cand);
};

/// Exact top-k of the union of two sorted lists over the same owner.
/// Duplicate ids collapse to their smaller recorded distance.
NeighborList merge_sorted_lists(const NeighborList& a, const NeighborList& b,
                                std::uint32_t k);

struct KnnGraph {
    std::uint32_t k = 0;  // per-row capacity
    std::vector<NeighborList> rows;

    KnnGraph() = default;
    KnnGraph(std::uint32_t n, std::uint32_t k_);

    std::uint32_t n() const { return static_cast<std::uint32_t>(rows.size()); }
};

/// Throws if any row violates the NeighborList invariants or owner layout.
void validate_graph(const KnnGraph& g);

/// Stable content hash of a graph (order-sensitive), for immutability checks.
std::uint64_t graph_digest(const KnnGraph& g);

/// Reverse adjacency of g. Row j holds up to cap ids i with j in g.rows[i];
/// when more exist, the ones closest to j win.
KnnGraph reverse_graph(const KnnGraph& g, std::uint32_t cap);

// ---------------------------------------------------------------------------
// Subset bookkeeping (the SoF operator)

/// Assignment of every element of a dataset to one of m disjoint subsets,
/// plus the induced (subset, local index) <-> global id bijection. Local
/// order within a subset is ascending global id.
struct SubsetMap {
    std::uint32_t m = 0;
    std::vector<std::uint32_t> assignment;            // global id -> subset
    std::vector<std::vector<std::uint32_t>> members;  // subset -> ascending global ids

    SubsetMap() = default;
    SubsetMap(std::uint32_t m_, std::vector<std::uint32_t> assignment_);

    std::uint32_t n() const { return static_cast<std::uint32_t>(assignment.size()); }
    std::uint32_t subset_of(std::uint32_t global) const { return assignment.at(global); }
    std::uint32_t subset_size(std::uint32_t s) const {
        return static_cast<std::uint32_t>(members.at(s).size());
    }
    std::uint32_t global_of(std::uint32_t s, std::uint32_t local) const {
        return members.at(s).at(local);
    }
    /// Local index of a global element within its own subset.
    std::uint32_t local_of(std::uint32_t global) const;
};

/// Concatenates per-subset graphs (rows and neighbor ids local to their
/// subsets) into one graph over global ids.
KnnGraph concat_graphs(std::span<const KnnGraph> graphs, const SubsetMap& map);

/// Rewrites a graph whose rows and ids live in subset-concatenation order
/// (subset 0's elements first, then subset 1's, ...) back to the original
/// global ids of the map. Identity for contiguous maps.
KnnGraph relabel_concat_to_global(const KnnGraph& g, const SubsetMap& map);

}  // namespace knnmerge
