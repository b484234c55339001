#include "knnmerge/merge.hpp"

#include <algorithm>
#include <random>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace knnmerge {

KnnGraph build_sample_graph(const KnnGraph& g0, std::uint32_t lambda) {
    const KnnGraph rev = reverse_graph(g0, lambda);
    KnnGraph s(g0.n(), 2 * lambda);
    const int threads = resolve_threads(0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
    for (std::uint32_t i = 0; i < g0.n(); ++i) {
        auto& out = s.rows[i].items;
        const auto& fwd = g0.rows[i].items;
        const std::size_t nf = std::min<std::size_t>(lambda, fwd.size());
        for (std::size_t t = 0; t < nf; ++t) {
            out.push_back({fwd[t].id, fwd[t].dist, false});
        }
        for (const auto& nb : rev.rows[i].items) {
            if (!s.rows[i].contains(nb.id)) out.push_back({nb.id, nb.dist, false});
        }
        std::sort(out.begin(), out.end(), neighbor_less);
    }
    return s;
}

std::uint64_t subgraph_seed(std::uint64_t seed, std::uint32_t s) {
    return mix_seed(seed, 0x7375620000000000ULL | s);
}

std::uint64_t merge_pair_seed(std::uint64_t seed, std::uint32_t a, std::uint32_t b) {
    const std::uint32_t lo = std::min(a, b);
    const std::uint32_t hi = std::max(a, b);
    return mix_seed(seed, (static_cast<std::uint64_t>(lo) << 32) | hi);
}

namespace {

class CrossMergeEngine {
public:
    CrossMergeEngine(std::span<const MergeSegment> segs, const KnnGraph& sample, MergeAlgo algo,
                     const MergeParams& p, const Metric& metric)
        : segs_(segs.begin(), segs.end()),
          sample_(sample),
          algo_(algo),
          p_(p),
          metric_(metric) {
        if (segs_.size() < 2) {
            throw std::invalid_argument("cross_subset_merge: need at least 2 subsets");
        }
        if (p_.k < 1) throw std::invalid_argument("cross_subset_merge: k must be >= 1");
        if (p_.lambda < 1 || p_.lambda > p_.k) {
            throw std::invalid_argument("cross_subset_merge: need 1 <= lambda <= k");
        }
        offsets_.reserve(segs_.size());
        for (const auto& seg : segs_) {
            if (seg.vecs == nullptr || seg.vecs->n == 0) {
                throw std::invalid_argument("cross_subset_merge: empty segment");
            }
            if (seg.vecs->d != metric_.dim) {
                throw std::invalid_argument("cross_subset_merge: dimension mismatch");
            }
            offsets_.push_back(total_);
            total_ += seg.vecs->n;
        }
        for (std::size_t s = 1; s < segs_.size(); ++s) {
            if (segs_[s].base < segs_[s - 1].base + segs_[s - 1].vecs->n) {
                throw std::invalid_argument("cross_subset_merge: overlapping subsets");
            }
        }
        if (sample_.n() != total_) {
            throw std::invalid_argument("cross_subset_merge: sample graph size mismatch");
        }
    }

    KnnGraph run(MergeStats* stats);

private:
    std::uint32_t seg_count() const { return static_cast<std::uint32_t>(segs_.size()); }

    std::uint32_t seg_of_global(std::uint32_t gid) const {
        std::uint32_t lo = 0, hi = seg_count();
        while (hi - lo > 1) {
            const std::uint32_t mid = (lo + hi) / 2;
            if (segs_[mid].base <= gid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return lo;
    }

    std::uint32_t dense_of_global(std::uint32_t gid) const {
        const std::uint32_t s = seg_of_global(gid);
        return offsets_[s] + (gid - segs_[s].base);
    }

    std::uint32_t global_of_dense(std::uint32_t r) const {
        std::uint32_t lo = 0, hi = seg_count();
        while (hi - lo > 1) {
            const std::uint32_t mid = (lo + hi) / 2;
            if (offsets_[mid] <= r) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return segs_[lo].base + (r - offsets_[lo]);
    }

    std::uint32_t seg_of_dense(std::uint32_t r) const {
        std::uint32_t lo = 0, hi = seg_count();
        while (hi - lo > 1) {
            const std::uint32_t mid = (lo + hi) / 2;
            if (offsets_[mid] <= r) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return lo;
    }

    const float* vec(std::uint32_t gid) const {
        const std::uint32_t s = seg_of_global(gid);
        return segs_[s].vecs->row(gid - segs_[s].base);
    }

    void violation(const std::string& note) {
        SpinlockGuard lk(audit_lock_);
        ++audit_violations_;
        if (audit_notes_.size() < 8) audit_notes_.push_back(note);
    }

    void first_iteration_draws(std::uint32_t r, std::vector<std::uint32_t>& out);
    void sample_phase(std::uint32_t iter);
    void fold_phase();
    void join_phase(std::uint64_t& comps, std::uint64_t& inserts);
    void audit_iteration_end();

    std::vector<MergeSegment> segs_;
    const KnnGraph& sample_;
    MergeAlgo algo_;
    MergeParams p_;
    Metric metric_;

    std::uint32_t total_ = 0;
    std::vector<std::uint32_t> offsets_;

    KnnGraph cross_;
    std::vector<std::vector<std::uint32_t>> new_, old_;
    std::vector<std::vector<std::uint32_t>> rev_new_, rev_old_;
    std::vector<Spinlock> row_locks_, cache_locks_;

    // validate-mode state
    std::vector<std::unordered_set<std::uint32_t>> retired_;
    Spinlock audit_lock_;
    std::uint64_t audit_violations_ = 0;
    std::vector<std::string> audit_notes_;
    int threads_ = 1;
};

void CrossMergeEngine::first_iteration_draws(std::uint32_t r, std::vector<std::uint32_t>& out) {
    const std::uint32_t gid = global_of_dense(r);
    const std::uint32_t own = seg_of_dense(r);
    std::mt19937_64 rng(mix_seed(p_.seed, gid));

    // round-robin over foreign segments, each drawn without replacement
    std::vector<std::uint32_t> foreign;
    foreign.reserve(seg_count() - 1);
    for (std::uint32_t s = 0; s < seg_count(); ++s) {
        if (s != own) foreign.push_back(s);
    }
    std::vector<std::vector<std::uint32_t>> picked(foreign.size());
    std::uint32_t want = p_.lambda;
    bool progress = true;
    while (want > 0 && progress) {
        progress = false;
        for (std::size_t f = 0; f < foreign.size() && want > 0; ++f) {
            const auto& seg = segs_[foreign[f]];
            auto& taken = picked[f];
            if (taken.size() >= seg.vecs->n) continue;
            std::uint32_t cand;
            do {
                cand = seg.base + static_cast<std::uint32_t>(rng() % seg.vecs->n);
            } while (std::find(taken.begin(), taken.end(), cand) != taken.end());
            taken.push_back(cand);
            out.push_back(cand);
            --want;
            progress = true;
        }
    }
}

void CrossMergeEngine::sample_phase(std::uint32_t iter) {
    const bool multiway = algo_ == MergeAlgo::MultiWay;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads_)
#endif
    for (std::uint32_t r = 0; r < total_; ++r) {
        auto& nw = new_[r];
        nw.clear();
        if (multiway) old_[r].clear();

        if (iter == 1) {
            first_iteration_draws(r, nw);
            continue;
        }
        auto& row = cross_.rows[r];
        const std::uint32_t gid = row.owner;
        // closest-first: rows are sorted ascending
        if (multiway) {
            auto& od = old_[r];
            for (const auto& nb : row.items) {
                if (!nb.flag && od.size() < p_.lambda) od.push_back(nb.id);
            }
        }
        for (auto& nb : row.items) {
            if (nb.flag && nw.size() < p_.lambda) {
                if (p_.validate && retired_[r].count(nb.id)) {
                    violation("retired id " + std::to_string(nb.id) + " re-collected by row " +
                              std::to_string(r));
                }
                nw.push_back(nb.id);
                nb.flag = false;
                if (p_.validate) retired_[r].insert(nb.id);
            }
        }
        for (const auto u : nw) {
            const std::uint32_t du = dense_of_global(u);
            SpinlockGuard lk(cache_locks_[du]);
            if (rev_new_[du].size() < p_.lambda) rev_new_[du].push_back(gid);
        }
        if (multiway) {
            for (const auto u : old_[r]) {
                const std::uint32_t du = dense_of_global(u);
                SpinlockGuard lk(cache_locks_[du]);
                if (rev_old_[du].size() < p_.lambda) rev_old_[du].push_back(gid);
            }
        }
    }
}

void CrossMergeEngine::fold_phase() {
    const bool multiway = algo_ == MergeAlgo::MultiWay;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads_)
#endif
    for (std::uint32_t r = 0; r < total_; ++r) {
        if (p_.validate &&
            (rev_new_[r].size() > p_.lambda || rev_old_[r].size() > p_.lambda)) {
            violation("reverse cache over cap, row " + std::to_string(r));
        }
        auto fold = [](std::vector<std::uint32_t>& dst, std::vector<std::uint32_t>& src) {
            for (const auto id : src) {
                if (std::find(dst.begin(), dst.end(), id) == dst.end()) dst.push_back(id);
            }
            src.clear();
        };
        fold(new_[r], rev_new_[r]);
        if (multiway) fold(old_[r], rev_old_[r]);
    }
}

void CrossMergeEngine::join_phase(std::uint64_t& comps, std::uint64_t& inserts) {
    const bool multiway = algo_ == MergeAlgo::MultiWay;
    std::uint64_t c_total = 0, i_total = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 64) num_threads(threads_) \
    reduction(+ : c_total, i_total)
#endif
    for (std::uint32_t r = 0; r < total_; ++r) {
        const auto& nw = new_[r];
        if (nw.empty()) continue;
        const auto& s_row = sample_.rows[r].items;

        std::vector<std::uint32_t> others;
        if (multiway) {
            others.reserve(nw.size() + old_[r].size());
            others.insert(others.end(), nw.begin(), nw.end());
            for (const auto id : old_[r]) {
                if (std::find(others.begin(), others.end(), id) == others.end()) {
                    others.push_back(id);
                }
            }
        }

        auto try_pair = [&](std::uint32_t u, std::uint32_t v) {
            if (p_.validate && seg_of_global(u) == seg_of_global(v)) {
                violation("same-subset join pair (" + std::to_string(u) + ", " +
                          std::to_string(v) + ")");
            }
            const float dist = distance_raw(vec(u), vec(v), metric_);
            ++c_total;
            {
                const std::uint32_t dv = dense_of_global(v);
                SpinlockGuard lk(row_locks_[dv]);
                if (cross_.rows[dv].ordered_insert({u, dist, true})) {
                    ++i_total;
                    if (p_.validate) retired_[dv].erase(u);
                }
            }
            {
                const std::uint32_t du = dense_of_global(u);
                SpinlockGuard lk(row_locks_[du]);
                if (cross_.rows[du].ordered_insert({v, dist, true})) {
                    ++i_total;
                    if (p_.validate) retired_[du].erase(v);
                }
            }
        };

        for (const auto v : nw) {
            for (const auto& snb : s_row) {
                try_pair(snb.id, v);
            }
            if (multiway) {
                const std::uint32_t seg_v = seg_of_global(v);
                for (const auto u : others) {
                    if (u == v) continue;
                    if (seg_of_global(u) == seg_v) continue;
                    try_pair(u, v);
                }
            }
        }
    }
    comps = c_total;
    inserts = i_total;
}

void CrossMergeEngine::audit_iteration_end() {
    for (std::uint32_t r = 0; r < total_; ++r) {
        if (!rev_new_[r].empty() || !rev_old_[r].empty()) {
            violation("reverse cache not cleared after join, row " + std::to_string(r));
        }
        if (new_[r].size() > 2 * p_.lambda) {
            violation("new cache over 2*lambda, row " + std::to_string(r));
        }
        const std::uint32_t own = seg_of_dense(r);
        for (const auto& nb : cross_.rows[r].items) {
            if (seg_of_global(nb.id) == own) {
                violation("same-subset neighbor " + std::to_string(nb.id) + " in cross row " +
                          std::to_string(r));
            }
        }
    }
}

KnnGraph CrossMergeEngine::run(MergeStats* stats) {
    threads_ = resolve_threads(p_.threads);
    cross_ = KnnGraph(total_, p_.k);
    for (std::uint32_t r = 0; r < total_; ++r) {
        cross_.rows[r].owner = global_of_dense(r);
    }
    new_.resize(total_);
    old_.resize(total_);
    rev_new_.resize(total_);
    rev_old_.resize(total_);
    row_locks_ = std::vector<Spinlock>(total_);
    cache_locks_ = std::vector<Spinlock>(total_);
    if (p_.validate) retired_.resize(total_);

    const std::uint64_t sample_digest_before = p_.validate ? graph_digest(sample_) : 0;
    const auto threshold =
        static_cast<std::uint64_t>(p_.delta * static_cast<double>(total_) * p_.k);
    if (stats) *stats = {};

    for (std::uint32_t iter = 1; iter <= p_.max_iters; ++iter) {
        if (p_.validate && iter > 1) {
            // caches must come back empty from the previous round
            for (std::uint32_t r = 0; r < total_; ++r) {
                if (!rev_new_[r].empty() || !rev_old_[r].empty()) {
                    violation("reverse cache not empty before sampling, row " +
                              std::to_string(r));
                }
            }
        }
        sample_phase(iter);
        fold_phase();
        std::uint64_t comps = 0, inserts = 0;
        join_phase(comps, inserts);
        if (stats) {
            stats->iterations = iter;
            stats->dist_comps_per_iter.push_back(comps);
            stats->inserts_per_iter.push_back(inserts);
            stats->total_dist_comps += comps;
        }
        if (p_.validate) audit_iteration_end();
        if (inserts < threshold) break;
    }

    if (p_.validate) {
        if (graph_digest(sample_) != sample_digest_before) {
            violation("sample graph changed during merge");
        }
        if (stats) {
            stats->audit_violations = audit_violations_;
            stats->audit_notes = audit_notes_;
        }
    }
    return std::move(cross_);
}

void check_merge_inputs(std::span<const VectorSet* const> subsets,
                        std::span<const KnnGraph* const> subgraphs, const MergeParams& p,
                        const Metric& metric) {
    if (subsets.size() != subgraphs.size()) {
        throw std::invalid_argument("merge: subset and subgraph counts differ");
    }
    if (subsets.size() < 2) {
        throw std::invalid_argument("merge: need at least 2 subsets");
    }
    for (std::size_t s = 0; s < subsets.size(); ++s) {
        if (subsets[s]->d != metric.dim) {
            throw std::invalid_argument("merge: subset dimension does not match metric");
        }
        if (subgraphs[s]->n() != subsets[s]->n) {
            throw std::invalid_argument("merge: subgraph size does not match subset");
        }
        if (subgraphs[s]->k > p.k) {
            throw std::invalid_argument("merge: subgraph capacity exceeds k");
        }
    }
    // disjointness check over declared id ranges; when every subset is
    // anonymous (id_base 0 across the board) the caller is trusted
    const bool all_anonymous =
        std::all_of(subsets.begin(), subsets.end(),
                    [](const VectorSet* s) { return s->id_base == 0; });
    if (!all_anonymous) {
        for (std::size_t a = 0; a < subsets.size(); ++a) {
            for (std::size_t b = a + 1; b < subsets.size(); ++b) {
                const std::uint64_t a0 = subsets[a]->id_base, a1 = a0 + subsets[a]->n;
                const std::uint64_t b0 = subsets[b]->id_base, b1 = b0 + subsets[b]->n;
                if (a0 < b1 && b0 < a1) {
                    throw std::invalid_argument("merge: overlapping subsets");
                }
            }
        }
    }
}

}  // namespace

KnnGraph cross_subset_merge(std::span<const MergeSegment> segments, const KnnGraph& sample,
                            MergeAlgo algo, const MergeParams& p, const Metric& metric,
                            MergeStats* stats) {
    CrossMergeEngine engine(segments, sample, algo, p, metric);
    return engine.run(stats);
}

namespace {

/// Direct concatenation in subset order with ids rewritten to the dense
/// frame: subset s occupies [offset_s, offset_s + n_s).
KnnGraph concat_dense(std::span<const KnnGraph* const> subgraphs, std::uint32_t k) {
    std::uint32_t n = 0;
    for (const auto* g : subgraphs) n += g->n();
    KnnGraph out(n, k);
    std::uint32_t at = 0;
    for (const auto* g : subgraphs) {
        for (std::uint32_t r = 0; r < g->n(); ++r) {
            auto& row = out.rows[at + r];
            row.items.reserve(g->rows[r].items.size());
            for (const auto& nb : g->rows[r].items) {
                row.items.push_back({nb.id + at, nb.dist, nb.flag});
            }
        }
        at += g->n();
    }
    return out;
}

KnnGraph merge_with_g0(const KnnGraph& cross, const KnnGraph& g0, std::uint32_t k, int threads) {
    KnnGraph out(cross.n(), k);
    const int t = resolve_threads(threads);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(t)
#endif
    for (std::uint32_t r = 0; r < cross.n(); ++r) {
        out.rows[r] = merge_sorted_lists(cross.rows[r], g0.rows[r], k);
    }
    return out;
}

}  // namespace

KnnGraph two_way_merge(const VectorSet& c1, const VectorSet& c2, const KnnGraph& g1,
                       const KnnGraph& g2, const MergeParams& p, const Metric& metric,
                       MergeStats* stats) {
    const VectorSet* subsets[2] = {&c1, &c2};
    const KnnGraph* subgraphs[2] = {&g1, &g2};
    check_merge_inputs(subsets, subgraphs, p, metric);
    const KnnGraph g0 = concat_dense(subgraphs, p.k);
    const KnnGraph sample = build_sample_graph(g0, p.lambda);
    const MergeSegment segs[2] = {{0, &c1}, {c1.n, &c2}};
    return cross_subset_merge(segs, sample, MergeAlgo::TwoWay, p, metric, stats);
}

KnnGraph two_way_merge_full(const VectorSet& c1, const VectorSet& c2, const KnnGraph& g1,
                            const KnnGraph& g2, const MergeParams& p, const Metric& metric,
                            MergeStats* stats) {
    const VectorSet* subsets[2] = {&c1, &c2};
    const KnnGraph* subgraphs[2] = {&g1, &g2};
    check_merge_inputs(subsets, subgraphs, p, metric);
    const KnnGraph g0 = concat_dense(subgraphs, p.k);
    const KnnGraph sample = build_sample_graph(g0, p.lambda);
    const MergeSegment segs[2] = {{0, &c1}, {c1.n, &c2}};
    const KnnGraph cross = cross_subset_merge(segs, sample, MergeAlgo::TwoWay, p, metric, stats);
    return merge_with_g0(cross, g0, p.k, p.threads);
}

KnnGraph multi_way_merge(std::span<const VectorSet> subsets, std::span<const KnnGraph> subgraphs,
                         const MergeParams& p, const Metric& metric, MergeStats* stats) {
    std::vector<const VectorSet*> set_ptrs(subsets.size());
    std::vector<const KnnGraph*> graph_ptrs(subgraphs.size());
    for (std::size_t s = 0; s < subsets.size(); ++s) set_ptrs[s] = &subsets[s];
    for (std::size_t s = 0; s < subgraphs.size(); ++s) graph_ptrs[s] = &subgraphs[s];
    check_merge_inputs(set_ptrs, graph_ptrs, p, metric);

    const KnnGraph g0 = concat_dense(graph_ptrs, p.k);
    const KnnGraph sample = build_sample_graph(g0, p.lambda);
    std::vector<MergeSegment> segs(subsets.size());
    std::uint32_t at = 0;
    for (std::size_t s = 0; s < subsets.size(); ++s) {
        segs[s] = {at, &subsets[s]};
        at += subsets[s].n;
    }
    const KnnGraph cross =
        cross_subset_merge(segs, sample, MergeAlgo::MultiWay, p, metric, stats);
    return merge_with_g0(cross, g0, p.k, p.threads);
}

KnnGraph hierarchical_merge(std::span<const VectorSet> subsets,
                            std::span<const KnnGraph> subgraphs, const MergeParams& p,
                            const Metric& metric, HierarchicalStats* stats) {
    std::vector<const VectorSet*> set_ptrs(subsets.size());
    std::vector<const KnnGraph*> graph_ptrs(subgraphs.size());
    for (std::size_t s = 0; s < subsets.size(); ++s) set_ptrs[s] = &subsets[s];
    for (std::size_t s = 0; s < subgraphs.size(); ++s) graph_ptrs[s] = &subgraphs[s];
    check_merge_inputs(set_ptrs, graph_ptrs, p, metric);
    if (stats) *stats = {};

    std::vector<VectorSet> sets(subsets.begin(), subsets.end());
    std::vector<KnnGraph> graphs(subgraphs.begin(), subgraphs.end());
    std::uint32_t call_index = 0;
    while (sets.size() > 1) {
        std::vector<VectorSet> next_sets;
        std::vector<KnnGraph> next_graphs;
        for (std::size_t t = 0; t + 1 < sets.size(); t += 2) {
            MergeParams call = p;
            call.seed = p.seed + call_index;
            MergeStats call_stats;
            next_graphs.push_back(two_way_merge_full(sets[t], sets[t + 1], graphs[t],
                                                     graphs[t + 1], call, metric, &call_stats));
            const VectorSet pair[2] = {sets[t], sets[t + 1]};
            next_sets.push_back(concat_vectors(pair));
            ++call_index;
            if (stats) {
                stats->merge_calls = call_index;
                stats->per_call.push_back(std::move(call_stats));
                stats->per_call_n.push_back(sets[t].n + sets[t + 1].n);
            }
        }
        if (sets.size() % 2 == 1) {
            // odd graph is promoted unchanged
            next_sets.push_back(std::move(sets.back()));
            next_graphs.push_back(std::move(graphs.back()));
        }
        sets = std::move(next_sets);
        graphs = std::move(next_graphs);
    }
    return std::move(graphs.front());
}

}  // namespace knnmerge
