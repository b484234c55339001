#include "knnmerge/nn_descent.hpp"

#include <algorithm>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace knnmerge {

namespace {

// k distinct random ids != self, drawn from the per-element stream
void random_row_init(KnnGraph& g, const VectorSet& c, std::uint32_t k, const Metric& metric,
                     std::uint64_t seed, std::uint32_t i) {
    std::mt19937_64 rng(mix_seed(seed, i));
    auto& row = g.rows[i];
    std::vector<std::uint32_t> picked;
    picked.reserve(k);
    while (picked.size() < k) {
        const auto cand = static_cast<std::uint32_t>(rng() % c.n);
        if (cand == i) continue;
        if (std::find(picked.begin(), picked.end(), cand) != picked.end()) continue;
        picked.push_back(cand);
    }
    row.items.reserve(k);
    for (const auto id : picked) {
        row.items.push_back({id, distance_raw(c.row(i), c.row(id), metric), true});
    }
    std::sort(row.items.begin(), row.items.end(), neighbor_less);
}

}  // namespace

KnnGraph nn_descent_build(const VectorSet& c, const NNDescentParams& p, const Metric& metric,
                          NNDescentStats* stats, const IterationCallback& on_iteration) {
    if (c.n <= p.k) throw std::invalid_argument("nn_descent_build: need n > k");
    if (p.lambda < 1 || p.lambda > p.k) {
        throw std::invalid_argument("nn_descent_build: need 1 <= lambda <= k");
    }
    if (!(p.delta > 0.0 && p.delta < 1.0)) {
        throw std::invalid_argument("nn_descent_build: need 0 < delta < 1");
    }
    const std::uint32_t n = c.n;
    const std::uint32_t k = std::min(p.k, n - 1);
    const int threads = resolve_threads(p.threads);
    const auto lambda = p.lambda;

    KnnGraph g(n, k);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
    for (std::uint32_t i = 0; i < n; ++i) {
        random_row_init(g, c, k, metric, p.seed, i);
    }

    std::vector<Spinlock> row_locks(n);
    std::vector<Spinlock> cache_locks(n);
    std::vector<std::vector<std::uint32_t>> fwd_new(n), fwd_old(n);
    std::vector<std::vector<std::uint32_t>> rev_new(n), rev_old(n);

    const auto threshold = static_cast<std::uint64_t>(p.delta * static_cast<double>(n) * k);
    if (stats) *stats = {};

    for (std::uint32_t iter = 1; iter <= p.max_iters; ++iter) {
        // sampling: up to lambda new (true-flag) and lambda old neighbors per
        // row, drawn uniformly among the eligible entries; sampled new
        // entries turn false
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
        for (std::uint32_t i = 0; i < n; ++i) {
            auto& nw = fwd_new[i];
            auto& od = fwd_old[i];
            nw.clear();
            od.clear();
            auto& row = g.rows[i];
            std::mt19937_64 rng(mix_seed(p.seed ^ (0xa5a5ULL * iter), i));

            std::vector<std::uint32_t> pool;
            pool.reserve(row.items.size());
            for (std::uint32_t t = 0; t < row.items.size(); ++t) {
                if (!row.items[t].flag) pool.push_back(t);
            }
            for (std::uint32_t want = std::min<std::uint32_t>(lambda, pool.size()); want > 0;
                 --want) {
                const auto pick = rng() % pool.size();
                od.push_back(row.items[pool[pick]].id);
                pool[pick] = pool.back();
                pool.pop_back();
            }
            pool.clear();
            for (std::uint32_t t = 0; t < row.items.size(); ++t) {
                if (row.items[t].flag) pool.push_back(t);
            }
            for (std::uint32_t want = std::min<std::uint32_t>(lambda, pool.size()); want > 0;
                 --want) {
                const auto pick = rng() % pool.size();
                nw.push_back(row.items[pool[pick]].id);
                row.items[pool[pick]].flag = false;
                pool[pick] = pool.back();
                pool.pop_back();
            }
        }

        // reverse sampling: register i with its sampled neighbors, capped at
        // lambda entries per role (first come keeps the slot)
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
        for (std::uint32_t i = 0; i < n; ++i) {
            for (const auto u : fwd_new[i]) {
                SpinlockGuard lk(cache_locks[u]);
                if (rev_new[u].size() < lambda) rev_new[u].push_back(i);
            }
            for (const auto u : fwd_old[i]) {
                SpinlockGuard lk(cache_locks[u]);
                if (rev_old[u].size() < lambda) rev_old[u].push_back(i);
            }
        }

        std::uint64_t inserts = 0;
        std::uint64_t comps = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 64) num_threads(threads) \
    reduction(+ : inserts, comps)
#endif
        for (std::uint32_t i = 0; i < n; ++i) {
            auto join_lists = [&](const std::vector<std::uint32_t>& fwd,
                                  const std::vector<std::uint32_t>& rev) {
                std::vector<std::uint32_t> out = fwd;
                for (const auto id : rev) {
                    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
                }
                return out;
            };
            const auto news = join_lists(fwd_new[i], rev_new[i]);
            const auto olds = join_lists(fwd_old[i], rev_old[i]);

            // bridge i joins u and v
            auto try_pair = [&](std::uint32_t u, std::uint32_t v) {
                const float dist = distance_raw(c.row(u), c.row(v), metric);
                ++comps;
                {
                    SpinlockGuard lk(row_locks[u]);
                    if (g.rows[u].ordered_insert({v, dist, true})) ++inserts;
                }
                {
                    SpinlockGuard lk(row_locks[v]);
                    if (g.rows[v].ordered_insert({u, dist, true})) ++inserts;
                }
            };
            for (std::size_t a = 0; a < news.size(); ++a) {
                for (std::size_t b = a + 1; b < news.size(); ++b) {
                    if (news[a] != news[b]) try_pair(news[a], news[b]);
                }
                for (const auto v : olds) {
                    if (news[a] != v) try_pair(news[a], v);
                }
            }
        }

        for (std::uint32_t i = 0; i < n; ++i) {
            rev_new[i].clear();
            rev_old[i].clear();
        }

        if (stats) {
            stats->iterations = iter;
            stats->inserts_per_iter.push_back(inserts);
            stats->dist_comps_per_iter.push_back(comps);
            stats->total_dist_comps += comps;
        }
        if (on_iteration) on_iteration(iter, g);
        if (inserts < threshold) break;
    }
    return g;
}

}  // namespace knnmerge
