#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "knnmerge/core.hpp"

using namespace knnmerge;

namespace {

std::vector<float> random_vec(std::mt19937_64& rng, std::uint32_t d) {
    std::normal_distribution<float> dist(0.f, 1.f);
    std::vector<float> v(d);
    for (auto& x : v) x = dist(rng);
    return v;
}

// sort-based reference for list maintenance: collect, sort by (dist, id),
// dedup by id keeping the smaller dist, truncate
std::vector<Neighbor> oracle_topk(std::vector<Neighbor> all, std::uint32_t k) {
    std::sort(all.begin(), all.end(), neighbor_less);
    std::vector<Neighbor> out;
    for (const auto& nb : all) {
        bool seen = false;
        for (const auto& o : out) {
            if (o.id == nb.id) {
                seen = true;
                break;
            }
        }
        if (!seen) out.push_back(nb);
        if (out.size() == k) break;
    }
    return out;
}

}  // namespace

TEST_SUITE("distance") {
    TEST_CASE("pythagorean") {
        const std::vector<float> a{0.f, 0.f}, b{3.f, 4.f};
        const Metric m{MetricKind::SquaredL2, 2};
        CHECK(distance(a, b, m) == 25.f);
        CHECK(distance(a, b, Metric{MetricKind::L2, 2}) == 5.f);
        CHECK(distance(a, a, m) == 0.f);
    }

    TEST_CASE("dimension mismatch") {
        const std::vector<float> a{0.f, 0.f}, b{1.f};
        CHECK_THROWS_AS(distance(a, b, Metric{MetricKind::SquaredL2, 2}), std::invalid_argument);
    }

    TEST_CASE("squared l2 equals l2 squared and matches a double-precision sum") {
        std::mt19937_64 rng(42);
        for (int t = 0; t < 1000; ++t) {
            const std::uint32_t d = 1 + static_cast<std::uint32_t>(rng() % 64);
            const auto a = random_vec(rng, d);
            const auto b = random_vec(rng, d);
            const float sq = distance(a, b, Metric{MetricKind::SquaredL2, d});
            const float l2 = distance(a, b, Metric{MetricKind::L2, d});
            CHECK(std::abs(l2 * l2 - sq) <= 1e-6 * std::max(1.f, sq));

            double ref = 0.0;
            for (std::uint32_t i = 0; i < d; ++i) {
                const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
                ref += diff * diff;
            }
            CHECK(std::abs(sq - ref) <= 1e-5 * std::max(1.0, ref));
        }
    }

    TEST_CASE("symmetry and identity across metrics") {
        std::mt19937_64 rng(7);
        for (const auto kind : {MetricKind::SquaredL2, MetricKind::L2, MetricKind::Cosine}) {
            for (int t = 0; t < 200; ++t) {
                const std::uint32_t d = 2 + static_cast<std::uint32_t>(rng() % 16);
                const auto a = random_vec(rng, d);
                const auto b = random_vec(rng, d);
                const Metric m{kind, d};
                CHECK(distance(a, b, m) == distance(b, a, m));
                CHECK(distance(a, a, m) == 0.f);
            }
        }
    }
}

TEST_SUITE("ordered_insert") {
    TEST_CASE("spec examples") {
        NeighborList list(0, 2);
        REQUIRE(list.ordered_insert({3, 0.2f, true}));
        REQUIRE(list.ordered_insert({8, 0.6f, true}));

        SUBCASE("better candidate evicts the worst") {
            CHECK(list.ordered_insert({4, 0.4f, true}));
            REQUIRE(list.items.size() == 2);
            CHECK(list.items[0].id == 3);
            CHECK(list.items[1].id == 4);
        }
        SUBCASE("worse than worst when full") {
            CHECK_FALSE(list.ordered_insert({9, 0.9f, true}));
            CHECK(list.items[1].id == 8);
        }
        SUBCASE("duplicate id is rejected") {
            CHECK_FALSE(list.ordered_insert({3, 0.1f, true}));
            CHECK(list.items[0].dist == 0.2f);
        }
    }

    TEST_CASE("self loop throws") {
        NeighborList list(5, 4);
        CHECK_THROWS_AS(list.ordered_insert({5, 0.1f, true}), std::invalid_argument);
    }

    TEST_CASE("random insert sequences keep the invariants") {
        std::mt19937_64 rng(1234);
        for (int t = 0; t < 300; ++t) {
            const std::uint32_t cap = 1 + static_cast<std::uint32_t>(rng() % 8);
            const std::uint32_t owner = 1000;
            NeighborList list(owner, cap);
            const int inserts = 1 + static_cast<int>(rng() % 30);
            for (int s = 0; s < inserts; ++s) {
                Neighbor nb{static_cast<std::uint32_t>(rng() % 12),
                            static_cast<float>(rng() % 100) / 10.f, true};
                const auto before = list.items;
                const bool changed = list.ordered_insert(nb);
                CHECK(changed == (list.items != before));

                for (std::size_t i = 0; i < list.items.size(); ++i) {
                    CHECK(list.items[i].id != owner);
                    if (i > 0) CHECK(neighbor_less(list.items[i - 1], list.items[i]));
                    for (std::size_t j = 0; j < i; ++j) {
                        CHECK(list.items[j].id != list.items[i].id);
                    }
                }
                CHECK(list.items.size() <= cap);
            }
        }
    }

    TEST_CASE("insert streams match the sort-based oracle when distances are consistent") {
        // one distinct distance per id, as real usage guarantees; final list
        // content must then equal the exact top-k of everything fed
        std::mt19937_64 rng(4321);
        std::uniform_real_distribution<float> dist(0.f, 1.f);
        for (int t = 0; t < 1000; ++t) {
            const std::uint32_t cap = 1 + static_cast<std::uint32_t>(rng() % 8);
            std::vector<Neighbor> universe;
            for (std::uint32_t id = 0; id < 12; ++id) {
                universe.push_back({id, dist(rng), true});
            }
            NeighborList list(1000, cap);
            std::vector<Neighbor> fed;
            const int inserts = 1 + static_cast<int>(rng() % 40);
            for (int s = 0; s < inserts; ++s) {
                const auto& nb = universe[rng() % universe.size()];
                list.ordered_insert(nb);
                fed.push_back(nb);
            }
            const auto expect = oracle_topk(fed, cap);
            REQUIRE(list.items.size() == expect.size());
            for (std::size_t i = 0; i < expect.size(); ++i) {
                CHECK(list.items[i].id == expect[i].id);
                CHECK(list.items[i].dist == expect[i].dist);
            }
        }
    }
}

TEST_SUITE("merge_sorted_lists") {
    TEST_CASE("spec examples") {
        NeighborList a(0, 4), b(0, 4);
        a.items = {{2, 0.1f, false}, {5, 0.4f, false}};
        b.items = {{7, 0.2f, false}, {9, 0.5f, false}};
        const auto m = merge_sorted_lists(a, b, 3);
        REQUIRE(m.items.size() == 3);
        CHECK(m.items[0].id == 2);
        CHECK(m.items[1].id == 7);
        CHECK(m.items[2].id == 5);

        NeighborList empty(0, 4);
        const auto ident = merge_sorted_lists(a, empty, 1);
        REQUIRE(ident.items.size() == 1);
        CHECK(ident.items[0].id == 2);
    }

    TEST_CASE("owner mismatch") {
        NeighborList a(0, 2), b(1, 2);
        CHECK_THROWS_AS(merge_sorted_lists(a, b, 2), std::invalid_argument);
    }

    TEST_CASE("matches the sort-dedup-truncate oracle on random pairs") {
        std::mt19937_64 rng(99);
        for (int t = 0; t < 1000; ++t) {
            const std::uint32_t k = 1 + static_cast<std::uint32_t>(rng() % 10);
            auto make = [&](std::uint32_t cap) {
                NeighborList l(77, cap);
                std::vector<Neighbor> items;
                const int size = static_cast<int>(rng() % (cap + 1));
                for (int s = 0; s < size; ++s) {
                    items.push_back({static_cast<std::uint32_t>(rng() % 20),
                                     static_cast<float>(rng() % 50) / 10.f, false});
                }
                l.items = oracle_topk(items, cap);
                return l;
            };
            const auto a = make(1 + static_cast<std::uint32_t>(rng() % 10));
            const auto b = make(1 + static_cast<std::uint32_t>(rng() % 10));

            std::vector<Neighbor> all = a.items;
            all.insert(all.end(), b.items.begin(), b.items.end());
            const auto expect = oracle_topk(all, k);

            const auto got = merge_sorted_lists(a, b, k);
            REQUIRE(got.items.size() == expect.size());
            for (std::size_t i = 0; i < expect.size(); ++i) {
                CHECK(got.items[i].id == expect[i].id);
                CHECK(got.items[i].dist == expect[i].dist);
            }

            // commutativity and idempotence
            const auto rev = merge_sorted_lists(b, a, k);
            REQUIRE(rev.items.size() == got.items.size());
            for (std::size_t i = 0; i < got.items.size(); ++i) {
                CHECK(rev.items[i].id == got.items[i].id);
            }
            const auto self = merge_sorted_lists(a, a, k);
            const auto trunc = oracle_topk(a.items, k);
            REQUIRE(self.items.size() == trunc.size());
            for (std::size_t i = 0; i < trunc.size(); ++i) {
                CHECK(self.items[i].id == trunc[i].id);
            }
        }
    }
}

TEST_SUITE("reverse_graph") {
    TEST_CASE("symmetric pair") {
        KnnGraph g(2, 2);
        g.rows[0].items = {{1, 1.f, false}};
        g.rows[1].items = {{0, 1.f, false}};
        const auto rev = reverse_graph(g, 2);
        REQUIRE(rev.rows[0].items.size() == 1);
        CHECK(rev.rows[0].items[0].id == 1);
        REQUIRE(rev.rows[1].items.size() == 1);
        CHECK(rev.rows[1].items[0].id == 0);
    }

    TEST_CASE("cap keeps the closer reverse neighbor") {
        KnnGraph g(3, 2);
        g.rows[0].items = {{2, 0.5f, false}};
        g.rows[1].items = {{2, 0.9f, false}};
        const auto rev = reverse_graph(g, 1);
        REQUIRE(rev.rows[2].items.size() == 1);
        CHECK(rev.rows[2].items[0].id == 0);
    }

    TEST_CASE("every reverse edge exists in the forward graph") {
        std::mt19937_64 rng(5);
        KnnGraph g(100, 5);
        for (std::uint32_t i = 0; i < 100; ++i) {
            for (int t = 0; t < 5; ++t) {
                const auto id = static_cast<std::uint32_t>(rng() % 100);
                if (id == i) continue;
                g.rows[i].ordered_insert({id, static_cast<float>(rng() % 1000) / 100.f, false});
            }
        }
        const auto rev = reverse_graph(g, 3);
        for (std::uint32_t j = 0; j < 100; ++j) {
            for (const auto& nb : rev.rows[j].items) {
                bool found = false;
                for (const auto& fwd : g.rows[nb.id].items) {
                    if (fwd.id == j && fwd.dist == nb.dist) found = true;
                }
                CHECK(found);
            }
        }
    }
}

TEST_SUITE("subset map and concat") {
    TEST_CASE("concat of two 2-element subgraphs") {
        SubsetMap map(2, {0, 0, 1, 1});
        std::vector<KnnGraph> graphs(2, KnnGraph(2, 2));
        graphs[0].rows[0].items = {{1, 0.5f, false}};
        graphs[0].rows[1].items = {{0, 0.5f, false}};
        graphs[1].rows[0].items = {{1, 0.25f, false}};
        graphs[1].rows[1].items = {{0, 0.25f, false}};
        const auto g = concat_graphs(graphs, map);
        REQUIRE(g.n() == 4);
        CHECK(g.rows[0].items[0].id == 1);
        CHECK(g.rows[2].items[0].id == 3);
        CHECK(g.rows[3].items[0].id == 2);
    }

    TEST_CASE("single subset is identity up to id rewrite") {
        SubsetMap map(1, {0, 0, 0});
        std::vector<KnnGraph> graphs(1, KnnGraph(3, 2));
        graphs[0].rows[0].items = {{2, 1.f, false}};
        graphs[0].rows[1].items = {{0, 2.f, false}};
        graphs[0].rows[2].items = {{0, 1.f, false}};
        const auto g = concat_graphs(graphs, map);
        REQUIRE(g.n() == 3);
        CHECK(g.rows[0].items[0].id == 2);
        CHECK(g.rows[1].items[0].id == 0);
    }

    TEST_CASE("random 4-way split keeps neighbors within their subset") {
        std::mt19937_64 rng(11);
        const std::uint32_t n = 64;
        std::vector<std::uint32_t> assignment(n);
        for (auto& a : assignment) a = static_cast<std::uint32_t>(rng() % 4);
        SubsetMap map(4, assignment);

        std::vector<KnnGraph> graphs;
        for (std::uint32_t s = 0; s < 4; ++s) {
            const std::uint32_t ns = map.subset_size(s);
            KnnGraph g(ns, 3);
            for (std::uint32_t r = 0; r < ns; ++r) {
                for (int t = 0; t < 3; ++t) {
                    const auto id = static_cast<std::uint32_t>(rng() % ns);
                    if (id == r) continue;
                    g.rows[r].ordered_insert({id, static_cast<float>(rng() % 100), false});
                }
            }
            graphs.push_back(std::move(g));
        }
        const auto g = concat_graphs(graphs, map);
        validate_graph(g);
        for (std::uint32_t i = 0; i < n; ++i) {
            for (const auto& nb : g.rows[i].items) {
                CHECK(map.subset_of(nb.id) == map.subset_of(i));
            }
        }
    }

    TEST_CASE("bijection between elements and (subset, local) pairs") {
        std::mt19937_64 rng(3);
        std::vector<std::uint32_t> assignment(137);
        for (auto& a : assignment) a = static_cast<std::uint32_t>(rng() % 5);
        SubsetMap map(5, assignment);
        std::vector<bool> seen(assignment.size(), false);
        for (std::uint32_t s = 0; s < map.m; ++s) {
            for (std::uint32_t r = 0; r < map.subset_size(s); ++r) {
                const auto g = map.global_of(s, r);
                CHECK_FALSE(seen[g]);
                seen[g] = true;
                CHECK(map.subset_of(g) == s);
                CHECK(map.local_of(g) == r);
            }
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }

    TEST_CASE("relabel round-trips concat order") {
        SubsetMap map(2, {1, 0, 1, 0});  // subsets interleaved
        KnnGraph dense(4, 2);
        // concat order: subset0 = globals {1,3}, subset1 = globals {0,2}
        dense.rows[0].items = {{1, 1.f, false}};  // global 1 -> concat 1
        dense.rows[1].items = {{0, 1.f, false}};
        dense.rows[2].items = {{3, 2.f, false}};
        dense.rows[3].items = {{2, 2.f, false}};
        const auto g = relabel_concat_to_global(dense, map);
        CHECK(g.rows[1].items[0].id == 3);  // concat 0 -> global 1, neighbor concat1 -> global 3
        CHECK(g.rows[3].items[0].id == 1);
        CHECK(g.rows[0].items[0].id == 2);
        CHECK(g.rows[2].items[0].id == 0);
    }
}
