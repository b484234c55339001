#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "knnmerge/eval.hpp"
#include "knnmerge/index.hpp"

using namespace knnmerge;
namespace fs = std::filesystem;

namespace {

Metric l2sq(const VectorSet& vs) { return {MetricKind::SquaredL2, vs.d}; }

VectorSet points(std::initializer_list<std::initializer_list<float>> rows) {
    VectorSet vs;
    vs.n = static_cast<std::uint32_t>(rows.size());
    vs.d = static_cast<std::uint32_t>(rows.begin()->size());
    for (const auto& r : rows) vs.data.insert(vs.data.end(), r.begin(), r.end());
    return vs;
}

NeighborList candidates_for(std::uint32_t owner, const VectorSet& vs, std::uint32_t cap) {
    NeighborList cands(owner, cap);
    for (std::uint32_t i = 0; i < vs.n; ++i) {
        if (i == owner) continue;
        cands.ordered_insert({i, distance_raw(vs.row(owner), vs.row(i), l2sq(vs)), false});
    }
    return cands;
}

// exhaustive statement of the occlusion rule for one diversified row
void check_eq1_soundness(std::uint32_t owner, const NeighborList& cands,
                         const NeighborList& kept, float alpha, const VectorSet& vs) {
    const Metric metric = l2sq(vs);
    for (const auto& cand : cands.items) {
        const bool was_kept = kept.contains(cand.id);
        bool witness = false;
        for (const auto& a : kept.items) {
            if (a.id == cand.id) continue;
            const float d_ab = distance_raw(vs.row(a.id), vs.row(cand.id), metric);
            if (a.dist < cand.dist && alpha * alpha * d_ab < cand.dist) {
                witness = true;
                break;
            }
        }
        if (was_kept) {
            CHECK_FALSE(witness);
        } else if (kept.items.size() < kept.capacity) {
            // dropped for cause, not for the degree cap
            CHECK(witness);
        }
    }
}

}  // namespace

TEST_SUITE("diversify_neighborhood") {
    TEST_CASE("unit example: collinear occlusion, orthogonal survivor") {
        const VectorSet vs = points({{0.f, 0.f}, {1.f, 0.f}, {1.1f, 0.f}, {0.f, 2.f}});
        DiversifyParams p;
        p.alpha = 1.0f;
        p.max_degree = 8;
        const NeighborList cands = candidates_for(0, vs, 8);
        const NeighborList kept = diversify_neighborhood(0, cands, p, vs, l2sq(vs));
        REQUIRE(kept.items.size() == 2);
        CHECK(kept.items[0].id == 1);  // (1, 0)
        CHECK(kept.items[1].id == 3);  // (0, 2)
    }

    TEST_CASE("single candidate is always kept") {
        const VectorSet vs = points({{0.f, 0.f}, {3.f, 1.f}});
        const NeighborList cands = candidates_for(0, vs, 4);
        const NeighborList kept =
            diversify_neighborhood(0, cands, DiversifyParams{1.5f, 4}, vs, l2sq(vs));
        REQUIRE(kept.items.size() == 1);
        CHECK(kept.items[0].id == 1);
    }

    TEST_CASE("alpha=10 still removes the collinear point") {
        const VectorSet vs = points({{0.f, 0.f}, {1.f, 0.f}, {1.1f, 0.f}, {0.f, 2.f}});
        const NeighborList cands = candidates_for(0, vs, 8);
        const NeighborList kept =
            diversify_neighborhood(0, cands, DiversifyParams{10.f, 8}, vs, l2sq(vs));
        CHECK_FALSE(kept.contains(2));
    }

    TEST_CASE("larger alpha weakens occlusion and keeps at least as many edges") {
        // removal needs alpha * d(a,b) < d(i,b), so growing alpha makes the
        // test harder to satisfy; alpha = 1 is the most aggressive pruner
        std::mt19937_64 rng(23);
        for (int t = 0; t < 200; ++t) {
            VectorSet vs;
            vs.n = 24;
            vs.d = 4;
            std::normal_distribution<float> noise(0.f, 1.f);
            for (std::uint32_t i = 0; i < vs.n * vs.d; ++i) vs.data.push_back(noise(rng));
            const NeighborList cands = candidates_for(0, vs, vs.n);
            const auto tight =
                diversify_neighborhood(0, cands, DiversifyParams{1.0f, vs.n}, vs, l2sq(vs));
            const auto loose =
                diversify_neighborhood(0, cands, DiversifyParams{1.7f, vs.n}, vs, l2sq(vs));
            CHECK(loose.items.size() >= tight.items.size());
        }
    }

    TEST_CASE("alpha below one is rejected") {
        const VectorSet vs = points({{0.f, 0.f}, {1.f, 0.f}});
        const NeighborList cands = candidates_for(0, vs, 2);
        CHECK_THROWS_AS(diversify_neighborhood(0, cands, DiversifyParams{0.9f, 2}, vs, l2sq(vs)),
                        std::invalid_argument);
    }
}

TEST_SUITE("diversify_graph") {
    TEST_CASE("idempotent, capped, and sound") {
        const VectorSet vs = synth_dataset(600, 8, 4, 51);
        const GroundTruth gt = brute_force_knn(vs, 24, l2sq(vs));
        KnnGraph g(vs.n, 24);
        for (std::uint32_t i = 0; i < vs.n; ++i) {
            for (std::uint32_t r = 0; r < 24; ++r) {
                const auto id = gt.row(i)[r];
                g.rows[i].ordered_insert(
                    {id, distance_raw(vs.row(i), vs.row(id), l2sq(vs)), false});
            }
        }
        DiversifyParams p;
        p.alpha = 1.0f;
        p.max_degree = 12;
        const IndexGraph idx = diversify_graph(g, p, vs, l2sq(vs));

        std::uint64_t removed = 0;
        for (std::uint32_t i = 0; i < vs.n; ++i) {
            CHECK(idx.graph.rows[i].items.size() <= 12);
            removed += g.rows[i].items.size() - idx.graph.rows[i].items.size();
            check_eq1_soundness(i, g.rows[i], idx.graph.rows[i], p.alpha, vs);
        }
        CHECK(removed > 0);

        const IndexGraph twice = diversify_graph(idx.graph, p, vs, l2sq(vs));
        CHECK(graph_digest(twice.graph) == graph_digest(idx.graph));
        CHECK(twice.entry_point == idx.entry_point);
    }
}

TEST_SUITE("incremental_build and greedy_search") {
    TEST_CASE("two elements link to each other") {
        const VectorSet vs = points({{0.f, 0.f}, {1.f, 1.f}});
        const IndexGraph idx = incremental_build(vs, DiversifyParams{1.0f, 4}, 8, l2sq(vs));
        REQUIRE(idx.graph.rows[0].items.size() == 1);
        REQUIRE(idx.graph.rows[1].items.size() == 1);
        CHECK(idx.graph.rows[0].items[0].id == 1);
        CHECK(idx.graph.rows[1].items[0].id == 0);
    }

    TEST_CASE("degree caps hold everywhere") {
        const VectorSet vs = synth_dataset(400, 8, 4, 52);
        const IndexGraph idx = incremental_build(vs, DiversifyParams{1.0f, 10}, 32, l2sq(vs));
        for (const auto& row : idx.graph.rows) CHECK(row.items.size() <= 10);
        validate_graph(idx.graph);
    }

    TEST_CASE("an indexed vector ranks first for its own query") {
        const VectorSet vs = synth_dataset(1000, 8, 4, 53);
        const IndexGraph idx = incremental_build(vs, DiversifyParams{1.0f, 16}, 64, l2sq(vs));
        std::mt19937_64 rng(5);
        for (int t = 0; t < 50; ++t) {
            const auto q = static_cast<std::uint32_t>(rng() % vs.n);
            const NeighborList res = greedy_search(idx, vs.row(q), 32, 5, vs, l2sq(vs));
            REQUIRE_FALSE(res.items.empty());
            CHECK(res.items[0].id == q);
            CHECK(res.items[0].dist == 0.f);
        }
    }

    TEST_CASE("fully connected expansion is exact") {
        const VectorSet vs = synth_dataset(128, 6, 3, 54);
        IndexGraph idx;
        idx.max_degree = vs.n - 1;
        idx.graph = KnnGraph(vs.n, vs.n - 1);
        for (std::uint32_t i = 0; i < vs.n; ++i) {
            for (std::uint32_t j = 0; j < vs.n; ++j) {
                if (i != j) {
                    idx.graph.rows[i].ordered_insert(
                        {j, distance_raw(vs.row(i), vs.row(j), l2sq(vs)), false});
                }
            }
        }
        idx.entry_point = medoid(vs, l2sq(vs));
        const VectorSet queries = synth_dataset(20, 6, 3, 55);
        const GroundTruth gt = brute_force_knn(vs, queries, 10, l2sq(vs));
        for (std::uint32_t q = 0; q < queries.n; ++q) {
            const NeighborList res =
                greedy_search(idx, queries.row(q), vs.n, 10, vs, l2sq(vs));
            REQUIRE(res.items.size() == 10);
            for (std::uint32_t r = 0; r < 10; ++r) CHECK(res.items[r].id == gt.row(q)[r]);
        }
    }

    TEST_CASE("hill climbing with ef=k=1 terminates") {
        const VectorSet vs = synth_dataset(300, 4, 2, 56);
        const IndexGraph idx = incremental_build(vs, DiversifyParams{1.0f, 8}, 16, l2sq(vs));
        const NeighborList res = greedy_search(idx, vs.row(7), 1, 1, vs, l2sq(vs));
        CHECK(res.items.size() == 1);
    }

    TEST_CASE("never computes a distance to the same id twice") {
        const VectorSet vs = synth_dataset(500, 8, 4, 57);
        const IndexGraph idx = incremental_build(vs, DiversifyParams{1.0f, 12}, 32, l2sq(vs));
        SearchStats st;
        greedy_search(idx, vs.row(3), 64, 10, vs, l2sq(vs), &st);
        CHECK(st.dist_comps <= vs.n);
    }

    TEST_CASE("ef below k is rejected") {
        const VectorSet vs = points({{0.f, 0.f}, {1.f, 1.f}});
        const IndexGraph idx = incremental_build(vs, DiversifyParams{1.0f, 4}, 8, l2sq(vs));
        CHECK_THROWS_AS(greedy_search(idx, vs.row(0), 2, 4, vs, l2sq(vs)),
                        std::invalid_argument);
    }
}

TEST_SUITE("merge_index_graphs") {
    TEST_CASE("far-apart halves survive merging unchanged up to the diversify fixpoint") {
        const VectorSet base = synth_dataset(500, 8, 4, 58);
        VectorSet shifted = base;
        for (auto& v : shifted.data) v += 1000.f;
        shifted.id_base = base.n;

        DiversifyParams dp{1.0f, 8};
        const IndexGraph i1 = incremental_build(base, dp, 32, l2sq(base));
        const IndexGraph i2 = incremental_build(shifted, dp, 32, l2sq(base));
        MergeParams mp;
        mp.lambda = 8;
        mp.seed = 3;
        const IndexGraph merged =
            merge_index_graphs(base, shifted, i1, i2, mp, dp, l2sq(base));

        // within each half the merged adjacency equals the half's own
        // diversify fixpoint: far candidates sort after every near one, so
        // they cannot change near keep/drop decisions; short rows may pick
        // up far cross edges that survive the occlusion rule
        const IndexGraph fix1 = diversify_graph(i1.graph, dp, base, l2sq(base));
        for (std::uint32_t i = 0; i < base.n; ++i) {
            std::vector<std::uint32_t> near;
            for (const auto& nb : merged.graph.rows[i].items) {
                if (nb.id < base.n) near.push_back(nb.id);
            }
            REQUIRE(near.size() == fix1.graph.rows[i].items.size());
            for (std::size_t t = 0; t < near.size(); ++t) {
                CHECK(near[t] == fix1.graph.rows[i].items[t].id);
            }
        }
        for (const auto& row : merged.graph.rows) CHECK(row.items.size() <= dp.max_degree);
    }

    TEST_CASE("degree cap mismatch is rejected") {
        const VectorSet vs = synth_dataset(100, 4, 2, 59);
        auto [subsets, map] = partition(vs, 2, PartitionStrategy::Contiguous);
        const IndexGraph a = incremental_build(subsets[0], DiversifyParams{1.0f, 8}, 16,
                                               l2sq(vs));
        const IndexGraph b = incremental_build(subsets[1], DiversifyParams{1.0f, 6}, 16,
                                               l2sq(vs));
        MergeParams mp;
        CHECK_THROWS_AS(
            merge_index_graphs(subsets[0], subsets[1], a, b, mp, DiversifyParams{1.0f, 8},
                               l2sq(vs)),
            std::invalid_argument);
    }
}

TEST_CASE("index files round-trip with their sidecar") {
    const VectorSet vs = synth_dataset(120, 6, 3, 60);
    const IndexGraph idx = incremental_build(vs, DiversifyParams{1.2f, 9}, 24, l2sq(vs));
    const auto dir = fs::temp_directory_path() / "knnmerge_idx_test";
    fs::create_directories(dir);
    const std::string path = (dir / "g.knng").string();
    write_index(path, idx);
    const IndexGraph back = read_index(path);
    CHECK(graph_digest(back.graph) == graph_digest(idx.graph));
    CHECK(back.entry_point == idx.entry_point);
    CHECK(back.alpha == idx.alpha);
    CHECK(back.max_degree == idx.max_degree);
    fs::remove_all(dir);
}
