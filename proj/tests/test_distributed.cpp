#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>
#include <thread>

#include "knnmerge/distributed.hpp"
#include "knnmerge/eval.hpp"
#include "knnmerge/graph_io.hpp"
#include "knnmerge/nn_descent.hpp"

using namespace knnmerge;
namespace fs = std::filesystem;

namespace {

Metric l2sq(const VectorSet& vs) { return {MetricKind::SquaredL2, vs.d}; }

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("knnmerge_dist_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// Counts traffic while forwarding to a real endpoint.
class CountingTransport : public Transport {
public:
    CountingTransport(Transport& inner) : inner_(inner) {}
    void send(std::uint32_t to, const Frame& f) override {
        if (f.type != MsgType::Done) ++sends;
        inner_.send(to, f);
    }
    Frame recv(std::uint32_t from) override {
        Frame f = inner_.recv(from);
        if (f.type != MsgType::Done) ++recvs;
        return f;
    }
    std::uint32_t sends = 0, recvs = 0;

private:
    Transport& inner_;
};

}  // namespace

TEST_SUITE("schedule") {
    TEST_CASE("worked examples") {
        CHECK(schedule(0, 1, 5) == std::pair<std::uint32_t, std::uint32_t>{1, 4});
        CHECK(schedule(0, 2, 5) == std::pair<std::uint32_t, std::uint32_t>{2, 3});
        CHECK(schedule_rounds(5) == 2);

        CHECK(schedule(0, 1, 2) == std::pair<std::uint32_t, std::uint32_t>{1, 1});
        CHECK(schedule_rounds(2) == 1);

        CHECK(schedule(0, 2, 4) == std::pair<std::uint32_t, std::uint32_t>{2, 2});
    }

    TEST_CASE("iter bounds") {
        CHECK_THROWS_AS(schedule(0, 0, 5), std::invalid_argument);
        CHECK_THROWS_AS(schedule(0, 3, 5), std::invalid_argument);
        CHECK_THROWS_AS(schedule(5, 1, 5), std::invalid_argument);
    }

    TEST_CASE("every unordered pair is covered exactly once") {
        for (std::uint32_t m = 2; m <= 9; ++m) {
            std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
            std::uint32_t merges = 0;
            for (std::uint32_t iter = 1; iter <= schedule_rounds(m); ++iter) {
                for (std::uint32_t i = 0; i < m; ++i) {
                    const auto [t, j] = schedule(i, iter, m);
                    // the merge node i runs this round covers pair {i, j};
                    // when t == j only the lower id computes
                    if (t == j && i > j) continue;
                    const auto lo = std::min(i, j), hi = std::max(i, j);
                    const bool fresh = seen.insert({lo, hi}).second;
                    CHECK(fresh);
                    ++merges;
                }
            }
            CHECK(merges == m * (m - 1) / 2);
        }
    }
}

TEST_CASE("m=2 simulation is bit-identical to a direct two-way merge") {
    const VectorSet full = synth_dataset(600, 8, 4, 71);
    MergeParams p;
    p.k = 8;
    p.lambda = 6;
    p.seed = 9;
    p.threads = 1;

    const KnnGraph sim = simulate_cluster(full, 2, p, l2sq(full));

    auto [subsets, map] = partition(full, 2, PartitionStrategy::Contiguous);
    std::vector<KnnGraph> graphs;
    for (std::uint32_t s = 0; s < 2; ++s) {
        NNDescentParams np;
        np.k = p.k;
        np.lambda = std::min(p.lambda, p.k);
        np.delta = p.delta;
        np.max_iters = p.max_iters;
        np.threads = 1;
        np.seed = subgraph_seed(p.seed, s);
        graphs.push_back(nn_descent_build(subsets[s], np, l2sq(full)));
    }
    MergeParams direct = p;
    direct.seed = merge_pair_seed(p.seed, 0, 1);
    const KnnGraph ref = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], direct,
                                            l2sq(full));
    CHECK(graph_digest(sim) == graph_digest(ref));
}

TEST_CASE("m=3 on 6 points recovers the exact 2-NN graph") {
    const VectorSet full = synth_dataset(6, 4, 2, 72);
    MergeParams p;
    p.k = 2;
    p.lambda = 2;
    p.seed = 1;
    p.threads = 1;
    const KnnGraph g = simulate_cluster(full, 3, p, l2sq(full));
    const GroundTruth gt = brute_force_knn(full, 2, l2sq(full));
    CHECK(recall_at_k(g, gt, 2) == 1.0);
}

TEST_CASE("message counts per node match the schedule") {
    const VectorSet full = synth_dataset(240, 6, 3, 73);
    MergeParams p;
    p.k = 6;
    p.lambda = 4;
    p.seed = 2;
    p.threads = 1;

    SUBCASE("m=4: one normal round plus one self-paired round") {
        QueueHub hub(4);
        std::vector<std::unique_ptr<Transport>> inner(4);
        std::vector<std::unique_ptr<CountingTransport>> counted(4);
        std::vector<std::thread> workers;
        for (std::uint32_t i = 0; i < 4; ++i) {
            inner[i] = hub.endpoint(i);
            counted[i] = std::make_unique<CountingTransport>(*inner[i]);
        }
        for (std::uint32_t i = 0; i < 4; ++i) {
            workers.emplace_back([&, i] {
                NodeConfig cfg{i, 4, p, l2sq(full), counted[i].get()};
                run_node(cfg, full);
            });
        }
        for (auto& w : workers) w.join();
        for (std::uint32_t i = 0; i < 4; ++i) {
            CHECK(counted[i]->sends == 3);  // 2 in round 1, 1 in round 2
            CHECK(counted[i]->recvs == 3);
        }
    }

    SUBCASE("m=5: two normal rounds") {
        QueueHub hub(5);
        std::vector<std::unique_ptr<Transport>> inner(5);
        std::vector<std::unique_ptr<CountingTransport>> counted(5);
        std::vector<std::thread> workers;
        for (std::uint32_t i = 0; i < 5; ++i) {
            inner[i] = hub.endpoint(i);
            counted[i] = std::make_unique<CountingTransport>(*inner[i]);
        }
        for (std::uint32_t i = 0; i < 5; ++i) {
            workers.emplace_back([&, i] {
                NodeConfig cfg{i, 5, p, l2sq(full), counted[i].get()};
                run_node(cfg, full);
            });
        }
        for (auto& w : workers) w.join();
        for (std::uint32_t i = 0; i < 5; ++i) {
            CHECK(counted[i]->sends == 4);
            CHECK(counted[i]->recvs == 4);
        }
    }
}

TEST_CASE("tcp cluster equals the in-process simulation") {
    const VectorSet full = synth_dataset(300, 6, 3, 74);
    MergeParams p;
    p.k = 6;
    p.lambda = 4;
    p.seed = 5;
    p.threads = 1;

    const std::vector<TcpPeer> peers = {{"127.0.0.1", 29901}, {"127.0.0.1", 29902}};
    std::vector<KnnGraph> node_out(2);
    std::vector<std::exception_ptr> errors(2);
    std::vector<std::thread> workers;
    for (std::uint32_t i = 0; i < 2; ++i) {
        workers.emplace_back([&, i] {
            try {
                TcpTransport transport(i, peers, 60);
                NodeConfig cfg{i, 2, p, l2sq(full), &transport};
                node_out[i] = run_node(cfg, full);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    KnnGraph combined(full.n, p.k);
    for (std::uint32_t i = 0; i < 2; ++i) {
        const auto [begin, count] = contiguous_range(full.n, 2, i);
        for (std::uint32_t r = 0; r < count; ++r) {
            combined.rows[begin + r].items = std::move(node_out[i].rows[r].items);
        }
    }
    const KnnGraph sim = simulate_cluster(full, 2, p, l2sq(full));
    CHECK(graph_digest(combined) == graph_digest(sim));
}

TEST_SUITE("external storage build") {
    TEST_CASE("matches the cluster simulation bit for bit") {
        TempDir dir;
        const VectorSet full = synth_dataset(800, 8, 4, 75);
        const auto data_path = (dir.path / "data.fvecs").string();
        write_vecs(data_path, VecFormat::Fvecs, full);

        MergeParams p;
        p.k = 8;
        p.lambda = 6;
        p.seed = 4;
        p.threads = 1;

        SpillOptions opt;
        opt.m_sub = 4;
        opt.workdir = (dir.path / "work").string();
        SpillReport report;
        const KnnGraph spilled =
            external_storage_build(data_path, VecFormat::Fvecs, opt, p, l2sq(full), &report);
        CHECK(report.max_resident_subsets <= 2);
        CHECK(report.pairs_done == 6);

        const KnnGraph sim = simulate_cluster(full, 4, p, l2sq(full));
        CHECK(graph_digest(spilled) == graph_digest(sim));
    }

    TEST_CASE("infeasible budget names the smallest workable subset count") {
        TempDir dir;
        const VectorSet full = synth_dataset(400, 8, 4, 76);
        const auto data_path = (dir.path / "data.fvecs").string();
        write_vecs(data_path, VecFormat::Fvecs, full);

        MergeParams p;
        p.k = 8;
        p.lambda = 6;
        SpillOptions opt;
        opt.m_sub = 2;
        opt.workdir = (dir.path / "work").string();
        opt.memory_budget = 2 * spill_subset_bytes(50, full.d, p.k, p.lambda);
        CHECK_THROWS_AS(
            external_storage_build(data_path, VecFormat::Fvecs, opt, p, l2sq(full)),
            ConfigError);
        try {
            external_storage_build(data_path, VecFormat::Fvecs, opt, p, l2sq(full));
        } catch (const ConfigError& e) {
            const std::string what = e.what();
            CHECK(what.find("minimum feasible m_sub") != std::string::npos);
        }
    }

    TEST_CASE("interrupt and resume reproduce the uninterrupted graph") {
        TempDir dir;
        const VectorSet full = synth_dataset(500, 6, 3, 77);
        const auto data_path = (dir.path / "data.fvecs").string();
        write_vecs(data_path, VecFormat::Fvecs, full);

        MergeParams p;
        p.k = 6;
        p.lambda = 4;
        p.seed = 8;
        p.threads = 1;

        SpillOptions full_run;
        full_run.m_sub = 4;
        full_run.workdir = (dir.path / "uninterrupted").string();
        const KnnGraph expect =
            external_storage_build(data_path, VecFormat::Fvecs, full_run, p, l2sq(full));

        for (const int stop_at : {1, 3, 5}) {
            SpillOptions stopped;
            stopped.m_sub = 4;
            stopped.workdir = (dir.path / ("stop" + std::to_string(stop_at))).string();
            stopped.stop_after_pairs = stop_at;
            SpillReport report;
            external_storage_build(data_path, VecFormat::Fvecs, stopped, p, l2sq(full), &report);
            CHECK(report.stopped_early);
            CHECK(report.pairs_done == static_cast<std::uint32_t>(stop_at));

            SpillOptions resumed = stopped;
            resumed.stop_after_pairs = -1;
            resumed.resume = true;
            SpillReport report2;
            const KnnGraph got = external_storage_build(data_path, VecFormat::Fvecs, resumed, p,
                                                        l2sq(full), &report2);
            CHECK(report2.pairs_skipped == static_cast<std::uint32_t>(stop_at));
            CHECK(graph_digest(got) == graph_digest(expect));
        }
    }
}
