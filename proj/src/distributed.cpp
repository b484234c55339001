#include "knnmerge/distributed.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "knnmerge/graph_io.hpp"
#include "knnmerge/nn_descent.hpp"

namespace knnmerge {

namespace fs = std::filesystem;

std::uint32_t schedule_rounds(std::uint32_t m) {
    if (m < 2) throw std::invalid_argument("schedule_rounds: need m >= 2");
    return (m - 1 + 1) / 2;  // ceil((m-1)/2)
}

std::pair<std::uint32_t, std::uint32_t> schedule(std::uint32_t i, std::uint32_t iter,
                                                 std::uint32_t m) {
    if (m < 2) throw std::invalid_argument("schedule: need m >= 2");
    if (i >= m) throw std::invalid_argument("schedule: node id out of range");
    if (iter < 1 || iter > schedule_rounds(m)) {
        throw std::invalid_argument("schedule: iter out of range");
    }
    const std::uint32_t t = (i + iter) % m;
    const std::uint32_t j = (i + m - iter) % m;
    return {t, j};
}

namespace {

void rebase_ids(KnnGraph& g, std::uint32_t offset) {
    for (auto& row : g.rows) {
        for (auto& nb : row.items) nb.id += offset;
    }
}

/// Per-row exact merge of a cross-subset result into the running graph.
void fold_rows(KnnGraph& g, const KnnGraph& half, std::uint32_t k) {
    if (half.n() != g.n()) throw std::invalid_argument("fold_rows: size mismatch");
    for (std::uint32_t r = 0; r < g.n(); ++r) {
        g.rows[r] = merge_sorted_lists(g.rows[r], half.rows[r], k);
    }
}

void check_sample_payload(const KnnGraph& s, std::uint32_t expect_n, std::uint32_t base,
                          std::uint32_t count, std::uint32_t sender) {
    if (s.n() != expect_n) {
        throw ProtocolError("sample graph from node " + std::to_string(sender) + " has " +
                            std::to_string(s.n()) + " rows, expected " +
                            std::to_string(expect_n));
    }
    for (const auto& row : s.rows) {
        for (const auto& nb : row.items) {
            if (nb.id < base || nb.id >= base + count) {
                throw ProtocolError("sample graph from node " + std::to_string(sender) +
                                    " references id " + std::to_string(nb.id) +
                                    " outside its subset");
            }
        }
    }
}

struct PairHalves {
    KnnGraph mine;   // rows of my subset (local frame, global neighbor ids)
    KnnGraph theirs; // rows of the partner subset
};

/// One two-way merge between two contiguous subsets in their global frame.
/// Subsets are given in canonical (lower base first) order by the caller.
PairHalves pair_merge(const VectorSet& lo_vecs, const VectorSet& hi_vecs, const KnnGraph& s_lo,
                      const KnnGraph& s_hi, std::uint32_t lo, std::uint32_t hi, bool i_am_lo,
                      const MergeParams& p, const Metric& metric, MergeStats* stats = nullptr) {
    const auto lo_base = static_cast<std::uint32_t>(lo_vecs.id_base);
    const auto hi_base = static_cast<std::uint32_t>(hi_vecs.id_base);
    KnnGraph sample(lo_vecs.n + hi_vecs.n, 2 * p.lambda);
    for (std::uint32_t r = 0; r < lo_vecs.n; ++r) {
        sample.rows[r] = s_lo.rows[r];
        sample.rows[r].owner = lo_base + r;
    }
    for (std::uint32_t r = 0; r < hi_vecs.n; ++r) {
        sample.rows[lo_vecs.n + r] = s_hi.rows[r];
        sample.rows[lo_vecs.n + r].owner = hi_base + r;
    }

    MergeParams mp = p;
    mp.seed = merge_pair_seed(p.seed, lo, hi);
    const MergeSegment segs[2] = {{lo_base, &lo_vecs}, {hi_base, &hi_vecs}};
    const KnnGraph cross =
        cross_subset_merge(segs, sample, MergeAlgo::TwoWay, mp, metric, stats);

    auto take = [&](std::uint32_t first, std::uint32_t count) {
        KnnGraph half(count, p.k);
        for (std::uint32_t r = 0; r < count; ++r) {
            half.rows[r].items = cross.rows[first + r].items;
        }
        return half;
    };
    PairHalves out;
    if (i_am_lo) {
        out.mine = take(0, lo_vecs.n);
        out.theirs = take(lo_vecs.n, hi_vecs.n);
    } else {
        out.mine = take(lo_vecs.n, hi_vecs.n);
        out.theirs = take(0, lo_vecs.n);
    }
    return out;
}

Frame recv_expect(Transport& tr, std::uint32_t from, std::uint32_t round, MsgType type) {
    Frame f;
    try {
        f = tr.recv(from);
    } catch (const TransportError& e) {
        throw TransportError("waiting for " + std::string(msg_type_name(type)) + " from node " +
                             std::to_string(from) + " in round " + std::to_string(round) + ": " +
                             e.what());
    }
    if (f.type != type || f.round != round) {
        throw ProtocolError("expected " + std::string(msg_type_name(type)) + " round " +
                            std::to_string(round) + " from node " + std::to_string(from) +
                            ", got " + msg_type_name(f.type) + " round " +
                            std::to_string(f.round));
    }
    return f;
}

}  // namespace

KnnGraph run_node(const NodeConfig& cfg, const VectorSet& full) {
    if (cfg.m < 2) throw std::invalid_argument("run_node: need m >= 2");
    if (cfg.node_id >= cfg.m) throw std::invalid_argument("run_node: node id out of range");
    if (cfg.transport == nullptr) throw std::invalid_argument("run_node: no transport");
    const MergeParams& p = cfg.params;
    const std::uint32_t i = cfg.node_id;

    const auto [begin, count] = contiguous_range(full.n, cfg.m, i);
    if (count < 2) throw std::invalid_argument("run_node: subset too small");
    const VectorSet mine = slice_rows(full, begin, count);

    // tiny subsets cap their subgraph at count-1 neighbors; the merge still
    // fills rows up to k from foreign subsets
    NNDescentParams np;
    np.k = std::min(p.k, count - 1);
    np.lambda = std::min(p.lambda, np.k);
    np.delta = p.delta;
    np.max_iters = p.max_iters;
    np.threads = p.threads;
    np.seed = subgraph_seed(p.seed, i);
    KnnGraph g_local = nn_descent_build(mine, np, cfg.metric);

    KnnGraph sample = build_sample_graph(g_local, p.lambda);
    rebase_ids(sample, begin);
    const auto sample_bytes = encode_graph(sample);

    KnnGraph gi = std::move(g_local);
    rebase_ids(gi, begin);

    Transport& tr = *cfg.transport;
    const std::uint32_t rounds = schedule_rounds(cfg.m);
    for (std::uint32_t iter = 1; iter <= rounds; ++iter) {
        const auto [t, j] = schedule(i, iter, cfg.m);

        auto merge_with = [&](std::uint32_t partner, const Frame& sample_frame) {
            const auto [pbegin, pcount] = contiguous_range(full.n, cfg.m, partner);
            KnnGraph s_partner = decode_graph(sample_frame.payload);
            check_sample_payload(s_partner, pcount, pbegin, pcount, partner);
            const VectorSet theirs = slice_rows(full, pbegin, pcount);
            const bool i_am_lo = i < partner;
            const VectorSet& lo_vecs = i_am_lo ? mine : theirs;
            const VectorSet& hi_vecs = i_am_lo ? theirs : mine;
            const KnnGraph& s_lo = i_am_lo ? sample : s_partner;
            const KnnGraph& s_hi = i_am_lo ? s_partner : sample;
            return pair_merge(lo_vecs, hi_vecs, s_lo, s_hi, std::min(i, partner),
                              std::max(i, partner), i_am_lo, p, cfg.metric);
        };

        if (t == j) {
            // even-m final round: both peers would run the same merge, so the
            // lower id computes and ships both halves
            if (i < j) {
                const Frame fs = recv_expect(tr, j, iter, MsgType::SampleGraph);
                PairHalves halves = merge_with(j, fs);
                fold_rows(gi, halves.mine, p.k);
                tr.send(j, {1, MsgType::ResultGraph, i, iter, encode_graph(halves.theirs)});
            } else {
                tr.send(t, {1, MsgType::SampleGraph, i, iter, sample_bytes});
                const Frame fr = recv_expect(tr, t, iter, MsgType::ResultGraph);
                fold_rows(gi, decode_graph(fr.payload), p.k);
            }
        } else {
            tr.send(t, {1, MsgType::SampleGraph, i, iter, sample_bytes});
            const Frame fs = recv_expect(tr, j, iter, MsgType::SampleGraph);
            PairHalves halves = merge_with(j, fs);
            fold_rows(gi, halves.mine, p.k);
            tr.send(j, {1, MsgType::ResultGraph, i, iter, encode_graph(halves.theirs)});
            const Frame fr = recv_expect(tr, t, iter, MsgType::ResultGraph);
            fold_rows(gi, decode_graph(fr.payload), p.k);
        }
    }

    // closing barrier so no node tears down its transport while peers still
    // expect data
    for (std::uint32_t peer = 0; peer < cfg.m; ++peer) {
        if (peer != i) tr.send(peer, {1, MsgType::Done, i, 0, {}});
    }
    for (std::uint32_t peer = 0; peer < cfg.m; ++peer) {
        if (peer != i) recv_expect(tr, peer, 0, MsgType::Done);
    }
    return gi;
}

KnnGraph simulate_cluster(const VectorSet& full, std::uint32_t m, const MergeParams& p,
                          const Metric& metric) {
    if (m < 2) throw std::invalid_argument("simulate_cluster: need m >= 2");
    QueueHub hub(m);
    std::vector<std::unique_ptr<Transport>> endpoints(m);
    for (std::uint32_t i = 0; i < m; ++i) endpoints[i] = hub.endpoint(i);

    std::vector<KnnGraph> results(m);
    std::vector<std::exception_ptr> errors(m);
    std::vector<std::thread> workers;
    workers.reserve(m);
    for (std::uint32_t i = 0; i < m; ++i) {
        workers.emplace_back([&, i] {
            try {
                NodeConfig cfg;
                cfg.node_id = i;
                cfg.m = m;
                cfg.params = p;
                cfg.metric = metric;
                cfg.transport = endpoints[i].get();
                results[i] = run_node(cfg, full);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    KnnGraph out(full.n, p.k);
    for (std::uint32_t i = 0; i < m; ++i) {
        const auto [begin, count] = contiguous_range(full.n, m, i);
        for (std::uint32_t r = 0; r < count; ++r) {
            out.rows[begin + r].items = std::move(results[i].rows[r].items);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// External-storage (spill) mode

std::uint64_t spill_subset_bytes(std::uint32_t subset_n, std::uint32_t d, std::uint32_t k,
                                 std::uint32_t lambda) {
    const std::uint64_t vectors = static_cast<std::uint64_t>(subset_n) * d * sizeof(float);
    const std::uint64_t graph = static_cast<std::uint64_t>(subset_n) * k * sizeof(Neighbor);
    const std::uint64_t sample =
        static_cast<std::uint64_t>(subset_n) * 2 * lambda * sizeof(Neighbor);
    return vectors + graph + sample;
}

std::uint32_t min_feasible_subsets(std::uint32_t n, std::uint32_t d, std::uint32_t k,
                                   std::uint32_t lambda, std::uint64_t budget) {
    for (std::uint32_t m = 2; m <= n; ++m) {
        const std::uint32_t subset_n = (n + m - 1) / m;
        if (2 * spill_subset_bytes(subset_n, d, k, lambda) <= budget) return m;
    }
    return 0;
}

namespace {

struct Manifest {
    fs::path path;
    std::set<std::uint32_t> subgraphs;
    std::set<std::string> pairs;  // "iter:lo:hi"
    // last recorded checksum per file name
    std::vector<std::pair<std::string, std::uint64_t>> checksums;

    std::uint64_t checksum_of(const std::string& file) const {
        std::uint64_t ck = 0;
        for (const auto& [f, c] : checksums) {
            if (f == file) ck = c;  // last write wins
        }
        return ck;
    }
};

std::string pair_key(std::uint32_t iter, std::uint32_t lo, std::uint32_t hi) {
    return std::to_string(iter) + ":" + std::to_string(lo) + ":" + std::to_string(hi);
}

Manifest load_manifest(const fs::path& path, std::uint32_t n, std::uint32_t m,
                       const MergeParams& p) {
    Manifest mf;
    mf.path = path;
    std::ifstream is(path);
    if (!is) return mf;
    std::string line;
    bool header_ok = false;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "KCKPT") {
            std::string v;
            std::uint32_t hn, hm, hk, hl;
            std::uint64_t hseed;
            ss >> v >> hn >> hm >> hk >> hl >> hseed;
            if (!ss || v != "v1" || hn != n || hm != m || hk != p.k || hl != p.lambda ||
                hseed != p.seed) {
                throw ConfigError("checkpoint manifest does not match this run's parameters");
            }
            header_ok = true;
        } else if (tag == "sub") {
            std::uint32_t s;
            std::string fg, fsamp;
            std::uint64_t ckg, cks;
            ss >> s >> fg >> ckg >> fsamp >> cks;
            if (!ss) throw ConfigError("corrupt manifest line: " + line);
            mf.subgraphs.insert(s);
            mf.checksums.emplace_back(fg, ckg);
            mf.checksums.emplace_back(fsamp, cks);
        } else if (tag == "pair") {
            std::uint32_t iter, lo, hi;
            std::string flo, fhi;
            std::uint64_t cklo, ckhi;
            ss >> iter >> lo >> hi >> flo >> cklo >> fhi >> ckhi;
            if (!ss) throw ConfigError("corrupt manifest line: " + line);
            mf.pairs.insert(pair_key(iter, lo, hi));
            mf.checksums.emplace_back(flo, cklo);
            mf.checksums.emplace_back(fhi, ckhi);
        }
    }
    if (!header_ok && (!mf.subgraphs.empty() || !mf.pairs.empty())) {
        throw ConfigError("checkpoint manifest is missing its header");
    }
    return mf;
}

void append_manifest(const fs::path& path, const std::string& line) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("cannot append to " + path.string());
    os << line << '\n';
    os.flush();
    if (!os) throw std::runtime_error("short write on " + path.string());
}

void write_graph_atomic(const fs::path& path, const KnnGraph& g) {
    const fs::path tmp = path.string() + ".tmp";
    write_graph(tmp.string(), g);
    fs::rename(tmp, path);
}

/// Loaded vectors per subset, with an instrumented residency gauge.
class Residency {
public:
    explicit Residency(SpillReport* report) : report_(report) {}

    void load() {
        ++resident_;
        if (report_ && resident_ > report_->max_resident_subsets) {
            report_->max_resident_subsets = resident_;
        }
    }
    void unload() { --resident_; }

private:
    std::uint32_t resident_ = 0;
    SpillReport* report_;
};

}  // namespace

KnnGraph external_storage_build(const std::string& data_path, VecFormat fmt,
                                const SpillOptions& opt, const MergeParams& p,
                                const Metric& metric, SpillReport* report) {
    const std::uint32_t m = opt.m_sub;
    if (m < 2) throw std::invalid_argument("external_storage_build: need m_sub >= 2");
    const std::uint32_t n = count_vecs(data_path, fmt);
    if (n < m) throw std::invalid_argument("external_storage_build: fewer rows than subsets");

    if (opt.memory_budget > 0) {
        VectorSet probe = read_vecs_range(data_path, fmt, 0, 1);
        const std::uint32_t subset_n = (n + m - 1) / m;
        if (2 * spill_subset_bytes(subset_n, probe.d, p.k, p.lambda) > opt.memory_budget) {
            const std::uint32_t feasible =
                min_feasible_subsets(n, probe.d, p.k, p.lambda, opt.memory_budget);
            throw ConfigError(
                "memory budget too small for m_sub=" + std::to_string(m) +
                (feasible > 0 ? "; minimum feasible m_sub is " + std::to_string(feasible)
                              : "; no subset count fits this budget"));
        }
    }

    fs::create_directories(opt.workdir);
    const fs::path dir(opt.workdir);
    const fs::path manifest_path = dir / "manifest.txt";

    Manifest mf;
    if (opt.resume && fs::exists(manifest_path)) {
        mf = load_manifest(manifest_path, n, m, p);
        // detect torn state: every recorded file must exist and match its
        // latest recorded checksum
        for (const auto& [file, ck] : mf.checksums) {
            const fs::path fp = dir / file;
            if (!fs::exists(fp)) {
                throw ConfigError("checkpoint file missing: " + fp.string());
            }
            if (file_checksum(fp.string()) != mf.checksum_of(file)) {
                throw ConfigError("checkpoint file does not match its manifest checksum: " +
                                  fp.string());
            }
        }
    } else {
        std::ofstream trunc(manifest_path, std::ios::trunc);
        append_manifest(manifest_path, "KCKPT v1 " + std::to_string(n) + " " +
                                           std::to_string(m) + " " + std::to_string(p.k) + " " +
                                           std::to_string(p.lambda) + " " +
                                           std::to_string(p.seed));
    }

    if (report) {
        report->pairs_done = 0;
        report->pairs_skipped = 0;
        report->stopped_early = false;
    }
    Residency residency(report);

    auto graph_file = [&](std::uint32_t s) { return "sub_" + std::to_string(s) + ".graph"; };
    auto sample_file = [&](std::uint32_t s) { return "sub_" + std::to_string(s) + ".sample"; };

    // phase 1: subgraphs, one subset resident at a time
    for (std::uint32_t s = 0; s < m; ++s) {
        if (mf.subgraphs.count(s)) continue;
        const auto [begin, count] = contiguous_range(n, m, s);
        if (count < 2) {
            throw std::invalid_argument("external_storage_build: subset too small");
        }
        residency.load();
        const VectorSet vecs = read_vecs_range(data_path, fmt, begin, count);

        NNDescentParams np;
        np.k = std::min(p.k, count - 1);
        np.lambda = std::min(p.lambda, np.k);
        np.delta = p.delta;
        np.max_iters = p.max_iters;
        np.threads = p.threads;
        np.seed = subgraph_seed(p.seed, s);
        KnnGraph g = nn_descent_build(vecs, np, metric);
        KnnGraph sample = build_sample_graph(g, p.lambda);
        rebase_ids(g, begin);
        rebase_ids(sample, begin);

        write_graph_atomic(dir / graph_file(s), g);
        write_graph_atomic(dir / sample_file(s), sample);
        residency.unload();
        append_manifest(manifest_path,
                        "sub " + std::to_string(s) + " " + graph_file(s) + " " +
                            std::to_string(file_checksum((dir / graph_file(s)).string())) + " " +
                            sample_file(s) + " " +
                            std::to_string(file_checksum((dir / sample_file(s)).string())));
    }

    // phase 2: the pairwise schedule with two subsets resident per merge
    const std::uint32_t rounds = schedule_rounds(m);
    for (std::uint32_t iter = 1; iter <= rounds; ++iter) {
        for (std::uint32_t a = 0; a < m; ++a) {
            const std::uint32_t t = (a + iter) % m;
            const std::uint32_t lo = std::min(a, t);
            const std::uint32_t hi = std::max(a, t);
            if (2 * iter == m && a >= m / 2) continue;  // self-paired round: one pass
            if (mf.pairs.count(pair_key(iter, lo, hi))) {
                if (report) ++report->pairs_skipped;
                continue;
            }

            residency.load();
            residency.load();
            const auto [lo_begin, lo_count] = contiguous_range(n, m, lo);
            const auto [hi_begin, hi_count] = contiguous_range(n, m, hi);
            const VectorSet lo_vecs = read_vecs_range(data_path, fmt, lo_begin, lo_count);
            const VectorSet hi_vecs = read_vecs_range(data_path, fmt, hi_begin, hi_count);
            KnnGraph g_lo = read_graph((dir / graph_file(lo)).string());
            KnnGraph g_hi = read_graph((dir / graph_file(hi)).string());
            const KnnGraph s_lo = read_graph((dir / sample_file(lo)).string());
            const KnnGraph s_hi = read_graph((dir / sample_file(hi)).string());

            PairHalves halves = pair_merge(lo_vecs, hi_vecs, s_lo, s_hi, lo, hi,
                                           /*i_am_lo=*/true, p, metric);
            fold_rows(g_lo, halves.mine, p.k);
            fold_rows(g_hi, halves.theirs, p.k);
            write_graph_atomic(dir / graph_file(lo), g_lo);
            write_graph_atomic(dir / graph_file(hi), g_hi);
            residency.unload();
            residency.unload();

            append_manifest(manifest_path,
                            "pair " + std::to_string(iter) + " " + std::to_string(lo) + " " +
                                std::to_string(hi) + " " + graph_file(lo) + " " +
                                std::to_string(file_checksum((dir / graph_file(lo)).string())) +
                                " " + graph_file(hi) + " " +
                                std::to_string(file_checksum((dir / graph_file(hi)).string())));
            if (report) ++report->pairs_done;
            if (opt.stop_after_pairs >= 0 && report &&
                static_cast<int>(report->pairs_done) >= opt.stop_after_pairs) {
                report->stopped_early = true;
                return KnnGraph(0, p.k);
            }
        }
    }

    // assembly: only graph rows are loaded, no vectors
    KnnGraph out(n, p.k);
    for (std::uint32_t s = 0; s < m; ++s) {
        const auto [begin, count] = contiguous_range(n, m, s);
        KnnGraph g = read_graph((dir / graph_file(s)).string());
        if (g.n() != count) {
            throw ConfigError("checkpoint graph " + graph_file(s) + " has unexpected size");
        }
        for (std::uint32_t r = 0; r < count; ++r) {
            out.rows[begin + r].items = std::move(g.rows[r].items);
        }
    }
    return out;
}

}  // namespace knnmerge
