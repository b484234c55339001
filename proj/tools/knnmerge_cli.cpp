#include <chrono>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"
#include "knnmerge/distributed.hpp"
#include "knnmerge/eval.hpp"
#include "knnmerge/graph_io.hpp"
#include "knnmerge/index.hpp"
#include "knnmerge/merge.hpp"
#include "knnmerge/nn_descent.hpp"

using namespace knnmerge;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

Metric make_metric(const std::string& name, std::uint32_t dim) {
    return {metric_kind_from_name(name), dim};
}

VectorSet load_vecs(const std::string& path) {
    return read_vecs(path, vec_format_from_path(path));
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// Subsets sliced out of the full set per the map, in subset order. For
/// non-contiguous maps the subsets are anonymous (id_base 0) and the merged
/// graphs must be relabeled back with the same map.
std::vector<VectorSet> subsets_from_map(const VectorSet& full, const SubsetMap& map,
                                        bool contiguous) {
    std::vector<VectorSet> subsets(map.m);
    for (std::uint32_t s = 0; s < map.m; ++s) {
        auto& sub = subsets[s];
        sub.n = map.subset_size(s);
        sub.d = full.d;
        sub.id_base = contiguous && sub.n > 0 ? map.global_of(s, 0) : 0;
        sub.data.reserve(static_cast<std::size_t>(sub.n) * full.d);
        for (std::uint32_t r = 0; r < sub.n; ++r) {
            const float* row = full.row(map.global_of(s, r));
            sub.data.insert(sub.data.end(), row, row + full.d);
        }
    }
    return subsets;
}

bool map_is_contiguous(const SubsetMap& map) {
    std::uint32_t at = 0;
    for (std::uint32_t s = 0; s < map.m; ++s) {
        for (std::uint32_t r = 0; r < map.subset_size(s); ++r) {
            if (map.global_of(s, r) != at++) return false;
        }
    }
    return true;
}

void emit_row(const EvalRow& row) {
    write_csv_header(std::cout);
    write_csv_row(std::cout, row);
}

EvalRow graph_quality_row(const std::string& label, const KnnGraph& g, const std::string& gt_path,
                          double seconds, std::uint64_t dist_comps) {
    EvalRow row;
    row.label = label;
    row.k = g.k;
    row.seconds = seconds;
    row.dist_comps = dist_comps;
    if (!gt_path.empty()) {
        const GroundTruth gt = read_gt_ivecs(gt_path);
        if (gt.depth >= 10) row.recall10 = recall_at_k(g, gt, 10);
        if (gt.depth >= 100) row.recall100 = recall_at_k(g, gt, 100);
    }
    return row;
}

KnnGraph load_graph_any(const std::string& path) {
    if (path.size() > 6 && path.compare(path.size() - 6, 6, ".ivecs") == 0) {
        // id-only rows; ranks stand in for distances
        const GroundTruth gt = read_gt_ivecs(path);
        KnnGraph g(gt.n(), gt.depth);
        for (std::uint32_t i = 0; i < gt.n(); ++i) {
            for (std::uint32_t r = 0; r < gt.depth; ++r) {
                g.rows[i].items.push_back({gt.row(i)[r], static_cast<float>(r), false});
            }
        }
        return g;
    }
    return read_graph(path);
}

struct MergeCliArgs {
    std::string data, map_path, graphs_csv, out, gt_path, metric = "l2sq";
    MergeParams params;
    bool validate = false;
};

void add_merge_options(CLI::App* cmd, MergeCliArgs& a) {
    cmd->add_option("--data", a.data, "full dataset (.fvecs/.bvecs/.ivecs)")->required();
    cmd->add_option("--map", a.map_path, "subset map from `partition`")->required();
    cmd->add_option("--graphs", a.graphs_csv, "comma-separated subgraph files")->required();
    cmd->add_option("--out", a.out, "output graph file")->required();
    cmd->add_option("--k", a.params.k, "neighborhood size")->required();
    cmd->add_option("--lambda", a.params.lambda, "sample cap per role");
    cmd->add_option("--delta", a.params.delta, "convergence fraction");
    cmd->add_option("--max-iters", a.params.max_iters, "iteration cap");
    cmd->add_option("--seed", a.params.seed, "RNG seed");
    cmd->add_option("--threads", a.params.threads, "worker threads (1 = deterministic)");
    cmd->add_flag("--validate", a.validate, "run sampling-discipline audits");
    cmd->add_option("--gt", a.gt_path, "ground truth (.ivecs) for recall columns");
    cmd->add_option("--metric", a.metric, "l2sq | l2 | cosine");
}

struct LoadedMergeInputs {
    VectorSet full;
    SubsetMap map;
    bool contiguous = false;
    std::vector<VectorSet> subsets;
    std::vector<KnnGraph> subgraphs;
};

LoadedMergeInputs load_merge_inputs(const MergeCliArgs& a) {
    LoadedMergeInputs in;
    in.full = load_vecs(a.data);
    in.map = read_subset_map(a.map_path);
    if (in.map.n() != in.full.n) {
        throw std::invalid_argument("map covers " + std::to_string(in.map.n()) +
                                    " elements, dataset has " + std::to_string(in.full.n));
    }
    in.contiguous = map_is_contiguous(in.map);
    in.subsets = subsets_from_map(in.full, in.map, in.contiguous);
    const auto files = split_list(a.graphs_csv);
    if (files.size() != in.map.m) {
        throw std::invalid_argument("expected " + std::to_string(in.map.m) + " graph files");
    }
    for (const auto& f : files) in.subgraphs.push_back(read_graph(f));
    return in;
}

int cmd_synth(std::uint32_t n, std::uint32_t d, std::uint32_t clusters, std::uint64_t seed,
              const std::string& out) {
    const VectorSet vs = synth_dataset(n, d, clusters, seed);
    write_vecs(out, vec_format_from_path(out), vs);
    std::cerr << "wrote " << vs.n << " x " << vs.d << " vectors to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"k-NN graph construction by subgraph merging"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a Gaussian-mixture dataset");
    std::uint32_t sy_n = 20000, sy_d = 32, sy_clusters = 16;
    std::uint64_t sy_seed = 1;
    std::string sy_out;
    synth->add_option("--n", sy_n, "element count");
    synth->add_option("--d", sy_d, "dimension");
    synth->add_option("--clusters", sy_clusters, "mixture components");
    synth->add_option("--seed", sy_seed, "RNG seed");
    synth->add_option("--out", sy_out, "output .fvecs")->required();

    // partition
    auto* part = app.add_subcommand("partition", "split a dataset into m subsets");
    std::string pa_data, pa_prefix, pa_strategy = "contiguous";
    std::uint32_t pa_m = 2;
    std::uint64_t pa_seed = 0;
    part->add_option("--data", pa_data)->required();
    part->add_option("--m", pa_m, "subset count")->required();
    part->add_option("--strategy", pa_strategy, "contiguous | shuffled");
    part->add_option("--seed", pa_seed, "seed for shuffled mode");
    part->add_option("--out-prefix", pa_prefix, "prefix for part files and map")->required();

    // build-nnd
    auto* bnnd = app.add_subcommand("build-nnd", "build a subgraph with NN-Descent");
    std::string bn_data, bn_out, bn_gt, bn_metric = "l2sq";
    NNDescentParams bn_params;
    bnnd->add_option("--data", bn_data)->required();
    bnnd->add_option("--out", bn_out)->required();
    bnnd->add_option("--k", bn_params.k)->required();
    bnnd->add_option("--lambda", bn_params.lambda);
    bnnd->add_option("--delta", bn_params.delta);
    bnnd->add_option("--max-iters", bn_params.max_iters);
    bnnd->add_option("--seed", bn_params.seed);
    bnnd->add_option("--threads", bn_params.threads);
    bnnd->add_option("--gt", bn_gt, "ground truth for recall columns");
    bnnd->add_option("--metric", bn_metric);

    // merge drivers
    MergeCliArgs m2, mN, mh;
    auto* merge2 = app.add_subcommand("merge2", "two-way merge of exactly 2 subgraphs");
    add_merge_options(merge2, m2);
    auto* mergeN = app.add_subcommand("mergeN", "multi-way merge of m subgraphs at once");
    add_merge_options(mergeN, mN);
    auto* mergeH = app.add_subcommand("merge-hier", "hierarchical two-way merge of m subgraphs");
    add_merge_options(mergeH, mh);

    // gt
    auto* gt = app.add_subcommand("gt", "brute-force ground truth");
    std::string gt_data, gt_queries, gt_out, gt_metric = "l2sq";
    std::uint32_t gt_K = 100;
    int gt_threads = 0;
    gt->add_option("--data", gt_data)->required();
    gt->add_option("--queries", gt_queries, "query file; omit for self ground truth");
    gt->add_option("--K", gt_K, "ground-truth depth");
    gt->add_option("--threads", gt_threads);
    gt->add_option("--metric", gt_metric);
    gt->add_option("--out", gt_out, "output .ivecs")->required();

    // recall
    auto* rec = app.add_subcommand("recall", "recall of a graph against ground truth");
    std::string rc_graph, rc_gt, rc_label;
    rec->add_option("--graph", rc_graph, ".knng or .ivecs")->required();
    rec->add_option("--gt", rc_gt)->required();
    rec->add_option("--label", rc_label);

    // diversify
    auto* divc = app.add_subcommand("diversify", "alpha-prune a graph into an index graph");
    std::string dv_data, dv_graph, dv_out, dv_metric = "l2sq";
    DiversifyParams dv_params;
    divc->add_option("--data", dv_data)->required();
    divc->add_option("--graph", dv_graph)->required();
    divc->add_option("--alpha", dv_params.alpha);
    divc->add_option("--max-degree", dv_params.max_degree);
    divc->add_option("--metric", dv_metric);
    divc->add_option("--out", dv_out)->required();

    // build-index
    auto* bidx = app.add_subcommand("build-index", "incremental flat index build");
    std::string bi_data, bi_out, bi_metric = "l2sq";
    DiversifyParams bi_params;
    std::uint32_t bi_ef = 128;
    bidx->add_option("--data", bi_data)->required();
    bidx->add_option("--alpha", bi_params.alpha);
    bidx->add_option("--max-degree", bi_params.max_degree);
    bidx->add_option("--ef-construction", bi_ef);
    bidx->add_option("--metric", bi_metric);
    bidx->add_option("--out", bi_out)->required();

    // merge-index
    auto* midx = app.add_subcommand("merge-index", "merge two index graphs");
    std::string mi_data, mi_map, mi_indexes, mi_out, mi_metric = "l2sq";
    MergeParams mi_params;
    DiversifyParams mi_dparams;
    midx->add_option("--data", mi_data)->required();
    midx->add_option("--map", mi_map, "2-subset map")->required();
    midx->add_option("--indexes", mi_indexes, "comma-separated index files")->required();
    midx->add_option("--alpha", mi_dparams.alpha);
    midx->add_option("--lambda", mi_params.lambda);
    midx->add_option("--delta", mi_params.delta);
    midx->add_option("--max-iters", mi_params.max_iters);
    midx->add_option("--seed", mi_params.seed);
    midx->add_option("--threads", mi_params.threads);
    midx->add_option("--metric", mi_metric);
    midx->add_option("--out", mi_out)->required();

    // search-eval
    auto* seval = app.add_subcommand("search-eval", "recall/QPS sweep over ef values");
    std::string se_index, se_data, se_queries, se_gt, se_ef = "32,64,128", se_metric = "l2sq";
    std::uint32_t se_k = 10;
    seval->add_option("--index", se_index)->required();
    seval->add_option("--data", se_data)->required();
    seval->add_option("--queries", se_queries)->required();
    seval->add_option("--gt", se_gt)->required();
    seval->add_option("--ef", se_ef, "comma-separated beam widths");
    seval->add_option("--k", se_k);
    seval->add_option("--metric", se_metric);

    // cluster-sim
    auto* csim = app.add_subcommand("cluster-sim", "peer-to-peer build on an in-process cluster");
    std::string cs_data, cs_out, cs_gt, cs_metric = "l2sq";
    std::uint32_t cs_m = 2;
    MergeParams cs_params;
    csim->add_option("--data", cs_data)->required();
    csim->add_option("--m", cs_m, "node count")->required();
    csim->add_option("--k", cs_params.k)->required();
    csim->add_option("--lambda", cs_params.lambda);
    csim->add_option("--delta", cs_params.delta);
    csim->add_option("--max-iters", cs_params.max_iters);
    csim->add_option("--seed", cs_params.seed);
    csim->add_option("--threads", cs_params.threads);
    csim->add_option("--gt", cs_gt);
    csim->add_option("--metric", cs_metric);
    csim->add_option("--out", cs_out)->required();

    // node
    auto* node = app.add_subcommand("node", "one peer of a TCP cluster build");
    std::string nd_data, nd_out, nd_peers, nd_metric = "l2sq";
    std::uint32_t nd_id = 0;
    int nd_timeout = 300;
    MergeParams nd_params;
    node->add_option("--node-id", nd_id)->required();
    node->add_option("--peers", nd_peers, "comma-separated host:port for nodes 0..m-1")
        ->required();
    node->add_option("--data", nd_data)->required();
    node->add_option("--k", nd_params.k)->required();
    node->add_option("--lambda", nd_params.lambda);
    node->add_option("--delta", nd_params.delta);
    node->add_option("--max-iters", nd_params.max_iters);
    node->add_option("--seed", nd_params.seed);
    node->add_option("--threads", nd_params.threads);
    node->add_option("--timeout", nd_timeout, "peer receive timeout, seconds");
    node->add_option("--metric", nd_metric);
    node->add_option("--out", nd_out)->required();

    // spill-build
    auto* spill = app.add_subcommand("spill-build", "single-node build with external storage");
    std::string sp_data, sp_out, sp_workdir, sp_gt, sp_metric = "l2sq";
    SpillOptions sp_opt;
    MergeParams sp_params;
    spill->add_option("--data", sp_data)->required();
    spill->add_option("--m-sub", sp_opt.m_sub, "subset count")->required();
    spill->add_option("--workdir", sp_opt.workdir)->required();
    spill->add_option("--memory-budget", sp_opt.memory_budget, "bytes; 0 = unlimited");
    spill->add_flag("--resume", sp_opt.resume, "resume from the checkpoint manifest");
    spill->add_option("--stop-after", sp_opt.stop_after_pairs,
                      "stop after N pair merges (testing)");
    spill->add_option("--k", sp_params.k)->required();
    spill->add_option("--lambda", sp_params.lambda);
    spill->add_option("--delta", sp_params.delta);
    spill->add_option("--max-iters", sp_params.max_iters);
    spill->add_option("--seed", sp_params.seed);
    spill->add_option("--threads", sp_params.threads);
    spill->add_option("--gt", sp_gt);
    spill->add_option("--metric", sp_metric);
    spill->add_option("--out", sp_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(sy_n, sy_d, sy_clusters, sy_seed, sy_out);
        }

        if (part->parsed()) {
            const VectorSet full = load_vecs(pa_data);
            const auto strategy = pa_strategy == "shuffled" ? PartitionStrategy::Shuffled
                                                            : PartitionStrategy::Contiguous;
            if (pa_strategy != "shuffled" && pa_strategy != "contiguous") {
                throw std::invalid_argument("unknown strategy: " + pa_strategy);
            }
            auto [subsets, map] = partition(full, pa_m, strategy, pa_seed);
            for (std::uint32_t s = 0; s < map.m; ++s) {
                char name[32];
                std::snprintf(name, sizeof name, "_%03u.fvecs", s);
                write_vecs(pa_prefix + name, VecFormat::Fvecs, subsets[s]);
            }
            write_subset_map(pa_prefix + ".map", map);
            std::cerr << "wrote " << map.m << " subsets and " << pa_prefix << ".map\n";
            return 0;
        }

        if (bnnd->parsed()) {
            const VectorSet data = load_vecs(bn_data);
            const Metric metric = make_metric(bn_metric, data.d);
            NNDescentStats stats;
            Timer timer;
            const KnnGraph g = nn_descent_build(data, bn_params, metric, &stats);
            const double secs = timer.seconds();
            write_graph(bn_out, g);
            emit_row(graph_quality_row("build-nnd", g, bn_gt, secs, stats.total_dist_comps));
            return 0;
        }

        auto run_merge_cmd = [&](const MergeCliArgs& a, const std::string& label) {
            const LoadedMergeInputs in = load_merge_inputs(a);
            MergeParams params = a.params;
            params.validate = a.validate;
            const Metric metric = make_metric(a.metric, in.full.d);
            Timer timer;
            KnnGraph merged;
            std::uint64_t comps = 0;
            if (label == "merge2") {
                if (in.map.m != 2) throw std::invalid_argument("merge2 needs a 2-subset map");
                MergeStats stats;
                merged = two_way_merge_full(in.subsets[0], in.subsets[1], in.subgraphs[0],
                                            in.subgraphs[1], params, metric, &stats);
                comps = stats.total_dist_comps;
                if (stats.audit_violations > 0) {
                    throw std::runtime_error("merge audit reported " +
                                             std::to_string(stats.audit_violations) +
                                             " violations");
                }
            } else if (label == "mergeN") {
                MergeStats stats;
                merged = multi_way_merge(in.subsets, in.subgraphs, params, metric, &stats);
                comps = stats.total_dist_comps;
                if (stats.audit_violations > 0) {
                    throw std::runtime_error("merge audit reported " +
                                             std::to_string(stats.audit_violations) +
                                             " violations");
                }
            } else {
                HierarchicalStats stats;
                merged = hierarchical_merge(in.subsets, in.subgraphs, params, metric, &stats);
                for (const auto& cs : stats.per_call) comps += cs.total_dist_comps;
            }
            const double secs = timer.seconds();
            if (!in.contiguous) merged = relabel_concat_to_global(merged, in.map);
            write_graph(a.out, merged);
            emit_row(graph_quality_row(label, merged, a.gt_path, secs, comps));
            return 0;
        };
        if (merge2->parsed()) return run_merge_cmd(m2, "merge2");
        if (mergeN->parsed()) return run_merge_cmd(mN, "mergeN");
        if (mergeH->parsed()) return run_merge_cmd(mh, "merge-hier");

        if (gt->parsed()) {
            const VectorSet data = load_vecs(gt_data);
            const Metric metric = make_metric(gt_metric, data.d);
            GroundTruth truth;
            if (gt_queries.empty()) {
                truth = brute_force_knn(data, gt_K, metric, gt_threads);
            } else {
                const VectorSet queries = load_vecs(gt_queries);
                truth = brute_force_knn(data, queries, gt_K, metric, gt_threads);
            }
            write_gt_ivecs(gt_out, truth);
            std::cerr << "wrote depth-" << truth.depth << " ground truth for " << truth.n()
                      << " targets to " << gt_out << "\n";
            return 0;
        }

        if (rec->parsed()) {
            const KnnGraph g = load_graph_any(rc_graph);
            const EvalRow row = graph_quality_row(rc_label.empty() ? rc_graph : rc_label, g,
                                                  rc_gt, 0.0, 0);
            emit_row(row);
            return 0;
        }

        if (divc->parsed()) {
            const VectorSet data = load_vecs(dv_data);
            const Metric metric = make_metric(dv_metric, data.d);
            const KnnGraph g = read_graph(dv_graph);
            const IndexGraph idx = diversify_graph(g, dv_params, data, metric);
            write_index(dv_out, idx);
            std::cerr << "wrote index graph to " << dv_out << " (+.meta)\n";
            return 0;
        }

        if (bidx->parsed()) {
            const VectorSet data = load_vecs(bi_data);
            const Metric metric = make_metric(bi_metric, data.d);
            Timer timer;
            const IndexGraph idx = incremental_build(data, bi_params, bi_ef, metric);
            std::cerr << "built index in " << timer.seconds() << " s\n";
            write_index(bi_out, idx);
            return 0;
        }

        if (midx->parsed()) {
            const VectorSet full = load_vecs(mi_data);
            const SubsetMap map = read_subset_map(mi_map);
            if (map.m != 2) throw std::invalid_argument("merge-index needs a 2-subset map");
            if (!map_is_contiguous(map)) {
                throw std::invalid_argument("merge-index needs a contiguous map");
            }
            const auto files = split_list(mi_indexes);
            if (files.size() != 2) throw std::invalid_argument("expected 2 index files");
            const IndexGraph idx1 = read_index(files[0]);
            const IndexGraph idx2 = read_index(files[1]);
            const auto subsets = subsets_from_map(full, map, true);
            const Metric metric = make_metric(mi_metric, full.d);
            const IndexGraph merged = merge_index_graphs(subsets[0], subsets[1], idx1, idx2,
                                                         mi_params, mi_dparams, metric);
            write_index(mi_out, merged);
            std::cerr << "wrote merged index to " << mi_out << " (+.meta)\n";
            return 0;
        }

        if (seval->parsed()) {
            const VectorSet data = load_vecs(se_data);
            const VectorSet queries = load_vecs(se_queries);
            const Metric metric = make_metric(se_metric, data.d);
            const IndexGraph idx = read_index(se_index);
            const GroundTruth truth = read_gt_ivecs(se_gt);
            std::vector<std::uint32_t> efs;
            for (const auto& e : split_list(se_ef)) {
                efs.push_back(static_cast<std::uint32_t>(std::stoul(e)));
            }
            const auto rows = eval_search(idx, data, queries, truth, efs, se_k, metric);
            write_csv_header(std::cout);
            for (const auto& row : rows) write_csv_row(std::cout, row);
            return 0;
        }

        if (csim->parsed()) {
            const VectorSet full = load_vecs(cs_data);
            const Metric metric = make_metric(cs_metric, full.d);
            Timer timer;
            const KnnGraph g = simulate_cluster(full, cs_m, cs_params, metric);
            const double secs = timer.seconds();
            write_graph(cs_out, g);
            emit_row(graph_quality_row("cluster-sim-m" + std::to_string(cs_m), g, cs_gt, secs, 0));
            return 0;
        }

        if (node->parsed()) {
            const VectorSet full = load_vecs(nd_data);
            const Metric metric = make_metric(nd_metric, full.d);
            std::vector<TcpPeer> peers;
            for (const auto& hp : split_list(nd_peers)) {
                const auto colon = hp.rfind(':');
                if (colon == std::string::npos) {
                    throw std::invalid_argument("peer must be host:port, got " + hp);
                }
                peers.push_back(
                    {hp.substr(0, colon),
                     static_cast<std::uint16_t>(std::stoul(hp.substr(colon + 1)))});
            }
            if (nd_id >= peers.size()) throw std::invalid_argument("node-id out of range");
            TcpTransport transport(nd_id, peers, nd_timeout);
            NodeConfig cfg;
            cfg.node_id = nd_id;
            cfg.m = static_cast<std::uint32_t>(peers.size());
            cfg.params = nd_params;
            cfg.metric = metric;
            cfg.transport = &transport;
            Timer timer;
            const KnnGraph g = run_node(cfg, full);
            const double secs = timer.seconds();
            write_graph(nd_out, g);
            emit_row(graph_quality_row("node-" + std::to_string(nd_id), g, "", secs, 0));
            return 0;
        }

        if (spill->parsed()) {
            const Metric probe_metric = make_metric(
                sp_metric, read_vecs_range(sp_data, vec_format_from_path(sp_data), 0, 1).d);
            SpillReport report;
            Timer timer;
            const KnnGraph g = external_storage_build(sp_data, vec_format_from_path(sp_data),
                                                      sp_opt, sp_params, probe_metric, &report);
            const double secs = timer.seconds();
            if (report.stopped_early) {
                std::cerr << "stopped after " << report.pairs_done
                          << " pair merges (checkpointed)\n";
                return 0;
            }
            write_graph(sp_out, g);
            std::cerr << "peak resident subsets: " << report.max_resident_subsets << "\n";
            emit_row(graph_quality_row("spill-m" + std::to_string(sp_opt.m_sub), g, sp_gt, secs,
                                       0));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
