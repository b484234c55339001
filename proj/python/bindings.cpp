#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "knnmerge/core.hpp"
#include "knnmerge/dataset.hpp"
#include "knnmerge/distributed.hpp"
#include "knnmerge/eval.hpp"
#include "knnmerge/graph_io.hpp"
#include "knnmerge/index.hpp"
#include "knnmerge/merge.hpp"
#include "knnmerge/nn_descent.hpp"

namespace py = pybind11;
using namespace knnmerge;

namespace {

VectorSet vectors_from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr,
                             std::uint64_t id_base = 0) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-D float array");
    VectorSet vs;
    vs.n = static_cast<std::uint32_t>(arr.shape(0));
    vs.d = static_cast<std::uint32_t>(arr.shape(1));
    vs.id_base = id_base;
    vs.data.assign(arr.data(), arr.data() + static_cast<std::size_t>(vs.n) * vs.d);
    return vs;
}

py::array_t<float> vectors_to_numpy(const VectorSet& vs) {
    py::array_t<float> arr({static_cast<py::ssize_t>(vs.n), static_cast<py::ssize_t>(vs.d)});
    std::copy(vs.data.begin(), vs.data.end(), arr.mutable_data());
    return arr;
}

Metric metric_for(const VectorSet& vs, const std::string& name) {
    return {metric_kind_from_name(name), vs.d};
}

py::tuple graph_to_arrays(const KnnGraph& g) {
    // ragged rows padded with id = 0xffffffff, dist = inf
    const py::ssize_t n = g.n(), k = g.k;
    py::array_t<std::uint32_t> ids({n, static_cast<py::ssize_t>(k)});
    py::array_t<float> dists({n, static_cast<py::ssize_t>(k)});
    auto* idp = ids.mutable_data();
    auto* dsp = dists.mutable_data();
    for (py::ssize_t i = 0; i < n; ++i) {
        const auto& row = g.rows[static_cast<std::uint32_t>(i)].items;
        for (py::ssize_t t = 0; t < k; ++t) {
            const bool have = t < static_cast<py::ssize_t>(row.size());
            idp[i * k + t] = have ? row[static_cast<std::size_t>(t)].id : 0xffffffffu;
            dsp[i * k + t] = have ? row[static_cast<std::size_t>(t)].dist
                                  : std::numeric_limits<float>::infinity();
        }
    }
    return py::make_tuple(ids, dists);
}

MergeParams merge_params(std::uint32_t k, std::uint32_t lambda, double delta,
                         std::uint32_t max_iters, std::uint64_t seed, int threads,
                         bool validate) {
    MergeParams p;
    p.k = k;
    p.lambda = lambda;
    p.delta = delta;
    p.max_iters = max_iters;
    p.seed = seed;
    p.threads = threads;
    p.validate = validate;
    return p;
}

}  // namespace

PYBIND11_MODULE(_knnmerge, m) {
    m.doc() = "Approximate k-NN graph construction by subgraph merging";

    py::class_<KnnGraph>(m, "KnnGraph")
        .def_property_readonly("n", &KnnGraph::n)
        .def_readonly("k", &KnnGraph::k)
        .def("arrays", &graph_to_arrays,
             "(ids, dists) arrays of shape (n, k); absent slots hold 0xffffffff / inf")
        .def("row_ids", [](const KnnGraph& g, std::uint32_t i) {
            std::vector<std::uint32_t> ids;
            for (const auto& nb : g.rows.at(i).items) ids.push_back(nb.id);
            return ids;
        });

    py::class_<IndexGraph>(m, "IndexGraph")
        .def_readonly("entry_point", &IndexGraph::entry_point)
        .def_readonly("alpha", &IndexGraph::alpha)
        .def_readonly("max_degree", &IndexGraph::max_degree)
        .def_property_readonly("graph", [](const IndexGraph& idx) { return idx.graph; });

    m.def("synth_dataset",
          [](std::uint32_t n, std::uint32_t d, std::uint32_t clusters, std::uint64_t seed) {
              return vectors_to_numpy(synth_dataset(n, d, clusters, seed));
          },
          py::arg("n"), py::arg("d"), py::arg("clusters") = 1, py::arg("seed") = 0);

    m.def("read_vecs",
          [](const std::string& path) {
              return vectors_to_numpy(read_vecs(path, vec_format_from_path(path)));
          },
          py::arg("path"));

    m.def("write_vecs",
          [](const std::string& path, const py::array_t<float>& arr) {
              write_vecs(path, vec_format_from_path(path), vectors_from_numpy(arr));
          },
          py::arg("path"), py::arg("vectors"));

    m.def("read_graph", &read_graph, py::arg("path"));
    m.def("write_graph", &write_graph, py::arg("path"), py::arg("graph"));

    m.def("nn_descent_build",
          [](const py::array_t<float>& data, std::uint32_t k, std::uint32_t lambda, double delta,
             std::uint32_t max_iters, std::uint64_t seed, int threads,
             const std::string& metric) {
              const VectorSet vs = vectors_from_numpy(data);
              NNDescentParams p;
              p.k = k;
              p.lambda = lambda;
              p.delta = delta;
              p.max_iters = max_iters;
              p.seed = seed;
              p.threads = threads;
              return nn_descent_build(vs, p, metric_for(vs, metric));
          },
          py::arg("data"), py::arg("k"), py::arg("lambda_") = 10, py::arg("delta") = 0.001,
          py::arg("max_iters") = 30, py::arg("seed") = 0, py::arg("threads") = 0,
          py::arg("metric") = "l2sq");

    m.def("two_way_merge_full",
          [](const py::array_t<float>& c1, const py::array_t<float>& c2, const KnnGraph& g1,
             const KnnGraph& g2, std::uint32_t k, std::uint32_t lambda, double delta,
             std::uint32_t max_iters, std::uint64_t seed, int threads, bool validate,
             const std::string& metric) {
              const VectorSet a = vectors_from_numpy(c1);
              VectorSet b = vectors_from_numpy(c2);
              b.id_base = a.n;
              return two_way_merge_full(a, b, g1, g2,
                                        merge_params(k, lambda, delta, max_iters, seed, threads,
                                                     validate),
                                        metric_for(a, metric));
          },
          py::arg("c1"), py::arg("c2"), py::arg("g1"), py::arg("g2"), py::arg("k"),
          py::arg("lambda_") = 20, py::arg("delta") = 0.001, py::arg("max_iters") = 30,
          py::arg("seed") = 0, py::arg("threads") = 0, py::arg("validate") = false,
          py::arg("metric") = "l2sq");

    m.def("multi_way_merge",
          [](const std::vector<py::array_t<float>>& parts, const std::vector<KnnGraph>& graphs,
             std::uint32_t k, std::uint32_t lambda, double delta, std::uint32_t max_iters,
             std::uint64_t seed, int threads, bool validate, const std::string& metric) {
              std::vector<VectorSet> subsets;
              std::uint64_t base = 0;
              for (const auto& p : parts) {
                  subsets.push_back(vectors_from_numpy(p, base));
                  base += subsets.back().n;
              }
              if (subsets.empty()) throw std::invalid_argument("no subsets");
              return multi_way_merge(subsets, graphs,
                                     merge_params(k, lambda, delta, max_iters, seed, threads,
                                                  validate),
                                     metric_for(subsets.front(), metric));
          },
          py::arg("subsets"), py::arg("subgraphs"), py::arg("k"), py::arg("lambda_") = 20,
          py::arg("delta") = 0.001, py::arg("max_iters") = 30, py::arg("seed") = 0,
          py::arg("threads") = 0, py::arg("validate") = false, py::arg("metric") = "l2sq");

    m.def("hierarchical_merge",
          [](const std::vector<py::array_t<float>>& parts, const std::vector<KnnGraph>& graphs,
             std::uint32_t k, std::uint32_t lambda, double delta, std::uint32_t max_iters,
             std::uint64_t seed, int threads, bool validate, const std::string& metric) {
              std::vector<VectorSet> subsets;
              std::uint64_t base = 0;
              for (const auto& p : parts) {
                  subsets.push_back(vectors_from_numpy(p, base));
                  base += subsets.back().n;
              }
              if (subsets.empty()) throw std::invalid_argument("no subsets");
              return hierarchical_merge(subsets, graphs,
                                        merge_params(k, lambda, delta, max_iters, seed, threads,
                                                     validate),
                                        metric_for(subsets.front(), metric));
          },
          py::arg("subsets"), py::arg("subgraphs"), py::arg("k"), py::arg("lambda_") = 20,
          py::arg("delta") = 0.001, py::arg("max_iters") = 30, py::arg("seed") = 0,
          py::arg("threads") = 0, py::arg("validate") = false, py::arg("metric") = "l2sq");

    m.def("simulate_cluster",
          [](const py::array_t<float>& data, std::uint32_t m, std::uint32_t k,
             std::uint32_t lambda, double delta, std::uint32_t max_iters, std::uint64_t seed,
             int threads, const std::string& metric) {
              const VectorSet vs = vectors_from_numpy(data);
              return simulate_cluster(vs, m,
                                      merge_params(k, lambda, delta, max_iters, seed, threads,
                                                   false),
                                      metric_for(vs, metric));
          },
          py::arg("data"), py::arg("m"), py::arg("k"), py::arg("lambda_") = 20,
          py::arg("delta") = 0.001, py::arg("max_iters") = 30, py::arg("seed") = 0,
          py::arg("threads") = 0, py::arg("metric") = "l2sq");

    m.def("external_storage_build",
          [](const std::string& data_path, std::uint32_t m_sub, const std::string& workdir,
             std::uint32_t k, std::uint32_t lambda, std::uint64_t memory_budget, bool resume,
             double delta, std::uint32_t max_iters, std::uint64_t seed, int threads,
             const std::string& metric) {
              SpillOptions opt;
              opt.m_sub = m_sub;
              opt.workdir = workdir;
              opt.memory_budget = memory_budget;
              opt.resume = resume;
              const VectorSet probe =
                  read_vecs_range(data_path, vec_format_from_path(data_path), 0, 1);
              return external_storage_build(data_path, vec_format_from_path(data_path), opt,
                                            merge_params(k, lambda, delta, max_iters, seed,
                                                         threads, false),
                                            metric_for(probe, metric));
          },
          py::arg("data_path"), py::arg("m_sub"), py::arg("workdir"), py::arg("k"),
          py::arg("lambda_") = 20, py::arg("memory_budget") = 0, py::arg("resume") = false,
          py::arg("delta") = 0.001, py::arg("max_iters") = 30, py::arg("seed") = 0,
          py::arg("threads") = 0, py::arg("metric") = "l2sq");

    m.def("brute_force_knn",
          [](const py::array_t<float>& data, std::uint32_t K, int threads,
             const std::string& metric) {
              const VectorSet vs = vectors_from_numpy(data);
              const GroundTruth gt = brute_force_knn(vs, K, metric_for(vs, metric), threads);
              py::array_t<std::uint32_t> out(
                  {static_cast<py::ssize_t>(gt.n()), static_cast<py::ssize_t>(gt.depth)});
              std::copy(gt.ids.begin(), gt.ids.end(), out.mutable_data());
              return out;
          },
          py::arg("data"), py::arg("K"), py::arg("threads") = 0, py::arg("metric") = "l2sq");

    m.def("recall_at_k",
          [](const KnnGraph& g, const py::array_t<std::uint32_t>& gt_ids, std::uint32_t k) {
              if (gt_ids.ndim() != 2) throw std::invalid_argument("expected 2-D id array");
              GroundTruth gt;
              gt.depth = static_cast<std::uint32_t>(gt_ids.shape(1));
              gt.ids.assign(gt_ids.data(), gt_ids.data() + gt_ids.size());
              return recall_at_k(g, gt, k);
          },
          py::arg("graph"), py::arg("gt_ids"), py::arg("k"));

    m.def("incremental_build",
          [](const py::array_t<float>& data, float alpha, std::uint32_t max_degree,
             std::uint32_t ef_construction, const std::string& metric) {
              const VectorSet vs = vectors_from_numpy(data);
              DiversifyParams p;
              p.alpha = alpha;
              p.max_degree = max_degree;
              return incremental_build(vs, p, ef_construction, metric_for(vs, metric));
          },
          py::arg("data"), py::arg("alpha") = 1.0f, py::arg("max_degree") = 32,
          py::arg("ef_construction") = 128, py::arg("metric") = "l2sq");

    m.def("diversify_graph",
          [](const KnnGraph& g, const py::array_t<float>& data, float alpha,
             std::uint32_t max_degree, const std::string& metric) {
              const VectorSet vs = vectors_from_numpy(data);
              DiversifyParams p;
              p.alpha = alpha;
              p.max_degree = max_degree;
              return diversify_graph(g, p, vs, metric_for(vs, metric));
          },
          py::arg("graph"), py::arg("data"), py::arg("alpha") = 1.0f,
          py::arg("max_degree") = 64, py::arg("metric") = "l2sq");

    m.def("merge_index_graphs",
          [](const py::array_t<float>& c1, const py::array_t<float>& c2, const IndexGraph& i1,
             const IndexGraph& i2, float alpha, std::uint32_t lambda, std::uint64_t seed,
             int threads, const std::string& metric) {
              const VectorSet a = vectors_from_numpy(c1);
              VectorSet b = vectors_from_numpy(c2);
              b.id_base = a.n;
              MergeParams mp;
              mp.lambda = lambda;
              mp.seed = seed;
              mp.threads = threads;
              DiversifyParams dp;
              dp.alpha = alpha;
              dp.max_degree = i1.max_degree;
              return merge_index_graphs(a, b, i1, i2, mp, dp, metric_for(a, metric));
          },
          py::arg("c1"), py::arg("c2"), py::arg("idx1"), py::arg("idx2"), py::arg("alpha") = 1.0f,
          py::arg("lambda_") = 20, py::arg("seed") = 0, py::arg("threads") = 0,
          py::arg("metric") = "l2sq");

    m.def("greedy_search",
          [](const IndexGraph& idx, const py::array_t<float>& data,
             const py::array_t<float>& query, std::uint32_t ef, std::uint32_t k,
             const std::string& metric) {
              const VectorSet vs = vectors_from_numpy(data);
              const auto q = query.unchecked<1>();
              if (static_cast<std::uint32_t>(q.shape(0)) != vs.d) {
                  throw std::invalid_argument("query dimension mismatch");
              }
              std::vector<float> qv(q.data(0), q.data(0) + vs.d);
              const NeighborList res =
                  greedy_search(idx, qv.data(), ef, k, vs, metric_for(vs, metric));
              std::vector<std::uint32_t> ids;
              std::vector<float> dists;
              for (const auto& nb : res.items) {
                  ids.push_back(nb.id);
                  dists.push_back(nb.dist);
              }
              return py::make_tuple(ids, dists);
          },
          py::arg("index"), py::arg("data"), py::arg("query"), py::arg("ef"), py::arg("k"),
          py::arg("metric") = "l2sq");
}
