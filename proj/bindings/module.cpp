// Numpy-facing bindings over the core operations plus the config-driven CLI
// entry point. Arrays copy across the boundary in both directions.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snag/config.hpp"
#include "snag/eval.hpp"
#include "snag/fusion.hpp"
#include "snag/gmnm.hpp"
#include "snag/kgc.hpp"
#include "snag/optim.hpp"
#include "snag/rng.hpp"
#include "snag/runner.hpp"
#include "snag/tensor.hpp"

namespace py = pybind11;
using namespace snag;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DArray& arr) {
    py::buffer_info info = arr.request();
    Shape shape(info.ndim);
    int64_t n = 1;
    for (py::ssize_t i = 0; i < info.ndim; ++i) {
        shape[i] = static_cast<int>(info.shape[i]);
        n *= info.shape[i];
    }
    const double* src = static_cast<const double*>(info.ptr);
    return Tensor::from_data(shape, std::vector<Scalar>(src, src + n));
}

py::array array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(),
              static_cast<double*>(out.request().ptr));
    return out;
}

py::dict metrics_dict(const RankResult& r) {
    py::dict d;
    d["mrr"] = r.mrr;
    d["hits1"] = r.hits1;
    d["hits3"] = r.hits3;
    d["hits10"] = r.hits10;
    d["mean_rank"] = r.mean_rank;
    d["ranks"] = r.ranks;
    return d;
}

}  // namespace

PYBIND11_MODULE(snag_core, m) {
    m.doc() = "core multi-modal knowledge-graph operations";
    m.attr("__version__") = "0.1.0";

    m.def(
        "rotate_scores",
        [](const DArray& heads, const DArray& phases, const DArray& tails,
           bool l2) {
            NoGradGuard ng;
            return array_from(rotate_scores(tensor_from(heads),
                                            tensor_from(phases),
                                            tensor_from(tails), l2));
        },
        py::arg("heads"), py::arg("phases"), py::arg("tails"),
        py::arg("l2") = false,
        "Rotation distance per row; heads/tails [N, d], phases [N, d/2].");

    m.def(
        "apply_gmnm",
        [](const DArray& x, const std::vector<double>& mu,
           const std::vector<double>& phi, double rho, double eps,
           uint64_t seed) {
            NoGradGuard ng;
            return array_from(
                apply_gmnm(tensor_from(x), mu, phi, rho, eps, Rng(seed)));
        },
        py::arg("x"), py::arg("mu"), py::arg("phi"), py::arg("rho"),
        py::arg("eps"), py::arg("seed"),
        "Row masking toward the modality statistics; rho=0 or eps=0 is the "
        "identity.");

    m.def(
        "apply_dropout",
        [](const DArray& x, double p, bool inverted, uint64_t seed) {
            NoGradGuard ng;
            return array_from(
                apply_dropout(tensor_from(x), p, inverted, Rng(seed)));
        },
        py::arg("x"), py::arg("p"), py::arg("inverted") = false,
        py::arg("seed") = 0);

    m.def(
        "fuse",
        [](const DArray& h, int heads, uint64_t seed) {
            if (h.ndim() != 3)
                throw std::invalid_argument("fuse wants [B, M, d]");
            NoGradGuard ng;
            int d = static_cast<int>(h.shape(2));
            ParamStore params;
            Rng rng(seed);
            FusionWeights w =
                make_fusion_weights(params, "py", d, heads, 0, rng);
            FusionOutput f = fuse(tensor_from(h), w);
            return py::make_tuple(array_from(f.fused), array_from(f.conf));
        },
        py::arg("h"), py::arg("heads") = 1, py::arg("seed") = 0,
        "One interaction block with freshly seeded weights; returns "
        "(fused [B, M, d], confidence [B, M]).");

    m.def(
        "similarity_matrix",
        [](const DArray& emb1, const DArray& emb2, bool normalize) {
            NoGradGuard ng;
            return array_from(similarity_matrix(tensor_from(emb1),
                                                tensor_from(emb2),
                                                normalize));
        },
        py::arg("emb1"), py::arg("emb2"), py::arg("normalize") = true);

    m.def(
        "summarize_ranks",
        [](std::vector<double> ranks, std::vector<int> dirs) {
            if (dirs.empty()) dirs.assign(ranks.size(), 0);
            return metrics_dict(
                summarize_ranks(std::move(ranks), std::move(dirs)));
        },
        py::arg("ranks"), py::arg("dirs") = std::vector<int>{});

    m.def(
        "eval_alignment",
        [](const DArray& emb1, const DArray& emb2,
           const std::vector<std::pair<int, int>>& pairs, bool full_pool,
           bool normalize) {
            NoGradGuard ng;
            EaEvalOptions opt;
            opt.full_pool = full_pool;
            opt.normalize = normalize;
            return metrics_dict(
                eval_ea(tensor_from(emb1), tensor_from(emb2), pairs, opt));
        },
        py::arg("emb1"), py::arg("emb2"), py::arg("pairs"),
        py::arg("full_pool") = false, py::arg("normalize") = true);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) { return run_cli(args); },
        py::arg("args"),
        "Config-driven entry point: gen, train-kgc, train-ea, eval-kgc, "
        "eval-ea, ablate.");

    m.def("resolve_seed", [](const std::string& config_text) {
        Config c = Config::parse_string(config_text);
        return resolve_seed(c);
    });
}
