#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "clinfuse/errors.hpp"
#include "clinfuse/pipeline.hpp"

namespace py = pybind11;
using namespace clinfuse;

namespace {

// nlohmann::json -> Python object via the json module.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict pipeline_summary(const py::object& config, const std::filesystem::path& base_dir) {
    const auto cfg = config_from_json(config.is_none() ? nlohmann::json::object() : from_python(config), base_dir);
    PipelineRun run;
    {
        py::gil_scoped_release release;
        run = run_pipeline(cfg);
    }
    py::dict out;
    out["metrics"] = to_python(nlohmann::json(run.test.report));
    out["m1_failures"] = run.m1.failures.size();
    out["communities"] = run.kg.partition.community_count();
    out["test_visits"] = run.test.keys.size();
    out["leakage_clean"] = audit_access(*run.log, run.data.split).clean();
    std::vector<std::string> keys;
    for (const auto& k : run.test.keys) keys.push_back(k.str());
    out["test_keys"] = keys;
    out["test_scores"] = run.test.scores;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Clinical two-stage fusion pipeline bindings";
    m.attr("__version__") = std::string(kVersion);

    py::register_exception<Error>(m, "Error");
    py::register_exception<MissingPrediction>(m, "MissingPrediction", PyExc_ValueError);
    py::register_exception<AmbiguousPrediction>(m, "AmbiguousPrediction", PyExc_ValueError);

    m.def("auroc", [](const std::vector<int>& y, const std::vector<double>& s) { return auroc(y, s); },
          py::arg("labels"), py::arg("scores"));
    m.def("auprc", [](const std::vector<int>& y, const std::vector<double>& s) { return auprc(y, s); },
          py::arg("labels"), py::arg("scores"));
    m.def(
        "youden_threshold",
        [](const std::vector<int>& y, const std::vector<double>& s) {
            const auto r = youden_threshold(y, s);
            return py::make_tuple(r.threshold, r.j);
        },
        py::arg("labels"), py::arg("scores"), "Returns (threshold, J).");
    m.def(
        "evaluate_scores",
        [](const std::vector<int>& y, const std::vector<double>& s, std::optional<double> threshold) {
            return to_python(nlohmann::json(evaluate_scores(y, s, threshold)));
        },
        py::arg("labels"), py::arg("scores"), py::arg("threshold") = py::none());
    m.def(
        "wbce",
        [](const std::vector<int>& y, const std::vector<double>& p, double w0, double w1) { return wbce(y, p, w0, w1); },
        py::arg("labels"), py::arg("probabilities"), py::arg("w0"), py::arg("w1"));

    m.def(
        "parse_llm_output",
        [](const std::string& raw) {
            const auto out = parse_llm_output(raw);
            return py::make_tuple(out.label, out.reasoning);
        },
        py::arg("text"), "Returns (label, reasoning).");

    m.def(
        "leiden",
        [](std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges, double resolution,
           std::uint64_t seed) {
            const auto g = WeightedGraph::from_edges(n, edges);
            LeidenOptions opt;
            opt.resolution = resolution;
            opt.seed = seed;
            const auto p = leiden_partition(g, opt);
            return py::make_tuple(p.community_of, p.quality);
        },
        py::arg("n_nodes"), py::arg("edges"), py::arg("resolution") = 1.0, py::arg("seed") = 42,
        "Returns (community per node, modularity).");
    m.def(
        "modularity",
        [](std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges,
           const std::vector<std::size_t>& communities, double resolution) {
            return modularity(WeightedGraph::from_edges(n, edges), communities, resolution);
        },
        py::arg("n_nodes"), py::arg("edges"), py::arg("communities"), py::arg("resolution") = 1.0);

    m.def("hash_embed", [](const std::string& text, std::size_t dim) { return hash_embed(text, dim).values; },
          py::arg("text"), py::arg("dim"));
    m.def(
        "comorbidity_flags",
        [](const std::vector<std::string>& codes) {
            const auto f = comorbidity_flags(codes);
            py::dict out;
            const auto names = ComorbidityFlags::names();
            for (std::size_t i = 0; i < names.size(); ++i) out[py::str(std::string(names[i]))] = f.counts[i];
            return out;
        },
        py::arg("icd_codes"), "Per-category code counts.");

    m.def("run_pipeline", &pipeline_summary, py::arg("config") = py::none(), py::arg("base_dir") = ".",
          "Runs datagen, KG, first stage and second stage in memory with the mock client.");
}
