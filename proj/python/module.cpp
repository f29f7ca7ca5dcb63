// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

// Thin binding: structured values cross the boundary as JSON text and the
// Python package turns them into dicts. Traces stay native.

#include <map>
#include <string>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "moesim/config.hpp"
#include "moesim/engine.hpp"
#include "moesim/fabric.hpp"
#include "moesim/profiler.hpp"
#include "moesim/synth.hpp"
#include "moesim/trace.hpp"

namespace py = pybind11;
using namespace moesim;

namespace {

using json = nlohmann::json;

ExperimentConfig config_from(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c = experiment_from_json(j);
    c.validate();
    return c;
}

std::vector<std::vector<double>> rows(const Heatmap& h) {
    std::vector<std::vector<double>> out(h.dims);
    for (std::size_t i = 0; i < h.dims; ++i) out[i].assign(h.row(i).begin(), h.row(i).end());
    return out;
}

std::string simulate(const TraceSet& ts, const std::string& config, const std::vector<std::string>& strategies) {
    const ExperimentConfig c = config_from(config);
    std::vector<Strategy> which = c.strategies;
    if (!strategies.empty()) {
        which.clear();
        for (const auto& s : strategies) which.push_back(parse_strategy(s));
    }
    std::map<Strategy, RunReport> reports;
    {
        py::gil_scoped_release release;
        for (Strategy s : which) reports[s] = run(ts, c.sim_config(s));
    }
    json out = {{"config", to_json(c)}, {"seed", c.seed}, {"reports", json::object()}};
    for (const auto& [s, r] : reports) out["reports"][std::string(to_string(s))] = to_json(r);
    if (reports.count(Strategy::base)) out["comparison"] = to_json(compare(reports));
    return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "moesim native core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<InvariantViolation>(m, "InvariantViolation", PyExc_RuntimeError);

    py::class_<TraceSet>(m, "TraceSet")
        .def_property_readonly("num_requests", [](const TraceSet& t) { return t.requests.size(); })
        .def_property_readonly("num_tokens", &TraceSet::token_count)
        .def_property_readonly("model_json", [](const TraceSet& t) { return json(t.model).dump(); })
        .def("save", [](const TraceSet& t, const std::filesystem::path& p) { save_traces(t, p); }, py::arg("path"))
        .def("__eq__", [](const TraceSet& a, const TraceSet& b) { return a == b; });

    m.def("resolve_config", [](const std::string& text) { return to_json(config_from(text)).dump(); },
          "Validated config with every default filled in.");
    m.def("load_config", [](const std::filesystem::path& p) {
        const ExperimentConfig c = load_experiment(p);
        c.validate();
        return to_json(c).dump();
    });
    m.def("materialize_traces", [](const std::string& config) { return materialize_traces(config_from(config)); },
          "Synthetic or file-backed traces for a config.");
    m.def("load_traces", [](const std::filesystem::path& p) { return load_traces(p).traces; }, py::arg("path"));
    m.def("preset", [](const std::string& name) { return json(preset(name)).dump(); });

    m.def("cross_layer", [](const TraceSet& ts, MoeLayer layer, const std::string& phase) {
        return rows(cross_layer_heatmap(ts, layer, parse_phase_filter(phase)));
    });
    m.def("cross_token", [](const TraceSet& ts, MoeLayer layer, const std::string& phase) {
        return rows(cross_token_heatmap(ts, layer, parse_phase_filter(phase)));
    });
    m.def("coactivation", [](const TraceSet& ts, MoeLayer layer, const std::string& phase) {
        return rows(coactivation_heatmap(ts, layer, parse_phase_filter(phase)));
    });
    m.def("frequency", [](const TraceSet& ts, MoeLayer layer, const std::string& phase) {
        return expert_frequency(ts, layer, parse_phase_filter(phase)).counts;
    });
    m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman_rho(a, b); },
          "None when either side is constant.");

    m.def("simulate", &simulate, py::arg("traces"), py::arg("config"), py::arg("strategies") = std::vector<std::string>{});
}
