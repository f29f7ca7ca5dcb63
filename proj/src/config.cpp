// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/config.hpp"

#include <fstream>

namespace moesim {

std::string_view to_string(ConditionalNorm n) { return n == ConditionalNorm::per_activation ? "per_activation" : "per_selection"; }

ConditionalNorm parse_conditional_norm(std::string_view s) {
    if (s == "per_activation") return ConditionalNorm::per_activation;
    if (s == "per_selection") return ConditionalNorm::per_selection;
    throw ConfigError("unknown conditional_norm '" + std::string(s) + "' (expected per_activation|per_selection)");
}

std::string_view to_string(CoactivationNormalizer n) { return n == CoactivationNormalizer::pairwise ? "pairwise" : "exact"; }

CoactivationNormalizer parse_coactivation_normalizer(std::string_view s) {
    if (s == "pairwise") return CoactivationNormalizer::pairwise;
    if (s == "exact") return CoactivationNormalizer::exact;
    throw ConfigError("unknown coactivation_normalizer '" + std::string(s) + "' (expected pairwise|exact)");
}

void to_json(nlohmann::json& j, const SynthParams& p) {
    nlohmann::json tags = nlohmann::json::object();
    for (const auto& [k, v] : p.tag_choices) tags[k] = v;
    j = nlohmann::json{{"num_requests", p.num_requests},
                       {"tokens_per_request", p.tokens_per_request},
                       {"prefill_tokens", p.prefill_tokens},
                       {"zipf_s", p.zipf_s},
                       {"stickiness", p.stickiness},
                       {"layer_coupling", p.layer_coupling},
                       {"prefill_mirrors_decode", p.prefill_mirrors_decode},
                       {"tags", std::move(tags)}};
}

void from_json(const nlohmann::json& j, SynthParams& p) {
    SynthParams out;
    out.num_requests = j.value("num_requests", out.num_requests);
    out.tokens_per_request = j.value("tokens_per_request", out.tokens_per_request);
    out.prefill_tokens = j.value("prefill_tokens", out.prefill_tokens);
    out.zipf_s = j.value("zipf_s", out.zipf_s);
    out.stickiness = j.value("stickiness", out.stickiness);
    out.layer_coupling = j.value("layer_coupling", out.layer_coupling);
    out.prefill_mirrors_decode = j.value("prefill_mirrors_decode", out.prefill_mirrors_decode);
    if (j.contains("tags"))
        for (const auto& [k, v] : j.at("tags").items()) out.tag_choices.emplace_back(k, v.get<std::vector<std::string>>());
    p = out;
}

void ExperimentConfig::validate() const {
    model.validate();
    resolved_topology().die().validate();
    if (strategies.empty()) throw ConfigError("at least one strategy is required");
    if (synth && !traces.empty()) throw ConfigError("give either synth parameters or trace paths, not both");
    if (synth) synth->validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    cost.validate();
    predictor.validate();
    for (MoeLayer l : profile.layers)
        if (l >= model.num_moe_layers())
            throw ConfigError("profile layer " + std::to_string(l) + " out of range [0, " +
                              std::to_string(model.num_moe_layers()) + ")");
    if (profile.phases.empty()) throw ConfigError("profile: at least one phase is required");
    if (!(profile.top_fraction > 0.0 && profile.top_fraction <= 1.0))
        throw ConfigError("profile: top_fraction must be in (0, 1]");
}

void ExperimentConfig::require_trace_source() const {
    if (!synth && traces.empty()) throw ConfigError("no trace source: set \"synth\" or \"traces\"");
    if (synth && !traces.empty()) throw ConfigError("give either synth parameters or trace paths, not both");
}

MeshTopology ExperimentConfig::resolved_topology() const { return topology_from_json(topology); }

SimConfig ExperimentConfig::sim_config(Strategy s) const {
    SimConfig c;
    c.topology = resolved_topology();
    c.model = model;
    c.strategy = s;
    c.batch_size = batch_size;
    c.cost = cost;
    c.predictor = predictor;
    c.seed = seed;
    c.max_steps = max_steps;
    c.baseline_dispatch = baseline_dispatch;
    c.token_home = token_home;
    if (synth) {
        c.workload = {{"synth", *synth}};
    } else {
        nlohmann::json paths = nlohmann::json::array();
        for (const auto& t : traces) paths.push_back(t.string());
        c.workload = {{"traces", std::move(paths)}};
    }
    return c;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        ExperimentConfig c;
        if (j.contains("model")) c.model = j.at("model").get<ModelSpec>();
        if (j.contains("topology")) c.topology = j.at("topology");
        if (j.contains("strategies")) {
            c.strategies.clear();
            for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
        if (j.contains("synth")) c.synth = j.at("synth").get<SynthParams>();
        if (j.contains("traces"))
            for (const auto& t : j.at("traces")) c.traces.emplace_back(t.get<std::string>());
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        c.seed = j.value("seed", c.seed);
        if (j.contains("simulate")) {
            const auto& s = j.at("simulate");
            c.batch_size = s.value("batch_size", c.batch_size);
            c.max_steps = s.value("max_steps", c.max_steps);
            if (s.contains("baseline_dispatch"))
                c.baseline_dispatch = parse_baseline_dispatch(s.at("baseline_dispatch").get<std::string>());
            if (s.contains("token_home")) c.token_home = parse_token_home(s.at("token_home").get<std::string>());
        }
        if (j.contains("cost")) c.cost = j.at("cost").get<CostParams>();
        if (j.contains("predictor")) c.predictor = j.at("predictor").get<PredictorConfig>();
        if (j.contains("profile")) {
            const auto& p = j.at("profile");
            if (p.contains("layers")) c.profile.layers = p.at("layers").get<std::vector<MoeLayer>>();
            if (p.contains("phases")) {
                c.profile.phases.clear();
                for (const auto& s : p.at("phases")) c.profile.phases.push_back(parse_phase_filter(s.get<std::string>()));
            }
            if (p.contains("conditional_norm"))
                c.profile.conditional_norm = parse_conditional_norm(p.at("conditional_norm").get<std::string>());
            if (p.contains("coactivation_normalizer"))
                c.profile.coactivation_normalizer =
                    parse_coactivation_normalizer(p.at("coactivation_normalizer").get<std::string>());
            c.profile.top_fraction = p.value("top_fraction", c.profile.top_fraction);
            c.profile.json = p.value("json", c.profile.json);
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json strategies = nlohmann::json::array();
    for (Strategy s : c.strategies) strategies.push_back(to_string(s));
    nlohmann::json traces = nlohmann::json::array();
    for (const auto& t : c.traces) traces.push_back(t.string());
    nlohmann::json phases = nlohmann::json::array();
    for (PhaseFilter p : c.profile.phases) phases.push_back(to_string(p));
    nlohmann::json j = {
        {"model", c.model},
        {"topology", c.resolved_topology()},
        {"strategies", std::move(strategies)},
        {"traces", std::move(traces)},
        {"output_dir", c.output_dir.string()},
        {"seed", c.seed},
        {"simulate",
         {{"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"baseline_dispatch", to_string(c.baseline_dispatch)},
          {"token_home", to_string(c.token_home)}}},
        {"cost", c.cost},
        {"predictor", c.predictor},
        {"profile",
         {{"layers", c.profile.layers},
          {"phases", std::move(phases)},
          {"conditional_norm", to_string(c.profile.conditional_norm)},
          {"coactivation_normalizer", to_string(c.profile.coactivation_normalizer)},
          {"top_fraction", c.profile.top_fraction},
          {"json", c.profile.json}}},
    };
    if (c.synth) j["synth"] = *c.synth;
    return j;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return experiment_from_json(j);
}

TraceSet materialize_traces(const ExperimentConfig& c) {
    c.require_trace_source();
    if (c.synth) {
        SynthParams p = *c.synth;
        p.seed = c.seed;
        return generate_synthetic(c.model, p);
    }
    TraceSet out;
    out.model = c.model;
    for (const auto& path : c.traces) {
        auto loaded = load_traces(path, c.model);
        for (auto& r : loaded.traces.requests) out.requests.push_back(std::move(r));
    }
    return out;
}

}  // namespace moesim
